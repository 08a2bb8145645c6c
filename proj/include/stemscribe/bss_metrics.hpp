#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stemscribe/error.hpp"

// Energy-ratio separation metrics. All scale-invariant quantities use the
// optimal projection scale alpha = <est, ref> / ||ref||^2.
namespace stemscribe::bss {

// Infinite ratios are clamped to this magnitude so reports stay finite.
inline constexpr double kInfinityDb = 300.0;

inline bool is_pos_inf(double db) { return db >= kInfinityDb; }
inline bool is_neg_inf(double db) { return db <= -kInfinityDb; }
inline bool is_sentinel(double db) { return is_pos_inf(db) || is_neg_inf(db); }

using Signal = std::span<const double>;

namespace detail {

using Real = long double;

inline Real dot(Signal a, Signal b) {
  Real acc = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) acc += Real(a[i]) * Real(b[i]);
  return acc;
}

inline double ratio_db(Real num, Real den) {
  if (num <= 0.0L) return -kInfinityDb;
  if (den <= 0.0L) return kInfinityDb;
  const double db = static_cast<double>(10.0L * std::log10(num / den));
  return std::clamp(db, -kInfinityDb, kInfinityDb);
}

inline void check_pair(Signal ref, Signal est) {
  if (ref.size() != est.size())
    throw Error(ErrorCode::kShapeMismatch,
                "reference has " + std::to_string(ref.size()) +
                    " samples, estimate " + std::to_string(est.size()));
  if (dot(ref, ref) == 0.0L)
    throw Error(ErrorCode::kZeroReference, "reference is all zeros");
}

inline Real alpha(Signal ref, Signal est) { return dot(est, ref) / dot(ref, ref); }

// ||a*ref - est||^2
inline Real scaled_residual(Signal ref, Signal est, Real a) {
  Real acc = 0.0L;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const Real d = a * Real(ref[i]) - Real(est[i]);
    acc += d * d;
  }
  return acc;
}

// Solves G c = b by Gaussian elimination with partial pivoting. Returns
// nullopt when G is numerically singular.
inline std::optional<std::vector<Real>> solve(std::vector<std::vector<Real>> g,
                                              std::vector<Real> b) {
  const std::size_t n = b.size();
  Real scale = 0.0L;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(g[i][i]));
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(g[r][col]) > std::abs(g[piv][col])) piv = r;
    if (std::abs(g[piv][col]) <= 1e-12L * scale) return std::nullopt;
    std::swap(g[piv], g[col]);
    std::swap(b[piv], b[col]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const Real f = g[r][col] / g[col][col];
      for (std::size_t c = col; c < n; ++c) g[r][c] -= f * g[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<Real> x(n);
  for (std::size_t i = n; i-- > 0;) {
    Real acc = b[i];
    for (std::size_t c = i + 1; c < n; ++c) acc -= g[i][c] * x[c];
    x[i] = acc / g[i][i];
  }
  return x;
}

}  // namespace detail

// 10 log10(||s||^2 / ||s - est||^2)
inline double snr(Signal ref, Signal est) {
  detail::check_pair(ref, est);
  return detail::ratio_db(detail::dot(ref, ref), detail::scaled_residual(ref, est, 1.0L));
}

// 10 log10(||a s||^2 / ||a s - est||^2)
inline double si_sdr(Signal ref, Signal est) {
  detail::check_pair(ref, est);
  const auto a = detail::alpha(ref, est);
  if (a == 0.0L) return -kInfinityDb;
  return detail::ratio_db(a * a * detail::dot(ref, ref),
                          detail::scaled_residual(ref, est, a));
}

// 10 log10(||a s||^2 / ||s - est||^2)
inline double sd_sdr(Signal ref, Signal est) {
  detail::check_pair(ref, est);
  const auto a = detail::alpha(ref, est);
  return detail::ratio_db(a * a * detail::dot(ref, ref),
                          detail::scaled_residual(ref, est, 1.0L));
}

// 10 log10(||a s||^2 / ||a s - s||^2) = 10 log10(a^2 / (a - 1)^2)
inline double srr(Signal ref, Signal est) {
  detail::check_pair(ref, est);
  const auto a = detail::alpha(ref, est);
  return detail::ratio_db(a * a, (a - 1.0L) * (a - 1.0L));
}

struct EvalPair {
  std::vector<double> reference;
  std::vector<double> estimate;
  std::vector<std::vector<double>> other_references;
};

struct Decomposition {
  double si_sir = 0.0;
  double si_sar = 0.0;
};

// est = a s + e_interf + e_artif, with e_interf the projection of the
// residual onto span{reference, other references}.
inline Decomposition interference_decomposition(const EvalPair& pair) {
  using detail::Real;
  const Signal ref = pair.reference, est = pair.estimate;
  detail::check_pair(ref, est);
  std::vector<Signal> basis{ref};
  for (const auto& o : pair.other_references) {
    if (o.size() != ref.size())
      throw Error(ErrorCode::kShapeMismatch, "other reference length differs");
    basis.emplace_back(o);
  }
  const Real a = detail::alpha(ref, est);
  std::vector<double> resid(est.size());
  for (std::size_t i = 0; i < est.size(); ++i)
    resid[i] = static_cast<double>(Real(est[i]) - a * Real(ref[i]));

  const std::size_t k = basis.size();
  std::vector<std::vector<Real>> gram(k, std::vector<Real>(k));
  std::vector<Real> rhs(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) gram[i][j] = detail::dot(basis[i], basis[j]);
    rhs[i] = detail::dot(resid, basis[i]);
  }
  const auto coef = detail::solve(gram, rhs);
  if (!coef) throw Error(ErrorCode::kDegenerateReferences, "references are linearly dependent");

  Real interf = 0.0L, artif = 0.0L;
  for (std::size_t n = 0; n < est.size(); ++n) {
    Real p = 0.0L;
    for (std::size_t i = 0; i < k; ++i) p += (*coef)[i] * Real(basis[i][n]);
    interf += p * p;
    const Real r = Real(resid[n]) - p;
    artif += r * r;
  }
  const Real target = a * a * detail::dot(ref, ref);
  return {detail::ratio_db(target, interf), detail::ratio_db(target, artif)};
}

inline double si_sir(const EvalPair& pair) { return interference_decomposition(pair).si_sir; }
inline double si_sar(const EvalPair& pair) { return interference_decomposition(pair).si_sar; }

// est-metric minus mixture-metric. A +inf estimate stays +inf; matching
// sentinels cancel to 0.
inline double improvement(double est_db, double mix_db) {
  if (is_pos_inf(est_db)) return is_pos_inf(mix_db) ? 0.0 : kInfinityDb;
  if (is_neg_inf(est_db)) return is_neg_inf(mix_db) ? 0.0 : -kInfinityDb;
  if (is_pos_inf(mix_db)) return -kInfinityDb;
  if (is_neg_inf(mix_db)) return kInfinityDb;
  return est_db - mix_db;
}

struct Improvements {
  double snri = 0.0;
  double sd_sdri = 0.0;
  double si_sdri = 0.0;
};

inline Improvements improvements(Signal mixture, Signal ref, Signal est) {
  return {improvement(snr(ref, est), snr(ref, mixture)),
          improvement(sd_sdr(ref, est), sd_sdr(ref, mixture)),
          improvement(si_sdr(ref, est), si_sdr(ref, mixture))};
}

struct MetricReport {
  double snr = 0.0;
  double snri = 0.0;
  double sd_sdr = 0.0;
  double sd_sdri = 0.0;
  double si_sdr = 0.0;
  double si_sdri = 0.0;
  double srr = 0.0;
  double si_sir = 0.0;
  double si_sar = 0.0;

  // Ordered key/value view; key names are the report contract.
  std::array<std::pair<const char*, double>, 9> fields() const {
    return {{{"snr", snr},
             {"snri", snri},
             {"sd_sdr", sd_sdr},
             {"sd_sdri", sd_sdri},
             {"si_sdr", si_sdr},
             {"si_sdri", si_sdri},
             {"srr", srr},
             {"si_sir", si_sir},
             {"si_sar", si_sar}}};
  }

  // Names of metrics that hit the infinity clamp.
  std::vector<std::string> clamped() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : fields())
      if (is_sentinel(v)) out.emplace_back(k);
    return out;
  }
};

// Full report. Without other_references the residual is attributed entirely
// to interference-free artifacts: si_sir is +inf and si_sar equals si_sdr.
inline MetricReport evaluate(const EvalPair& pair, Signal mixture) {
  const Signal ref = pair.reference, est = pair.estimate;
  MetricReport r;
  r.snr = snr(ref, est);
  r.sd_sdr = sd_sdr(ref, est);
  r.si_sdr = si_sdr(ref, est);
  r.srr = srr(ref, est);
  const auto imp = improvements(mixture, ref, est);
  r.snri = imp.snri;
  r.sd_sdri = imp.sd_sdri;
  r.si_sdri = imp.si_sdri;
  const auto d = interference_decomposition(pair);
  r.si_sir = d.si_sir;
  r.si_sar = d.si_sar;
  return r;
}

}  // namespace stemscribe::bss
