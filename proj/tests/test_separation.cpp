#include "stemscribe/separation.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <random>

#include "stemscribe/bss_metrics.hpp"
#include "stemscribe/nn/grad_check.hpp"
#include "stemscribe/synthetic.hpp"
#include "test_util.hpp"

using namespace stemscribe;
using namespace stemscribe::separation;

namespace {

SourceSet random_set(std::uint64_t seed, std::size_t n = 1000, int rate = 8000) {
  SourceSet s;
  auto stems = s.stems();
  for (std::size_t k = 0; k < 4; ++k)
    *stems[k] = Waveform(testutil::white_noise(n, seed * 10 + k), rate);
  return s;
}

Mask random_mask(std::size_t frames, std::size_t bins, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mask m(frames, bins, 0.0);
  for (double& v : m.values.data) v = u(rng);
  return m;
}

double interior_rel_error(const std::vector<double>& a, const std::vector<double>& b,
                          std::size_t margin) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = margin; i + margin < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST(SumAccompaniment, Examples) {
  SourceSet s;
  s.vocals = Waveform(std::vector<double>{5.0, 5.0}, 8000);
  s.bass = Waveform(std::vector<double>{1.0, 0.0}, 8000);
  s.drums = Waveform(std::vector<double>{0.0, 1.0}, 8000);
  s.other = Waveform(std::vector<double>{1.0, 1.0}, 8000);
  EXPECT_EQ(sum_accompaniment(s).mono(), (std::vector<double>{2.0, 2.0}));

  s.bass = s.drums = s.other = Waveform(std::vector<double>{0.0, 0.0}, 8000);
  EXPECT_EQ(sum_accompaniment(s).mono(), (std::vector<double>{0.0, 0.0}));

  s.other = Waveform(std::vector<double>{0.0}, 8000);
  EXPECT_THROW(sum_accompaniment(s), Error);
}

TEST(SumAccompaniment, ReconstructsConstructedMixture) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SourceSet s = random_set(seed);
    std::vector<double> mixture(1000);
    for (std::size_t i = 0; i < mixture.size(); ++i)
      mixture[i] = s.vocals.mono()[i] + s.bass.mono()[i] + s.drums.mono()[i] + s.other.mono()[i];
    const Waveform acc = sum_accompaniment(s);
    for (std::size_t i = 0; i < mixture.size(); ++i)
      EXPECT_NEAR(s.vocals.mono()[i] + acc.mono()[i], mixture[i], 1e-6);
  }
}

TEST(Remix, UnitAndZeroGains) {
  const SourceSet s = random_set(1);
  const Remix unit = remix({s}, Gains{}, 7);
  const Waveform sum = sum_mixture(s);
  EXPECT_EQ(unit.mixture.mono(), sum.mono());

  const Remix zero = remix({s}, Gains{0.0, 0.0, 0.0, 0.0}, 7);
  for (double v : zero.mixture.mono()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(remix({}, std::nullopt, 1), Error);
}

TEST(Remix, DeterministicAndConsistent) {
  const std::vector<SourceSet> sets{random_set(1), random_set(2), random_set(3)};
  const Remix a = remix(sets, std::nullopt, 42);
  const Remix b = remix(sets, std::nullopt, 42);
  EXPECT_EQ(a.mixture.mono(), b.mixture.mono());
  const Remix c = remix(sets, std::nullopt, 43);
  EXPECT_NE(a.mixture.mono(), c.mixture.mono());

  // mixture is exactly the sum of targets, and each target is a scaled stem
  // from one of the sets with gain in [0.5, 1.25].
  for (std::size_t i = 0; i < a.mixture.length(); ++i) {
    const double s = a.targets.vocals.mono()[i] + a.targets.bass.mono()[i] +
                     a.targets.drums.mono()[i] + a.targets.other.mono()[i];
    EXPECT_EQ(a.mixture.mono()[i], s);
  }
  const auto targets = a.targets.stems();
  for (std::size_t k = 0; k < 4; ++k) {
    bool found = false;
    for (const auto& set : sets) {
      const double g = targets[k]->mono()[0] / set.stems()[k]->mono()[0];
      bool all = g >= 0.5 && g <= 1.25;
      for (std::size_t i = 0; all && i < 1000; ++i)
        all = std::abs(targets[k]->mono()[i] - g * set.stems()[k]->mono()[i]) < 1e-12;
      found = found || all;
    }
    EXPECT_TRUE(found) << k;
  }
}

TEST(ApplyMask, OnesZerosAndComplement) {
  const Waveform w(testutil::white_noise(4000, 5), 8000);
  const ComplexSpectrogram s = stft(w, StftConfig{256, 64});
  const auto ones = apply_mask(Mask(s.frames(), s.num_bins(), 1.0), s);
  EXPECT_EQ(ones.bins.data, s.bins.data);
  const auto zeros = apply_mask(Mask(s.frames(), s.num_bins(), 0.0), s);
  for (const auto& c : zeros.bins.data) EXPECT_EQ(c, cplx(0.0));

  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Mask m = random_mask(s.frames(), s.num_bins(), seed);
    const auto a = apply_mask(m, s);
    const auto b = apply_mask(m.complement(), s);
    for (std::size_t i = 0; i < s.bins.data.size(); ++i)
      ASSERT_LE(std::abs(a.bins.data[i] + b.bins.data[i] - s.bins.data[i]), 1e-9);
  }
  EXPECT_THROW(apply_mask(Mask(1, 1, 1.0), s), Error);
}

TEST(ApplyMask, PreservesPhase) {
  const Waveform w(testutil::white_noise(2000, 6), 8000);
  const ComplexSpectrogram s = stft(w, StftConfig{256, 64});
  const auto half = apply_mask(Mask(s.frames(), s.num_bins(), 0.3), s);
  for (std::size_t i = 0; i < s.bins.data.size(); ++i)
    if (std::abs(s.bins.data[i]) > 1e-9)
      EXPECT_NEAR(std::arg(half.bins.data[i]), std::arg(s.bins.data[i]), 1e-12);
}

TEST(IdealRatioMask, Examples) {
  MagnitudeSpectrogram t(1, 4), r(1, 4);
  t.data = {3.0, 2.0, 5.0, 0.0};
  r.data = {1.0, 2.0, 0.0, 0.0};
  const Mask m = ideal_ratio_mask(t, r);
  EXPECT_EQ(m.values.data, (std::vector<double>{0.75, 0.5, 1.0, 0.0}));
  EXPECT_THROW(ideal_ratio_mask(t, MagnitudeSpectrogram(2, 4)), Error);
}

TEST(Separate, ForcedMasksAndLinearity) {
  const int rate = 8000;
  const Waveform mix(testutil::white_noise(4000, 7), rate);
  const StftConfig cfg{256, 64};
  const ComplexSpectrogram spec = stft(mix, cfg);

  const auto ones = separate_with_mask(spec, Mask(spec.frames(), spec.num_bins(), 1.0));
  EXPECT_LT(interior_rel_error(ones.vocals.mono(), mix.mono(), 256), 1e-9);
  for (double v : ones.accompaniment.mono()) EXPECT_EQ(v, 0.0);

  const auto zeros = separate_with_mask(spec, Mask(spec.frames(), spec.num_bins(), 0.0));
  for (double v : zeros.vocals.mono()) EXPECT_EQ(v, 0.0);

  SeparatorModel model(SeparatorConfig{cfg.num_bins(), 1, 8});
  model.init(3);
  const auto out = separate(mix, model, cfg);
  ASSERT_EQ(out.vocals.length(), mix.length());
  std::vector<double> sum(mix.length());
  for (std::size_t i = 0; i < sum.size(); ++i)
    sum[i] = out.vocals.mono()[i] + out.accompaniment.mono()[i];
  EXPECT_LT(interior_rel_error(sum, mix.mono(), 256), 1e-6);
  for (double v : out.mask.values.data) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Separate, OracleMaskOnToneAndNoise) {
  const auto clip = synthetic::tone_noise_clip(11, 8000, 8000);
  const StftConfig cfg{512, 128};
  const ComplexSpectrogram spec = stft(clip.mixture, cfg);
  const Mask irm =
      ideal_ratio_mask(stft(clip.tone, cfg).magnitude(), stft(clip.noise, cfg).magnitude());
  const auto out = separate_with_mask(spec, irm);
  const double sdr = bss::si_sdr(clip.tone.mono(), out.vocals.mono());
  const auto imp = bss::improvements(clip.mixture.mono(), clip.tone.mono(), out.vocals.mono());
  EXPECT_GT(sdr, 10.0);
  EXPECT_GT(imp.si_sdri, 10.0);
  EXPECT_GT(imp.snri, 10.0);
}

TEST(SeparatorModel, MaskRangeAndShapeErrors) {
  SeparatorModel model(SeparatorConfig{9, 2, 4});
  model.init(1);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d(0.0, 30.0);
  nn::Tensor x({12, 9});
  for (double& v : x.data) v = d(rng);
  const nn::Tensor m = model.forward(x, false);
  for (double v : m.data) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_THROW(model.forward(nn::Tensor({12, 8}), false), Error);
}

TEST(SeparatorModel, CheckpointRoundTrip) {
  SeparatorModel model(SeparatorConfig{9, 2, 4});
  model.init(5);
  nn::Tensor x({6, 9});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.3 * i) * 20.0;
  model.forward(x, true);  // moves the running statistics off their defaults
  testutil::TempDir dir;
  model.save(dir.path() / "sep.ckpt");
  SeparatorModel back = SeparatorModel::load(dir.path() / "sep.ckpt");
  EXPECT_EQ(back.config().layers, 2u);
  EXPECT_EQ(back.config().hidden, 4u);
  const auto a = model.forward(x, false), b = back.forward(x, false);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5);
}

TEST(SeparatorLoss, ExamplesAndGradient) {
  MagnitudeSpectrogram x(2, 2), v(2, 2), a(2, 2);
  x.data = {4.0, 2.0, 1.0, 8.0};
  for (std::size_t i = 0; i < 4; ++i) {
    v.data[i] = 0.25 * x.data[i];
    a.data[i] = 0.75 * x.data[i];
  }
  nn::Tensor m({2, 2});
  m.fill(0.25);
  EXPECT_NEAR(separator_loss(m, x, v, a).value, 0.0, 1e-15);

  // Zero mask: mean |V| + mean |X - A|.
  v.data = {1.0, 0.5, 0.0, 2.0};
  a.data = {2.0, 2.0, 1.0, 3.0};
  m.fill(0.0);
  const double expect = (1.0 + 0.5 + 0.0 + 2.0) / 4 + (2.0 + 0.0 + 0.0 + 5.0) / 4;
  EXPECT_NEAR(separator_loss(m, x, v, a).value, expect, 1e-15);

  // Finite differences away from the kinks.
  m.data = {0.1, 0.6, 0.35, 0.8};
  const auto res = separator_loss(m, x, v, a);
  for (std::size_t i = 0; i < 4; ++i) {
    nn::Tensor p = m, q = m;
    p[i] += 1e-6;
    q[i] -= 1e-6;
    const double fd =
        (separator_loss(p, x, v, a).value - separator_loss(q, x, v, a).value) / 2e-6;
    EXPECT_NEAR(res.grad[i], fd, 1e-8);
  }
}

TEST(SeparatorModel, GradientCheckTinyConfig) {
  const auto start = std::chrono::steady_clock::now();
  const auto clip = synthetic::tone_noise_clip(3, 2000, 400);
  const StftConfig cfg{16, 4};
  std::vector<SeparatorExample> data{make_example(clip.mixture, clip.tone, clip.noise, cfg)};
  SeparatorModel model(SeparatorConfig{cfg.num_bins(), 2, 3});
  model.init(9);
  const std::size_t idx[] = {0};
  const auto result = nn::grad_check(model.params(), [&] {
    return separator_batch_loss(model, data, idx, true);
  });
  EXPECT_LT(result.max_rel_error, 1e-4) << result.worst_param << "[" << result.worst_index << "]";
  EXPECT_GT(result.checked, 100u);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(),
            60.0);
}
