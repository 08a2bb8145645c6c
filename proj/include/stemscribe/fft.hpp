#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>

#include <fftw3.h>

namespace stemscribe {

using cplx = std::complex<double>;

// Fixed-size in-place complex DFT backed by FFTW. Plans are created with
// FFTW_UNALIGNED so any std::complex buffer of the right size can be passed.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    auto scratch = std::unique_ptr<fftw_complex, decltype(&fftw_free)>(
        fftw_alloc_complex(n), &fftw_free);
    const int flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    const int size = static_cast<int>(n);
    fwd_.reset(fftw_plan_dft_1d(size, scratch.get(), scratch.get(), FFTW_FORWARD, flags));
    inv_.reset(fftw_plan_dft_1d(size, scratch.get(), scratch.get(), FFTW_BACKWARD, flags));
    if (!fwd_ || !inv_) throw std::runtime_error("fftw planning failed");
  }

  std::size_t size() const { return n_; }

  void forward(std::span<cplx> data) const { run(fwd_.get(), data); }

  // Unnormalized inverse; caller divides by N.
  void inverse(std::span<cplx> data) const { run(inv_.get(), data); }

 private:
  struct PlanDeleter {
    void operator()(fftw_plan p) const { fftw_destroy_plan(p); }
  };
  using PlanPtr = std::unique_ptr<std::remove_pointer_t<fftw_plan>, PlanDeleter>;

  void run(fftw_plan p, std::span<cplx> data) const {
    if (data.size() != n_) throw std::invalid_argument("fft buffer size mismatch");
    auto* buf = reinterpret_cast<fftw_complex*>(data.data());
    fftw_execute_dft(p, buf, buf);
  }

  std::size_t n_;
  PlanPtr fwd_;
  PlanPtr inv_;
};

}  // namespace stemscribe
