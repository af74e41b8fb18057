#include "saii/fft.hpp"

#include <algorithm>
#include <memory>
#include <mutex>
#include <type_traits>

#include <fftw3.h>

namespace saii::fft {
namespace {

// Plan creation in FFTW is not thread-safe; execution is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct PlanDeleter {
  void operator()(fftw_plan p) const {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(p);
  }
};

}  // namespace

std::vector<std::complex<double>> rfft(std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  std::vector<double> in(x.begin(), x.end());
  std::vector<std::complex<double>> out(x.size() / 2 + 1);
  fftw_plan p;
  {
    std::lock_guard lock(planner_mutex());
    p = fftw_plan_dft_r2c_1d(n, in.data(), reinterpret_cast<fftw_complex*>(out.data()), FFTW_ESTIMATE);
  }
  std::unique_ptr<std::remove_pointer_t<fftw_plan>, PlanDeleter> guard(p);
  fftw_execute(p);
  return out;
}

std::vector<double> irfft(std::span<const std::complex<double>> spectrum, std::size_t n) {
  std::vector<std::complex<double>> in(n / 2 + 1);
  std::copy_n(spectrum.begin(), std::min(spectrum.size(), in.size()), in.begin());
  std::vector<double> out(n);
  fftw_plan p;
  {
    std::lock_guard lock(planner_mutex());
    p = fftw_plan_dft_c2r_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(in.data()), out.data(),
                             FFTW_ESTIMATE);
  }
  std::unique_ptr<std::remove_pointer_t<fftw_plan>, PlanDeleter> guard(p);
  fftw_execute(p);
  for (double& v : out) v /= static_cast<double>(n);
  return out;
}

std::vector<std::complex<double>> analytic_signal(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = x[i];
  fftw_plan fwd, bwd;
  {
    std::lock_guard lock(planner_mutex());
    auto* b = reinterpret_cast<fftw_complex*>(buf.data());
    fwd = fftw_plan_dft_1d(static_cast<int>(n), b, b, FFTW_FORWARD, FFTW_ESTIMATE);
    bwd = fftw_plan_dft_1d(static_cast<int>(n), b, b, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  std::unique_ptr<std::remove_pointer_t<fftw_plan>, PlanDeleter> g1(fwd), g2(bwd);
  fftw_execute(fwd);
  // Keep DC (and Nyquist for even n), double positive frequencies, zero negative ones.
  for (std::size_t k = 1; k < n; ++k) {
    if (2 * k < n) {
      buf[k] *= 2.0;
    } else if (2 * k > n) {
      buf[k] = 0.0;
    }
  }
  fftw_execute(bwd);
  for (auto& v : buf) v /= static_cast<double>(n);
  return buf;
}

}  // namespace saii::fft
