#ifndef SMS_METRICS_HPP
#define SMS_METRICS_HPP

#include <cmath>
#include <optional>

#include "sms/tensor.hpp"

namespace sms {

/// ||xhat - x||^2 / ||x||^2.
inline double nmse(const Tensor4& recon, const Tensor4& truth) {
  check_same_dims(recon, truth, "nmse");
  const double num = (recon.vec() - truth.vec()).squaredNorm();
  const double den = truth.vec().squaredNorm();
  return den > 0 ? num / den : num;
}

/// PSNR over magnitude images with peak = max |truth|; nullopt when the
/// error is exactly zero.
inline std::optional<double> psnr(const Tensor4& recon, const Tensor4& truth) {
  check_same_dims(recon, truth, "psnr");
  double peak = 0, mse = 0;
  for (std::int64_t i = 0; i < truth.size(); ++i) {
    peak = std::max(peak, std::abs(truth[i]));
    const double d = std::abs(recon[i]) - std::abs(truth[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(truth.size());
  if (mse == 0) return std::nullopt;
  return 10.0 * std::log10(peak * peak / mse);
}

}  // namespace sms

#endif  // SMS_METRICS_HPP
