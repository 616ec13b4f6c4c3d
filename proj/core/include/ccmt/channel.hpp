#ifndef CCMT_CHANNEL_HPP_
#define CCMT_CHANNEL_HPP_

#include "ccmt/autodiff.hpp"
#include "ccmt/random.hpp"
#include "ccmt/tensor.hpp"

namespace ccmt {

enum class SnrMode { sample_uniform_db, fixed_db };

/// SNR is 1/sigma^2 for unit-power symbols, so sigma^2 = 10^(-SNR_dB/10).
struct ChannelConfig {
  double snr_lo_db = 9.0;
  double snr_hi_db = 11.0;
  SnrMode mode = SnrMode::sample_uniform_db;
  bool noiseless = false;  // test mode: sigma^2 = 0

  static ChannelConfig fixed(double snr_db) { return {snr_db, snr_db, SnrMode::fixed_db, false}; }
  void validate() const;
};

/// Guard used when a batch has (near) zero power.
inline constexpr double kPowerEpsilon = 1e-12;

double noise_variance(double snr_db);

/// Uniform in dB over [lo, hi] for sample_uniform_db; `lo` for fixed_db.
double sample_snr_db(const ChannelConfig& config, Rng& rng);

/// I.i.d. zero-mean Gaussian entries with the given variance.
Tensor gaussian_noise(const Shape& shape, double variance, Rng& rng);

/// symbols + n with n ~ N(0, 10^(-snr_db/10) I). The input is not modified.
Tensor awgn(const Tensor& symbols, double snr_db, Rng& rng);

/// Scales a [J,m] batch so that the mean squared entry over batch and symbol
/// axes is one. All-zero batches are divided by sqrt(1e-12) instead.
Tensor power_normalize(const Tensor& batch);

/// Differentiable power normalization; counts epsilon-guarded batches in
/// the tape diagnostics.
template <class T>
Var<T> power_normalize(Var<T> batch);

/// Scale factor 1/sqrt(mean power) that power_normalize would apply.
double power_scale(const float* values, std::size_t count);

}  // namespace ccmt

#endif  // CCMT_CHANNEL_HPP_
