#include "ccmt/channel.hpp"

#include <cmath>
#include <random>

#include "ccmt/error.hpp"

namespace ccmt {

void ChannelConfig::validate() const {
  if (!std::isfinite(snr_lo_db) || !std::isfinite(snr_hi_db)) {
    throw ValidationError("SNR bounds must be finite");
  }
  if (snr_lo_db > snr_hi_db) {
    throw ValidationError("SNR range [" + std::to_string(snr_lo_db) + ", " +
                          std::to_string(snr_hi_db) + "] is inverted");
  }
}

double noise_variance(double snr_db) {
  if (!std::isfinite(snr_db)) throw ValidationError("SNR must be finite");
  return std::pow(10.0, -snr_db / 10.0);
}

double sample_snr_db(const ChannelConfig& config, Rng& rng) {
  if (config.mode == SnrMode::fixed_db) return config.snr_lo_db;
  const double u = std::generate_canonical<double, 53>(rng);
  return config.snr_lo_db + (config.snr_hi_db - config.snr_lo_db) * u;
}

Tensor gaussian_noise(const Shape& shape, double variance, Rng& rng) {
  Tensor out(shape);
  if (variance == 0.0) return out;
  std::normal_distribution<double> dist(0.0, std::sqrt(variance));
  for (auto& v : out.values()) v = static_cast<float>(dist(rng));
  return out;
}

Tensor awgn(const Tensor& symbols, double snr_db, Rng& rng) {
  Tensor out = gaussian_noise(symbols.shape(), noise_variance(snr_db), rng);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += symbols[i];
  return out;
}

namespace {

template <class T>
double mean_power(const T* v, std::size_t n) {
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += double(v[i]) * double(v[i]);
  return acc / static_cast<double>(n);
}

}  // namespace

double power_scale(const float* values, std::size_t count) {
  if (count == 0) throw ContractError("power_normalize: empty batch");
  const double p = mean_power(values, count);
  return 1.0 / std::sqrt(p > kPowerEpsilon ? p : kPowerEpsilon);
}

Tensor power_normalize(const Tensor& batch) {
  const double s = power_scale(batch.data(), batch.size());
  Tensor out = batch;
  for (auto& v : out.values()) v = static_cast<float>(v * s);
  return out;
}

// y = x / sqrt(P), P = mean(x^2). dL/dx = (g - y * mean(g . y)) / sqrt(P);
// in the guarded branch the scale is a constant.
template <class T>
Var<T> power_normalize(Var<T> batch) {
  const auto& x = batch.value();
  if (x.empty()) throw ContractError("power_normalize: empty batch");
  auto& tape = batch.tape();
  const double p = mean_power(x.data(), x.size());
  const bool guarded = !(p > kPowerEpsilon);
  if (guarded) ++tape.diagnostics().zero_power_batches;
  const double s = 1.0 / std::sqrt(guarded ? kPowerEpsilon : p);
  BasicTensor<T> out = x;
  for (auto& v : out.values()) v = static_cast<T>(v * s);
  const std::size_t xi = batch.id();
  const Var<T> in[] = {batch};
  return tape.record(std::move(out), in, [xi, s, guarded](Tape<T>& t, std::size_t self) {
    const auto& y = t.value(self);
    const auto& gy = t.grad_buffer(self);
    auto& gx = t.grad_buffer(xi);
    double dot = 0;
    if (!guarded) {
      for (std::size_t i = 0; i < y.size(); ++i) dot += double(gy[i]) * double(y[i]);
      dot /= static_cast<double>(y.size());
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
      gx[i] += static_cast<T>((double(gy[i]) - double(y[i]) * dot) * s);
    }
  });
}

template Var<float> power_normalize<float>(Var<float>);
template Var<double> power_normalize<double>(Var<double>);

}  // namespace ccmt
