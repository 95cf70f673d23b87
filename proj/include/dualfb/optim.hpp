#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dualfb/encoder.hpp"
#include "dualfb/errors.hpp"

namespace dualfb {

struct AdamConfig {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled: p -= lr * wd * p, applied before the moment update
};

// First/second moment accumulators, one slot per parameter, plus the global
// step counter used for bias correction.
class AdamState {
 public:
  explicit AdamState(const EncoderConfig& cfg) : m_(cfg), v_(cfg) {}

  // Applies one update from mean gradients. `lr_override` (if >= 0) replaces
  // cfg.lr for this step, which is how schedules plug in. Bumps
  // params.version so stale retrieval snapshots become detectable.
  void step(EncoderParams& params, const ParamGradients& grads,
            const AdamConfig& cfg, double lr_override = -1.0) {
    const double lr = lr_override >= 0.0 ? lr_override : cfg.lr;
    ++t_;
    const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));

    auto tensors = params.tensors();
    auto gtensors = grads.tensors();
    auto mtensors = m_.tensors();
    auto vtensors = v_.tensors();
    for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
      std::vector<float>& p = *tensors[ti];
      const std::vector<double>& g = *gtensors[ti];
      std::vector<double>& m = *mtensors[ti];
      std::vector<double>& v = *vtensors[ti];
      if (g.size() != p.size()) {
        throw DataError(std::string("adam: gradient shape mismatch for ") +
                        EncoderParams::tensor_names[ti]);
      }
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i];
        if (!std::isfinite(gi)) {
          throw DataError(std::string("adam: non-finite gradient in ") +
                          EncoderParams::tensor_names[ti]);
        }
        // Untouched slot: zero gradient with zero moments updates nothing
        // (absent weight decay), so skipping is exact. Embedding rows outside
        // the active vocabulary stay free.
        if (gi == 0.0 && m[i] == 0.0 && v[i] == 0.0 && cfg.weight_decay == 0.0) {
          continue;
        }
        double pi = static_cast<double>(p[i]);
        if (cfg.weight_decay != 0.0) pi -= lr * cfg.weight_decay * pi;
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
        const double mhat = m[i] / bias1;
        const double vhat = v[i] / bias2;
        pi -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
        p[i] = static_cast<float>(pi);
      }
    }
    ++params.version;
  }

  std::int64_t steps_taken() const { return t_; }

 private:
  ParamGradients m_;
  ParamGradients v_;
  std::int64_t t_ = 0;
};

// Linear decay from `peak` to zero across `total_steps`, 0-based step index.
inline double linear_decay_lr(double peak, std::int64_t step,
                              std::int64_t total_steps) {
  if (total_steps <= 0) return peak;
  if (step >= total_steps) return 0.0;
  const double remaining =
      static_cast<double>(total_steps - step) / static_cast<double>(total_steps);
  return peak * remaining;
}

}  // namespace dualfb
