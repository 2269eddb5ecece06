#pragma once

// Noise schedules, the forward diffusion process, the deterministic DDIM
// sampler (eta = 0) and its reverse recurrence for inversion.

#include <functional>
#include <vector>

#include "pairlora/tensor.hpp"

namespace pairlora {

enum class ScheduleKind { linear_beta, cosine };

struct NoiseSchedule {
    int T = 0;
    std::vector<double> alpha_bar;    // length T+1, alpha_bar[0] == 1, strictly decreasing
    std::vector<double> loss_weight;  // length T+1, defaults to all ones
};

ScheduleKind schedule_kind_from_string(const std::string& s);

NoiseSchedule make_schedule(int T, ScheduleKind kind);

// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps
Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s);

// deterministic update from t down to t_prev using the model's eps_hat
Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& s);

// uniform-stride inference timestep grid: grid[i] = round(i*T/N), i = 0..N
std::vector<int> timestep_grid(int T, int num_steps);

struct SamplerConfig {
    int num_inference_steps = 50;  // eta fixed to 0 (deterministic)
};

// eps_hat as a function of (x, t, step_index, num_steps); step_index counts
// from 0 at the noisiest step so schedulers can switch guidance modes
using GuidedPredictor = std::function<Tensor(const Tensor& x, int t, int step_index, int num_steps)>;

// plain predictor for inversion: eps_hat(x, t)
using NoisePredictorFn = std::function<Tensor(const Tensor& x, int t)>;

// runs the ddim recurrence in reverse (t increasing) from x0 up to the grid
// point nearest target_t; returns the noised latent
Tensor ddim_invert(const Tensor& x0, int target_t, const NoisePredictorFn& predictor,
                   const SamplerConfig& cfg, const NoiseSchedule& s);

// seeds a gaussian x_T, iterates ddim_step with the guided prediction,
// returns the final (unclamped) x0 estimate
Tensor sample(const GuidedPredictor& predictor, uint64_t seed, const std::vector<int>& shape,
              const SamplerConfig& cfg, const NoiseSchedule& s);

// variant starting from a provided latent at grid index start_index (used by
// invert-edit); start_index = N runs the full trajectory
Tensor sample_from(const Tensor& x_start, int start_index, const GuidedPredictor& predictor,
                   const SamplerConfig& cfg, const NoiseSchedule& s);

}  // namespace pairlora
