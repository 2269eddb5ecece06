#include "pairlora/schedule.hpp"

#include <cmath>

namespace pairlora {

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear-beta") return ScheduleKind::linear_beta;
    if (s == "cosine") return ScheduleKind::cosine;
    tensor_fail("unknown schedule kind '" + s + "' (want linear-beta or cosine)");
}

NoiseSchedule make_schedule(int T, ScheduleKind kind) {
    if (T < 2) tensor_fail("make_schedule: T must be >= 2, got " + std::to_string(T));
    NoiseSchedule s;
    s.T = T;
    s.alpha_bar.assign(size_t(T) + 1, 1.0);
    s.loss_weight.assign(size_t(T) + 1, 1.0);
    if (kind == ScheduleKind::linear_beta) {
        // linear beta range chosen so alpha_bar[T] ~ 2.4e-3: fully-noised for
        // practical purposes but with bounded 1/sqrt(alpha_bar) error
        // amplification in the ddim inverse recurrences
        const double beta_start = 1e-4, beta_end = 1.2e-2;
        double acc = 1.0;
        for (int t = 1; t <= T; ++t) {
            double beta = beta_start + (beta_end - beta_start) * double(t - 1) / double(T - 1);
            acc *= 1.0 - beta;
            s.alpha_bar[size_t(t)] = acc;
        }
    } else {
        // squared-cosine schedule, normalized so alpha_bar[0] == 1
        const double offs = 0.008;
        auto f = [&](double t) {
            double a = (t / double(T) + offs) / (1.0 + offs) * 1.5707963267948966;
            double c = std::cos(a);
            return c * c;
        };
        double f0 = f(0.0);
        double prev = 1.0;
        for (int t = 1; t <= T; ++t) {
            double v = f(double(t)) / f0;
            // guard the tail so alpha_bar stays strictly decreasing and positive
            v = std::min(v, prev * (1.0 - 1e-6));
            v = std::max(v, 1e-9);
            if (v >= prev) v = prev * (1.0 - 1e-6);
            s.alpha_bar[size_t(t)] = v;
            prev = v;
        }
    }
    return s;
}

static void check_t(const NoiseSchedule& s, int t, const char* op) {
    if (t < 0 || t > s.T)
        tensor_fail(std::string(op) + ": t=" + std::to_string(t) + " outside schedule [0," +
                    std::to_string(s.T) + "]");
}

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
    check_same_shape("forward_diffuse", x0, eps);
    check_t(s, t, "forward_diffuse");
    double ab = s.alpha_bar[size_t(t)];
    double ca = std::sqrt(ab), cb = std::sqrt(1.0 - ab);
    Tensor out = Tensor::zeros(x0.shape());
    auto xd = x0.data();
    auto ed = eps.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i)
        od[i] = float(ca * double(xd[i]) + cb * double(ed[i]));
    return out;
}

Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& s) {
    if (t <= t_prev)
        tensor_fail("ddim_step: need t > t_prev, got t=" + std::to_string(t) +
                    " t_prev=" + std::to_string(t_prev));
    if (t_prev < 0) tensor_fail("ddim_step: t_prev must be >= 0");
    check_same_shape("ddim_step", x_t, eps_hat);
    check_t(s, t, "ddim_step");
    double ab_t = s.alpha_bar[size_t(t)];
    double ab_p = s.alpha_bar[size_t(t_prev)];
    double sa_t = std::sqrt(ab_t), sb_t = std::sqrt(1.0 - ab_t);
    double sa_p = std::sqrt(ab_p), sb_p = std::sqrt(1.0 - ab_p);
    Tensor out = Tensor::zeros(x_t.shape());
    auto xd = x_t.data();
    auto ed = eps_hat.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) {
        double x0_hat = (double(xd[i]) - sb_t * double(ed[i])) / sa_t;
        od[i] = float(sa_p * x0_hat + sb_p * double(ed[i]));
    }
    return out;
}

// the same recurrence run upward: x_{t_next} from x_t (t_next > t)
static Tensor ddim_step_up(const Tensor& x_t, const Tensor& eps_hat, int t, int t_next,
                           const NoiseSchedule& s) {
    double ab_t = s.alpha_bar[size_t(t)];
    double ab_n = s.alpha_bar[size_t(t_next)];
    double sa_t = std::sqrt(ab_t), sb_t = std::sqrt(1.0 - ab_t);
    double sa_n = std::sqrt(ab_n), sb_n = std::sqrt(1.0 - ab_n);
    Tensor out = Tensor::zeros(x_t.shape());
    auto xd = x_t.data();
    auto ed = eps_hat.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) {
        double x0_hat = (double(xd[i]) - sb_t * double(ed[i])) / sa_t;
        od[i] = float(sa_n * x0_hat + sb_n * double(ed[i]));
    }
    return out;
}

std::vector<int> timestep_grid(int T, int num_steps) {
    if (num_steps < 1 || num_steps > T)
        tensor_fail("timestep_grid: need 1 <= num_inference_steps <= T, got " +
                    std::to_string(num_steps) + " with T=" + std::to_string(T));
    std::vector<int> grid(size_t(num_steps) + 1);
    for (int i = 0; i <= num_steps; ++i)
        grid[size_t(i)] = int(std::llround(double(i) * double(T) / double(num_steps)));
    return grid;
}

Tensor ddim_invert(const Tensor& x0, int target_t, const NoisePredictorFn& predictor,
                   const SamplerConfig& cfg, const NoiseSchedule& s) {
    check_t(s, target_t, "ddim_invert");
    auto grid = timestep_grid(s.T, cfg.num_inference_steps);
    // walk grid points upward until the one nearest target_t
    size_t stop = 0;
    for (size_t i = 0; i < grid.size(); ++i)
        if (std::abs(grid[i] - target_t) < std::abs(grid[stop] - target_t)) stop = i;
    Tensor x = x0;
    for (size_t j = 0; j + 1 <= stop; ++j) {
        Tensor eps_hat = predictor(x, grid[j]);
        check_same_shape("ddim_invert: predictor output", x, eps_hat);
        x = ddim_step_up(x, eps_hat, grid[j], grid[j + 1], s);
    }
    return x;
}

Tensor sample_from(const Tensor& x_start, int start_index, const GuidedPredictor& predictor,
                   const SamplerConfig& cfg, const NoiseSchedule& s) {
    auto grid = timestep_grid(s.T, cfg.num_inference_steps);
    int N = cfg.num_inference_steps;
    if (start_index < 1 || start_index > N)
        tensor_fail("sample_from: start_index " + std::to_string(start_index) +
                    " outside [1," + std::to_string(N) + "]");
    Tensor x = x_start;
    for (int i = start_index; i >= 1; --i) {
        int t = grid[size_t(i)], t_prev = grid[size_t(i) - 1];
        int step_index = N - i;
        Tensor eps_hat = predictor(x, t, step_index, N);
        if (!eps_hat.all_finite())
            tensor_fail("sample: non-finite prediction at step index " +
                        std::to_string(step_index) + " (t=" + std::to_string(t) + ")");
        x = ddim_step(x, eps_hat, t, t_prev, s);
    }
    return x;
}

Tensor sample(const GuidedPredictor& predictor, uint64_t seed, const std::vector<int>& shape,
              const SamplerConfig& cfg, const NoiseSchedule& s) {
    Rng rng(seed);
    Tensor x = Tensor::randn(shape, rng);
    return sample_from(x, cfg.num_inference_steps, predictor, cfg, s);
}

}  // namespace pairlora
