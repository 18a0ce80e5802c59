#pragma once

#include <cstdint>
#include <vector>

#include "hkd/tensor.hpp"

namespace hkd {

class RunConfig;

// Variance-exploding schedule sigma(t) = t on [epsilon, horizon].
struct Schedule {
    float epsilon = 0.02f;
    float horizon = 3.0f;

    double sigma(double t) const { return t; }
    double sigma_prime(double /*t*/) const { return 1.0; }
    void validate() const;
};

struct GmmComponent {
    double weight = 1.0;
    std::vector<float> mean;  // C*H*W, row-major
    double stddev = 0.1;
};

// Analytic data distribution: the noised marginal at time t is
// sum_i w_i N(mu_i, (s_i^2 + sigma(t)^2) I), so score and log-density are
// closed-form.
struct GmmSpec {
    int C = 1, H = 16, W = 16;
    std::vector<GmmComponent> components;

    int64_t dim() const { return static_cast<int64_t>(C) * H * W; }
    void validate() const;
    double mean_stddev() const;  // mixture-average component std

    // K anti-aliased bar/disc template images in [-1, 1], equal weights.
    static GmmSpec procedural(int C, int H, int W, int K, double stddev, uint64_t seed);
    static GmmSpec single(int C, int H, int W, double stddev, uint64_t seed);
};

// log p_t(x); responsibilities via log-sum-exp, stable down to e^{-700}.
double gmm_log_density(const std::vector<double>& x, double t, const GmmSpec& gmm,
                       const Schedule& sched);

// grad_x log p_t(x)
std::vector<double> gmm_score_d(const std::vector<double>& x, double t, const GmmSpec& gmm,
                                const Schedule& sched);
Tensor gmm_score(const Tensor& x, float t, const GmmSpec& gmm, const Schedule& sched);

// Fixed-step classical RK4 on dx/dt = -sigma(t) sigma'(t) grad log p_t(x).
// Returns all n_steps+1 states including both endpoints.
std::vector<std::vector<double>> pf_ode_solve(const std::vector<double>& x_start,
                                              double t_start, double t_end,
                                              const GmmSpec& gmm, const Schedule& sched,
                                              int n_steps);

struct TrajectoryDataset {
    std::vector<float> times;  // strictly decreasing, horizon .. epsilon
    int n_traj = 0;
    int C = 0, H = 0, W = 0;
    Schedule schedule;
    uint8_t schedule_tag = 1;  // 1 = VE sigma(t)=t
    uint64_t seed = 0;
    std::vector<float> states;  // [n_traj, n_grid, C, H, W]

    int n_grid() const { return static_cast<int>(times.size()); }
    int64_t state_dim() const { return static_cast<int64_t>(C) * H * W; }
    const float* state(int traj, int grid) const {
        return states.data() + (static_cast<int64_t>(traj) * n_grid() + grid) * state_dim();
    }
    Tensor state_tensor(int traj, int grid) const;
    void validate() const;
};

// Draws x_T ~ N(0, (mean_stddev^2 + horizon^2) I) per trajectory and
// integrates down to epsilon, recording n_grid states on a uniform time grid
// with n_steps_per_grid RK4 substeps per interval. Deterministic given seed;
// parallel over trajectories (HKD_THREADS caps workers).
TrajectoryDataset generate_dataset(const GmmSpec& gmm, const Schedule& sched, int n_traj,
                                   int n_grid, int n_steps_per_grid, uint64_t seed);

// Draws [n,C,H,W] samples from the noised marginal at the schedule's epsilon:
// pick a component by weight, add N(0, (s_i^2 + epsilon^2) I).
Tensor sample_terminal(const GmmSpec& gmm, const Schedule& sched, int n, uint64_t seed);

GmmSpec gmm_from(const RunConfig& run);
Schedule schedule_from(const RunConfig& run);

int hkd_thread_count();

}  // namespace hkd
