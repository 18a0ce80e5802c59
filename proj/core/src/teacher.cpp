#include "hkd/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "hkd/config.hpp"
#include "hkd/rng.hpp"

namespace hkd {

void Schedule::validate() const {
    if (!(epsilon > 0.0f) || !(horizon > epsilon))
        throw numeric_error("Schedule: need 0 < epsilon < horizon");
}

void GmmSpec::validate() const {
    if (components.empty()) throw numeric_error("GmmSpec: no components");
    double wsum = 0.0;
    for (const auto& c : components) {
        if (!(c.weight > 0.0)) throw numeric_error("GmmSpec: weights must be positive");
        if (!(c.stddev > 0.0)) throw numeric_error("GmmSpec: stddevs must be positive");
        if (static_cast<int64_t>(c.mean.size()) != dim())
            throw shape_error("GmmSpec: mean size does not match C*H*W");
        wsum += c.weight;
    }
    if (std::abs(wsum - 1.0) > 1e-9)
        throw numeric_error("GmmSpec: weights sum to " + std::to_string(wsum) + ", not 1");
}

double GmmSpec::mean_stddev() const {
    double s = 0.0;
    for (const auto& c : components) s += c.weight * c.stddev;
    return s;
}

GmmSpec GmmSpec::single(int C, int H, int W, double stddev, uint64_t seed) {
    GmmSpec g;
    g.C = C;
    g.H = H;
    g.W = W;
    Rng rng(seed);
    GmmComponent comp;
    comp.weight = 1.0;
    comp.stddev = stddev;
    comp.mean.resize(static_cast<size_t>(g.dim()));
    // smooth low-frequency template, roughly unit scale
    for (int c = 0; c < C; ++c) {
        double px = rng.uniform(0.2, 0.8) * W;
        double py = rng.uniform(0.2, 0.8) * H;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double dx = (x - px) / (0.35 * W), dy = (y - py) / (0.35 * H);
                comp.mean[(static_cast<size_t>(c) * H + y) * W + x] =
                    static_cast<float>(std::exp(-(dx * dx + dy * dy)) * 1.2 - 0.4);
            }
    }
    g.components.push_back(std::move(comp));
    return g;
}

GmmSpec GmmSpec::procedural(int C, int H, int W, int K, double stddev, uint64_t seed) {
    GmmSpec g;
    g.C = C;
    g.H = H;
    g.W = W;
    Rng rng(seed);
    for (int k = 0; k < K; ++k) {
        GmmComponent comp;
        comp.weight = 1.0 / K;
        comp.stddev = stddev;
        comp.mean.assign(static_cast<size_t>(g.dim()), -0.6f);
        bool disc = (k % 2 == 0);
        double fg = rng.uniform(0.5, 0.9);
        if (disc) {
            double cx = rng.uniform(0.25, 0.75) * W;
            double cy = rng.uniform(0.25, 0.75) * H;
            double r = rng.uniform(0.15, 0.3) * std::min(H, W);
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) {
                        double dist = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
                        double cov = std::clamp(r - dist + 0.5, 0.0, 1.0);  // anti-alias
                        auto& px = comp.mean[(static_cast<size_t>(c) * H + y) * W + x];
                        px = static_cast<float>(px + cov * (fg - px));
                    }
        } else {
            double ang = rng.uniform(0.0, 3.14159265358979323846);
            double nx = std::cos(ang), ny = std::sin(ang);
            double off = rng.uniform(0.35, 0.65) * (nx * W + ny * H);
            double half = rng.uniform(0.06, 0.14) * std::min(H, W);
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) {
                        double d = std::abs(nx * (x + 0.5) + ny * (y + 0.5) - off);
                        double cov = std::clamp(half - d + 0.5, 0.0, 1.0);
                        auto& px = comp.mean[(static_cast<size_t>(c) * H + y) * W + x];
                        px = static_cast<float>(px + cov * (fg - px));
                    }
        }
        g.components.push_back(std::move(comp));
    }
    return g;
}

namespace {
// per-component log weight + log N(x; mu, v I), v = s^2 + sigma(t)^2
void component_log_terms(const std::vector<double>& x, double t, const GmmSpec& gmm,
                         const Schedule& sched, std::vector<double>& out,
                         std::vector<double>& vars) {
    const double sig2 = sched.sigma(t) * sched.sigma(t);
    const double D = static_cast<double>(gmm.dim());
    out.resize(gmm.components.size());
    vars.resize(gmm.components.size());
    for (size_t i = 0; i < gmm.components.size(); ++i) {
        const auto& c = gmm.components[i];
        double v = c.stddev * c.stddev + sig2;
        double q = 0.0;
        for (size_t j = 0; j < x.size(); ++j) {
            double d = x[j] - c.mean[j];
            q += d * d;
        }
        out[i] = std::log(c.weight) - 0.5 * D * std::log(2.0 * 3.14159265358979323846 * v) -
                 0.5 * q / v;
        vars[i] = v;
    }
}
}  // namespace

double gmm_log_density(const std::vector<double>& x, double t, const GmmSpec& gmm,
                       const Schedule& sched) {
    std::vector<double> lt, vars;
    component_log_terms(x, t, gmm, sched, lt, vars);
    double m = *std::max_element(lt.begin(), lt.end());
    double acc = 0.0;
    for (double v : lt) acc += std::exp(v - m);
    return m + std::log(acc);
}

std::vector<double> gmm_score_d(const std::vector<double>& x, double t, const GmmSpec& gmm,
                                const Schedule& sched) {
    std::vector<double> lt, vars;
    component_log_terms(x, t, gmm, sched, lt, vars);
    double m = *std::max_element(lt.begin(), lt.end());
    double z = 0.0;
    for (double v : lt) z += std::exp(v - m);
    std::vector<double> score(x.size(), 0.0);
    for (size_t i = 0; i < gmm.components.size(); ++i) {
        double r = std::exp(lt[i] - m) / z;
        if (r == 0.0) continue;
        const auto& c = gmm.components[i];
        double inv_v = r / vars[i];
        for (size_t j = 0; j < x.size(); ++j) score[j] += inv_v * (c.mean[j] - x[j]);
    }
    return score;
}

Tensor gmm_score(const Tensor& x, float t, const GmmSpec& gmm, const Schedule& sched) {
    std::vector<double> xd(x.vec().begin(), x.vec().end());
    std::vector<double> s = gmm_score_d(xd, t, gmm, sched);
    std::vector<float> out(s.begin(), s.end());
    return Tensor::from_data(x.shape(), std::move(out));
}

std::vector<std::vector<double>> pf_ode_solve(const std::vector<double>& x_start,
                                              double t_start, double t_end,
                                              const GmmSpec& gmm, const Schedule& sched,
                                              int n_steps) {
    if (n_steps < 1) throw numeric_error("pf_ode_solve: n_steps must be >= 1");
    auto f = [&](const std::vector<double>& x, double t) {
        std::vector<double> s = gmm_score_d(x, t, gmm, sched);
        double c = -sched.sigma(t) * sched.sigma_prime(t);
        for (double& v : s) v *= c;
        return s;
    };
    std::vector<std::vector<double>> traj;
    traj.reserve(n_steps + 1);
    traj.push_back(x_start);
    const double h = (t_end - t_start) / n_steps;
    std::vector<double> x = x_start, tmp(x.size());
    for (int step = 0; step < n_steps; ++step) {
        double t = t_start + step * h;
        std::vector<double> k1 = f(x, t);
        for (size_t j = 0; j < x.size(); ++j) tmp[j] = x[j] + 0.5 * h * k1[j];
        std::vector<double> k2 = f(tmp, t + 0.5 * h);
        for (size_t j = 0; j < x.size(); ++j) tmp[j] = x[j] + 0.5 * h * k2[j];
        std::vector<double> k3 = f(tmp, t + 0.5 * h);
        for (size_t j = 0; j < x.size(); ++j) tmp[j] = x[j] + h * k3[j];
        std::vector<double> k4 = f(tmp, t + h);
        for (size_t j = 0; j < x.size(); ++j)
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        traj.push_back(x);
    }
    return traj;
}

Tensor TrajectoryDataset::state_tensor(int traj, int grid) const {
    const float* p = state(traj, grid);
    return Tensor::from_data({1, C, H, W}, std::vector<float>(p, p + state_dim()));
}

void TrajectoryDataset::validate() const {
    if (times.size() < 2) throw numeric_error("TrajectoryDataset: need at least 2 grid times");
    if (times.front() != schedule.horizon || times.back() != schedule.epsilon)
        throw numeric_error("TrajectoryDataset: grid endpoints must be horizon and epsilon");
    for (size_t i = 1; i < times.size(); ++i)
        if (!(times[i] < times[i - 1]))
            throw numeric_error("TrajectoryDataset: times must be strictly decreasing");
    if (states.size() != static_cast<size_t>(n_traj) * n_grid() * state_dim())
        throw shape_error("TrajectoryDataset: state buffer size mismatch");
}

int hkd_thread_count() {
    if (const char* env = std::getenv("HKD_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
}

TrajectoryDataset generate_dataset(const GmmSpec& gmm, const Schedule& sched, int n_traj,
                                   int n_grid, int n_steps_per_grid, uint64_t seed) {
    gmm.validate();
    sched.validate();
    if (n_grid < 2) throw numeric_error("generate_dataset: n_grid must be >= 2");
    if (n_traj < 1) throw numeric_error("generate_dataset: n_traj must be >= 1");
    if (n_steps_per_grid < 1)
        throw numeric_error("generate_dataset: n_steps_per_grid must be >= 1");

    TrajectoryDataset ds;
    ds.schedule = sched;
    ds.n_traj = n_traj;
    ds.C = gmm.C;
    ds.H = gmm.H;
    ds.W = gmm.W;
    ds.seed = seed;
    ds.times.resize(n_grid);
    const double T = sched.horizon, eps = sched.epsilon;
    for (int g = 0; g < n_grid; ++g)
        ds.times[g] = static_cast<float>(T + (eps - T) * g / (n_grid - 1));
    ds.times.front() = sched.horizon;
    ds.times.back() = sched.epsilon;

    const int64_t D = ds.state_dim();
    ds.states.resize(static_cast<size_t>(n_traj) * n_grid * D);
    const double init_std = std::sqrt(gmm.mean_stddev() * gmm.mean_stddev() + T * T);

    auto run_range = [&](int lo, int hi) {
        for (int n = lo; n < hi; ++n) {
            Rng rng(seed + 0x9E3779B97F4A7C15ULL * static_cast<uint64_t>(n + 1));
            std::vector<double> x(D);
            for (auto& v : x) v = init_std * rng.normal();
            float* base = ds.states.data() + static_cast<size_t>(n) * n_grid * D;
            for (int64_t j = 0; j < D; ++j) base[j] = static_cast<float>(x[j]);
            for (int g = 1; g < n_grid; ++g) {
                auto seg = pf_ode_solve(x, ds.times[g - 1], ds.times[g], gmm, sched,
                                        n_steps_per_grid);
                x = seg.back();
                float* out = base + static_cast<size_t>(g) * D;
                for (int64_t j = 0; j < D; ++j) out[j] = static_cast<float>(x[j]);
            }
        }
    };

    int workers = std::min(hkd_thread_count(), n_traj);
    if (workers <= 1) {
        run_range(0, n_traj);
    } else {
        std::vector<std::thread> pool;
        int chunk = (n_traj + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            int lo = w * chunk, hi = std::min(n_traj, lo + chunk);
            if (lo < hi) pool.emplace_back(run_range, lo, hi);
        }
        for (auto& th : pool) th.join();
    }
    ds.validate();
    return ds;
}

Tensor sample_terminal(const GmmSpec& gmm, const Schedule& sched, int n, uint64_t seed) {
    gmm.validate();
    Rng rng(seed);
    int64_t dim = gmm.dim();
    std::vector<float> data(static_cast<size_t>(n) * dim);
    double total_w = 0.0;
    for (const auto& c : gmm.components) total_w += c.weight;
    for (int s = 0; s < n; ++s) {
        double pick = rng.uniform() * total_w;
        size_t ci = 0;
        for (; ci + 1 < gmm.components.size(); ++ci) {
            pick -= gmm.components[ci].weight;
            if (pick <= 0.0) break;
        }
        const auto& comp = gmm.components[ci];
        double std_eps = std::sqrt(comp.stddev * comp.stddev +
                                   double(sched.epsilon) * sched.epsilon);
        float* out = data.data() + static_cast<size_t>(s) * dim;
        for (int64_t i = 0; i < dim; ++i)
            out[i] = comp.mean[i] + static_cast<float>(rng.normal() * std_eps);
    }
    return Tensor::from_data({n, gmm.C, gmm.H, gmm.W}, std::move(data));
}

Schedule schedule_from(const RunConfig& run) {
    Schedule s;
    s.epsilon = static_cast<float>(run.get_double("model.epsilon"));
    s.horizon = static_cast<float>(run.get_double("model.horizon"));
    s.validate();
    return s;
}

GmmSpec gmm_from(const RunConfig& run) {
    int C = run.get_int("model.channels");
    int H = run.get_int("model.size");
    int W = H;
    double stddev = run.get_double("teacher.std");
    uint64_t seed = run.get_u64("teacher.seed");
    std::string kind = run.get(std::string("teacher.kind"));
    if (kind == "procedural")
        return GmmSpec::procedural(C, H, W, run.get_int("teacher.components"), stddev, seed);
    if (kind == "single") return GmmSpec::single(C, H, W, stddev, seed);
    throw config_error("config key 'teacher.kind' must be procedural or single, got " + kind);
}

}  // namespace hkd
