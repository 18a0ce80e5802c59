#include "hkd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "hkd/config.hpp"
#include "hkd/koopman.hpp"
#include "hkd/rng.hpp"

namespace hkd {

void TrainConfig::validate() const {
    if (batch < 1) throw config_error("TrainConfig: batch must be >= 1");
    if (samples < 1) throw config_error("TrainConfig: samples must be >= 1");
    if (epochs < 0) throw config_error("TrainConfig: epochs must be >= 0");
    if (!(lr > 0.0f)) throw config_error("TrainConfig: lr must be positive");
    if (!(decay > 0.0f && decay <= 1.0f))
        throw config_error("TrainConfig: decay must be in (0, 1]");
    if (lambda2 != 1.0f) throw config_error("TrainConfig: lambda2 is fixed at 1");
}

TrainConfig train_config_from(const RunConfig& run) {
    TrainConfig cfg;
    cfg.batch = run.get_int("train.batch");
    cfg.samples = run.get_int("train.samples");
    cfg.epochs = run.get_int("train.epochs");
    cfg.iters_per_epoch = run.get_int("train.iters_per_epoch");
    cfg.lr = static_cast<float>(run.get_double("train.lr"));
    cfg.beta1 = static_cast<float>(run.get_double("train.beta1"));
    cfg.beta2 = static_cast<float>(run.get_double("train.beta2"));
    cfg.eps = static_cast<float>(run.get_double("train.eps"));
    cfg.decay = static_cast<float>(run.get_double("train.decay"));
    cfg.seed = run.get_u64("train.seed");
    cfg.log_interval = run.get_int("train.log_interval");
    cfg.validate();
    return cfg;
}

static Tensor frozen_conv_init(const Shape& shape, Rng& rng) {
    int64_t n = shape_numel(shape);
    int fan_in = 1;
    for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    std::vector<float> data(n);
    for (auto& v : data) v = static_cast<float>(rng.uniform(-bound, bound));
    return Tensor::from_data(shape, std::move(data), false);
}

PerceptualExtractor::PerceptualExtractor(int in_channels, int c1, int c2, uint64_t seed)
    : in_channels_(in_channels) {
    if (in_channels < 1 || c1 < 1 || c2 < 1)
        throw shape_error("PerceptualExtractor: channel counts must be >= 1");
    Rng rng(seed);
    w1_ = frozen_conv_init({c1, in_channels, 3, 3}, rng);
    b1_ = frozen_conv_init({c1}, rng);
    w2_ = frozen_conv_init({c2, c1, 3, 3}, rng);
    b2_ = frozen_conv_init({c2}, rng);
}

Tensor PerceptualExtractor::features(const Tensor& x) const {
    Tensor h = silu(conv2d(x, w1_, b1_, 2, 1));
    return conv2d(h, w2_, b2_, 2, 1);
}

PerceptualExtractor extractor_from(const RunConfig& run) {
    return PerceptualExtractor(run.get_int("model.channels"),
                               run.get_int("metrics.feature_channels1"),
                               run.get_int("metrics.feature_channels2"),
                               run.get_u64("metrics.feature_seed"));
}

Tensor perceptual_distance(const PerceptualExtractor& F, const Tensor& x, const Tensor& y) {
    if (x.shape() != y.shape())
        throw shape_error("perceptual_distance: shapes differ, " + shape_str(x.shape()) +
                          " vs " + shape_str(y.shape()));
    return mse(F.features(x), F.features(y));
}

Tensor hkd_forward(const HkdModel& model, const Tensor& x_t, float t) {
    LatentPyramid p = model.encode(x_t, t);
    float dt = model.config().epsilon - t;
    LatentPyramid evolved = evolve_pyramid(p, model.koopman(), dt);
    return model.decode(evolved);
}

LossParts trajectory_consistency_loss(const HkdModel& model, const PerceptualExtractor& F,
                                      const std::vector<Tensor>& x_at_times,
                                      const std::vector<float>& times, const Tensor& x_eps,
                                      float lambda1, float lambda2) {
    if (times.empty() || x_at_times.size() != times.size())
        throw shape_error("trajectory_consistency_loss: need one state per sampled time");
    LossParts out;
    Tensor acc;
    float inv = 1.0f / static_cast<float>(times.size());
    for (size_t k = 0; k < times.size(); ++k) {
        Tensor pred = hkd_forward(model, x_at_times[k], times[k]);
        Tensor m = mse(pred, x_eps);
        Tensor f = perceptual_distance(F, pred, x_eps);
        out.mse_part += static_cast<double>(m.item()) * inv;
        out.feat_part += static_cast<double>(f.item()) * inv;
        Tensor term = add(scale(m, lambda1), scale(f, lambda2));
        acc = k == 0 ? term : add(acc, term);
    }
    out.total = scale(acc, inv);
    return out;
}

float lambda1_schedule(int epoch, int total_epochs) {
    double x = total_epochs > 0 ? double(epoch) / double(total_epochs) : 1.0;
    return static_cast<float>(std::pow(10.0, -std::pow(3.0, x)));
}

Checkpoint make_checkpoint(const HkdModel& model, const std::string& config_echo) {
    Checkpoint ck;
    ck.config_echo = config_echo;
    for (const auto& [name, t] : model.params())
        ck.params.emplace_back(name, Tensor::from_data(t.shape(), t.vec()));
    return ck;
}

void load_into_model(const Checkpoint& ck, HkdModel& model) {
    for (auto& [name, t] : model.params()) {
        const Tensor& src = ck.param(name);
        if (src.shape() != t.shape())
            throw shape_error("checkpoint parameter '" + name + "' has shape " +
                              shape_str(src.shape()) + ", model expects " +
                              shape_str(t.shape()));
        t.vec() = src.vec();
    }
}

static double grad_norm(const std::vector<Tensor>& ts) {
    double s = 0.0;
    for (const auto& t : ts)
        for (float g : t.grad()) s += double(g) * g;
    return std::sqrt(s);
}

static Tensor batch_states(const TrajectoryDataset& ds, const std::vector<int>& trajs,
                           int grid) {
    int B = static_cast<int>(trajs.size());
    int64_t dim = ds.state_dim();
    std::vector<float> data(static_cast<size_t>(B) * dim);
    for (int b = 0; b < B; ++b) {
        const float* src = ds.state(trajs[b], grid);
        std::copy(src, src + dim, data.begin() + int64_t(b) * dim);
    }
    return Tensor::from_data({B, ds.C, ds.H, ds.W}, std::move(data));
}

TrainResult train(HkdModel& model, const TrainConfig& cfg, const TrajectoryDataset& ds,
                  const PerceptualExtractor& F, const std::string& config_echo) {
    cfg.validate();
    ds.validate();
    const ModelConfig& mc = model.config();
    if (ds.C != mc.image_channels || ds.H != mc.image_size || ds.W != mc.image_size)
        throw config_error("dataset shape [" + std::to_string(ds.C) + "," +
                           std::to_string(ds.H) + "," + std::to_string(ds.W) +
                           "] contradicts model config [" +
                           std::to_string(mc.image_channels) + "," +
                           std::to_string(mc.image_size) + "," +
                           std::to_string(mc.image_size) + "]");
    if (std::abs(ds.schedule.epsilon - mc.epsilon) > 1e-6f ||
        std::abs(ds.schedule.horizon - mc.horizon) > 1e-6f)
        throw config_error("dataset schedule [" + std::to_string(ds.schedule.epsilon) + ", " +
                           std::to_string(ds.schedule.horizon) +
                           "] contradicts model config [" + std::to_string(mc.epsilon) + ", " +
                           std::to_string(mc.horizon) + "]");

    int iters = cfg.iters_per_epoch > 0 ? cfg.iters_per_epoch
                                        : std::max(1, ds.n_traj / cfg.batch);
    int n_grid = ds.n_grid();
    float span = mc.horizon - mc.epsilon;

    std::vector<Tensor> params = model.trainable_tensors();
    AdamState adam;
    AdamParams hp;
    hp.lr = cfg.lr;
    hp.beta1 = cfg.beta1;
    hp.beta2 = cfg.beta2;
    hp.eps = cfg.eps;
    hp.decay = cfg.decay;
    hp.steps_per_epoch = iters;

    std::ofstream metrics;
    if (!cfg.metrics_path.empty()) {
        metrics.open(cfg.metrics_path, std::ios::binary);
        if (!metrics) throw io_error("cannot open metrics log " + cfg.metrics_path);
        metrics << "iter,epoch,lambda1,loss_total,loss_mse,loss_feat,"
                   "grad_norm_theta,grad_norm_phi,grad_norm_A\n";
    }

    auto write_ckpt = [&](const std::string& path) {
        if (!path.empty()) write_checkpoint(make_checkpoint(model, config_echo), path);
    };

    Rng rng(cfg.seed);
    TrainResult result;
    int global_iter = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        float lambda1 = lambda1_schedule(epoch, cfg.epochs);
        for (int it = 0; it < iters; ++it, ++global_iter) {
            std::vector<int> trajs(cfg.batch);
            for (auto& tr : trajs) tr = rng.uniform_int(ds.n_traj);

            // S_t: horizon first, then samples-1 uniform grid draws below it.
            std::vector<int> grid_idx = {0};
            for (int k = 1; k < cfg.samples; ++k)
                grid_idx.push_back(1 + rng.uniform_int(n_grid - 1));

            std::vector<Tensor> x_at_times;
            std::vector<float> times;
            for (int g : grid_idx) {
                x_at_times.push_back(batch_states(ds, trajs, g));
                times.push_back(ds.times[g]);
            }
            Tensor x_eps = batch_states(ds, trajs, n_grid - 1);

            Tape tape;
            LossParts parts = trajectory_consistency_loss(model, F, x_at_times, times, x_eps,
                                                          lambda1, cfg.lambda2);
            double loss = parts.total.item();
            if (!std::isfinite(loss))
                throw numeric_error("non-finite training loss at iteration " +
                                    std::to_string(global_iter));
            tape.backward(parts.total);

            MetricsRow row;
            row.iter = global_iter;
            row.epoch = epoch;
            row.lambda1 = lambda1;
            row.loss_total = loss;
            row.loss_mse = parts.mse_part;
            row.loss_feat = parts.feat_part;
            row.grad_norm_theta = grad_norm(model.encoder_tensors());
            row.grad_norm_phi = grad_norm(model.decoder_tensors());
            row.grad_norm_A = grad_norm(model.koopman_tensors());

            adam_step(params, adam, hp);
            for (auto& op : model.koopman()) clamp_alpha(op, span);
            for (auto& p : params) p.zero_grad();

            if (global_iter == 0) result.initial_loss = loss;
            result.final_loss = loss;
            if (global_iter % std::max(1, cfg.log_interval) == 0 ||
                (epoch == cfg.epochs - 1 && it == iters - 1)) {
                result.metrics.push_back(row);
                if (metrics.is_open())
                    metrics << row.iter << ',' << row.epoch << ',' << row.lambda1 << ','
                            << row.loss_total << ',' << row.loss_mse << ',' << row.loss_feat
                            << ',' << row.grad_norm_theta << ',' << row.grad_norm_phi << ','
                            << row.grad_norm_A << '\n';
            }
        }
        if (!cfg.checkpoint_path.empty())
            write_ckpt(cfg.checkpoint_path + ".epoch" + std::to_string(epoch + 1));
    }
    write_ckpt(cfg.checkpoint_path);
    return result;
}

Tensor draw_terminal_noise(const ModelConfig& cfg, float noise_std, int n, uint64_t seed) {
    double std_T =
        std::sqrt(double(noise_std) * noise_std + double(cfg.horizon) * cfg.horizon);
    Rng rng(seed);
    std::vector<float> data(static_cast<size_t>(n) * cfg.image_channels * cfg.image_size *
                            cfg.image_size);
    for (auto& v : data) v = static_cast<float>(rng.normal() * std_T);
    return Tensor::from_data({n, cfg.image_channels, cfg.image_size, cfg.image_size},
                             std::move(data));
}

Tensor one_step_sample(const HkdModel& model, float noise_std, int n, uint64_t seed) {
    const ModelConfig& mc = model.config();
    return hkd_forward(model, draw_terminal_noise(mc, noise_std, n, seed), mc.horizon);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b, bool* defined) {
    size_t n = a.size();
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= double(n);
    mb /= double(n);
    double saa = 0, sbb = 0, sab = 0;
    for (size_t i = 0; i < n; ++i) {
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
        sab += (a[i] - ma) * (b[i] - mb);
    }
    if (saa < 1e-30 || sbb < 1e-30) {
        if (defined) *defined = false;
        return 0.0;
    }
    if (defined) *defined = true;
    return sab / std::sqrt(saa * sbb);
}

ProbeResult loss_equivalence_probe(const HkdModel& model, const PerceptualExtractor& F,
                                   const TrajectoryDataset& ds, int n_probe, float lambda1,
                                   float lambda2) {
    const ModelConfig& mc = model.config();
    Rng rng(0xC0FFEEull);
    ProbeResult out;
    int n_grid = ds.n_grid();
    for (int p = 0; p < n_probe; ++p) {
        int traj = rng.uniform_int(ds.n_traj);
        int g = 1 + rng.uniform_int(n_grid - 1);
        float t = ds.times[g];
        Tensor x_t = ds.state_tensor(traj, g);
        Tensor x_T = ds.state_tensor(traj, 0);
        Tensor x_eps = ds.state_tensor(traj, n_grid - 1);

        Tensor pred = hkd_forward(model, x_t, t);
        double img = lambda1 * mse(pred, x_eps).item() +
                     lambda2 * perceptual_distance(F, pred, x_eps).item();

        LatentPyramid z_t = model.encode(x_t, t);
        LatentPyramid z_T = model.encode(x_T, mc.horizon);
        LatentPyramid z_T_evolved = evolve_pyramid(z_T, model.koopman(), t - mc.horizon);
        double lat = 0.0;
        for (size_t l = 0; l < z_t.levels.size(); ++l) {
            const auto& a = z_t.levels[l].vec();
            const auto& b = z_T_evolved.levels[l].vec();
            for (size_t i = 0; i < a.size(); ++i)
                lat += double(a[i] - b[i]) * (a[i] - b[i]);
        }
        out.image_loss.push_back(img);
        out.latent_loss.push_back(lat);
    }
    out.correlation = pearson(out.image_loss, out.latent_loss, &out.defined);
    return out;
}

}  // namespace hkd
