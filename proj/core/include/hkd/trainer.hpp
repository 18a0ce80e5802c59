#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hkd/netarch.hpp"
#include "hkd/persist.hpp"
#include "hkd/teacher.hpp"
#include "hkd/tensor.hpp"

namespace hkd {

struct TrainConfig {
    int batch = 16;
    int samples = 4;  // |S_t| including the mandatory horizon term
    int epochs = 4;
    int iters_per_epoch = 0;  // 0 = n_traj / batch
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float decay = 0.95f;  // per-epoch multiplicative parameter decay
    float lambda2 = 1.0f;
    uint64_t seed = 0;
    int log_interval = 10;
    std::string checkpoint_path;  // per-epoch and final checkpoints; empty = none
    std::string metrics_path;     // CSV log; empty = none

    void validate() const;
};

TrainConfig train_config_from(const RunConfig& run);

// Two frozen seeded conv layers (stride 2, SiLU between). Stands in for the
// pretrained feature network of a perceptual loss; weights depend only on the
// seed, never trained.
class PerceptualExtractor {
public:
    PerceptualExtractor(int in_channels, int c1, int c2, uint64_t seed);

    Tensor features(const Tensor& x) const;

    int in_channels() const { return in_channels_; }

private:
    int in_channels_;
    Tensor w1_, b1_, w2_, b2_;
};

PerceptualExtractor extractor_from(const RunConfig& run);

// ||F(x) - F(y)||^2 / numel(F)
Tensor perceptual_distance(const PerceptualExtractor& F, const Tensor& x, const Tensor& y);

// Encode at t, evolve every level by dt = epsilon - t, decode.
Tensor hkd_forward(const HkdModel& model, const Tensor& x_t, float t);

struct LossParts {
    Tensor total;
    double mse_part = 0.0;
    double feat_part = 0.0;
};

// Mean over sampled times of lambda1 * MSE + lambda2 * perceptual distance
// between hkd_forward(x_t, t) and the clean endpoint.
LossParts trajectory_consistency_loss(const HkdModel& model, const PerceptualExtractor& F,
                                      const std::vector<Tensor>& x_at_times,
                                      const std::vector<float>& times, const Tensor& x_eps,
                                      float lambda1, float lambda2);

// 10^(-3^(epoch/total)): 0.1 at epoch 0 down to 0.001 at the final epoch.
float lambda1_schedule(int epoch, int total_epochs);

struct MetricsRow {
    int iter = 0;
    int epoch = 0;
    float lambda1 = 0.0f;
    double loss_total = 0.0;
    double loss_mse = 0.0;
    double loss_feat = 0.0;
    double grad_norm_theta = 0.0;
    double grad_norm_phi = 0.0;
    double grad_norm_A = 0.0;
};

struct TrainResult {
    std::vector<MetricsRow> metrics;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Alg-style loop: per iteration draw a batch and S_t (horizon always
// included), backprop the consistency loss, Adam-update encoder, decoder and
// generators, clamp alpha. Deterministic given config.seed.
TrainResult train(HkdModel& model, const TrainConfig& cfg, const TrajectoryDataset& ds,
                  const PerceptualExtractor& F, const std::string& config_echo);

Checkpoint make_checkpoint(const HkdModel& model, const std::string& config_echo);
void load_into_model(const Checkpoint& ck, HkdModel& model);

// x_T ~ N(0, (noise_std^2 + horizon^2) I), the teacher's start distribution.
Tensor draw_terminal_noise(const ModelConfig& cfg, float noise_std, int n, uint64_t seed);

// Draws x_T as above and applies one forward pass (NFE = 1).
Tensor one_step_sample(const HkdModel& model, float noise_std, int n, uint64_t seed);

struct ProbeResult {
    double correlation = 0.0;
    bool defined = false;  // false when either loss vector is constant
    std::vector<double> image_loss;
    std::vector<double> latent_loss;
};

// Per-probe image-space loss vs latent-space discrepancy
// sum_l ||E(x_t) - e^{(t-T)A} E(x_T)||^2; reports their Pearson correlation.
ProbeResult loss_equivalence_probe(const HkdModel& model, const PerceptualExtractor& F,
                                   const TrajectoryDataset& ds, int n_probe, float lambda1,
                                   float lambda2);

double pearson(const std::vector<double>& a, const std::vector<double>& b, bool* defined);

}  // namespace hkd
