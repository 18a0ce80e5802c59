#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hkd/koopman.hpp"
#include "hkd/tensor.hpp"

namespace hkd {

class RunConfig;

struct ModelConfig {
    int image_channels = 1;
    int image_size = 16;
    int levels = 3;
    std::vector<int> latent_channels;  // d_l, all even
    std::vector<int> hidden_widths;
    float epsilon = 0.02f;
    float horizon = 3.0f;
    uint64_t seed = 0;

    int level_size(int level) const { return image_size >> (level - 1); }
    void validate() const;
};

ModelConfig model_config_from(const RunConfig& run);

// Replaces SiLU by identity everywhere, making encode/decode affine in their
// inputs. Test hook for additivity checks.
void set_identity_activation(bool on);
bool identity_activation();

// Hierarchical encoder, per-level Koopman generators, decoder. Parameters are
// a flat named table so checkpoints and the optimizer see one surface.
class HkdModel {
public:
    explicit HkdModel(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }

    std::vector<std::pair<std::string, Tensor>>& params() { return params_; }
    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;

    std::vector<KoopmanLevelOp>& koopman() { return koopman_; }
    const std::vector<KoopmanLevelOp>& koopman() const { return koopman_; }

    // x: [N,C,H,W], t in [epsilon, horizon]. Level l is reached by l-1
    // stride-2 descents; t enters as a constant t/T input channel.
    LatentPyramid encode(const Tensor& x, float t) const;

    // Bottleneck-up decoding with additive skip injection at each level.
    Tensor decode(const LatentPyramid& pyramid) const;

    int64_t param_count() const;

    std::vector<Tensor> trainable_tensors() const;
    std::vector<Tensor> encoder_tensors() const;
    std::vector<Tensor> decoder_tensors() const;
    std::vector<Tensor> koopman_tensors() const;

private:
    Tensor& add_param(const std::string& name, Tensor t);

    ModelConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<KoopmanLevelOp> koopman_;
};

}  // namespace hkd
