#include "hkd/netarch.hpp"

#include <cmath>

#include "hkd/config.hpp"
#include "hkd/rng.hpp"

namespace hkd {

void ModelConfig::validate() const {
    if (image_channels < 1) throw shape_error("ModelConfig: image_channels must be >= 1");
    if (levels < 1) throw shape_error("ModelConfig: levels must be >= 1");
    if (image_size % (1 << (levels - 1)) != 0)
        throw shape_error("ModelConfig: image_size " + std::to_string(image_size) +
                          " not divisible by 2^(levels-1)");
    if (static_cast<int>(latent_channels.size()) != levels ||
        static_cast<int>(hidden_widths.size()) != levels)
        throw shape_error("ModelConfig: latent_channels/hidden_widths must list one entry "
                          "per level");
    for (int d : latent_channels)
        if (d < 2 || d % 2 != 0)
            throw shape_error("ModelConfig: latent channel counts must be even and >= 2");
    for (int w : hidden_widths)
        if (w < 1) throw shape_error("ModelConfig: hidden widths must be >= 1");
    if (!(epsilon > 0.0f) || !(horizon > epsilon))
        throw shape_error("ModelConfig: need 0 < epsilon < horizon");
}

namespace {
bool g_identity_act = false;

Tensor act(const Tensor& x) { return g_identity_act ? x : silu(x); }

Tensor kaiming_uniform(const Shape& shape, Rng& rng) {
    int fan_in = 1;
    for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
    for (float& v : data) v = static_cast<float>(rng.uniform(-bound, bound));
    return Tensor::from_data(shape, std::move(data), true);
}
}  // namespace

void set_identity_activation(bool on) { g_identity_act = on; }
bool identity_activation() { return g_identity_act; }

Tensor& HkdModel::add_param(const std::string& name, Tensor t) {
    for (auto& [n, _] : params_)
        if (n == name) throw std::runtime_error("duplicate parameter name " + name);
    t.set_requires_grad(true);
    params_.emplace_back(name, std::move(t));
    return params_.back().second;
}

Tensor& HkdModel::param(const std::string& name) {
    for (auto& [n, t] : params_)
        if (n == name) return t;
    throw std::runtime_error("unknown parameter " + name);
}

const Tensor& HkdModel::param(const std::string& name) const {
    return const_cast<HkdModel*>(this)->param(name);
}

HkdModel::HkdModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const int L = cfg_.levels;
    const auto& wid = cfg_.hidden_widths;
    const auto& lat = cfg_.latent_channels;

    for (int l = 1; l <= L; ++l) {
        const std::string p = "enc.l" + std::to_string(l) + ".";
        int in_ch = (l == 1) ? cfg_.image_channels + 1 : wid[l - 2];
        add_param(p + "conv1.w", kaiming_uniform({wid[l - 1], in_ch, 3, 3}, rng));
        add_param(p + "conv1.b", Tensor::zeros({wid[l - 1]}, true));
        add_param(p + "conv2.w", kaiming_uniform({wid[l - 1], wid[l - 1], 3, 3}, rng));
        add_param(p + "conv2.b", Tensor::zeros({wid[l - 1]}, true));
        add_param(p + "head.w", kaiming_uniform({lat[l - 1], wid[l - 1], 1, 1}, rng));
        add_param(p + "head.b", Tensor::zeros({lat[l - 1]}, true));
    }
    for (int l = 1; l <= L; ++l) {
        const std::string p = "dec.l" + std::to_string(l) + ".";
        add_param(p + "inj.w", kaiming_uniform({wid[l - 1], lat[l - 1], 1, 1}, rng));
        add_param(p + "inj.b", Tensor::zeros({wid[l - 1]}, true));
        if (l < L) {
            add_param(p + "proj.w", kaiming_uniform({wid[l - 1], wid[l], 1, 1}, rng));
            add_param(p + "proj.b", Tensor::zeros({wid[l - 1]}, true));
        }
        add_param(p + "conv.w", kaiming_uniform({wid[l - 1], wid[l - 1], 3, 3}, rng));
        add_param(p + "conv.b", Tensor::zeros({wid[l - 1]}, true));
    }
    // zero-initialized head: the untrained model outputs its bias image
    add_param("dec.head.w", Tensor::zeros({cfg_.image_channels, wid[0], 3, 3}, true));
    add_param("dec.head.b", Tensor::zeros({cfg_.image_channels}, true));

    for (int l = 1; l <= L; ++l) {
        const std::string p = "A.l" + std::to_string(l) + ".";
        int hl = cfg_.level_size(l);
        KoopmanLevelOp op;
        op.level = l;
        op.alpha = add_param(p + "alpha", Tensor::zeros({lat[l - 1] / 2, hl, hl}));
        op.beta = add_param(p + "beta", Tensor::zeros({lat[l - 1] / 2, hl, hl}));
        op.trainable = true;
        koopman_.push_back(op);
    }
}

LatentPyramid HkdModel::encode(const Tensor& x, float t) const {
    const Shape& xs = x.shape();
    if (xs.size() != 4 || xs[1] != cfg_.image_channels || xs[2] != cfg_.image_size ||
        xs[3] != cfg_.image_size)
        throw shape_error("encode: input " + shape_str(xs) + " does not match config [N," +
                          std::to_string(cfg_.image_channels) + "," +
                          std::to_string(cfg_.image_size) + "," +
                          std::to_string(cfg_.image_size) + "]");
    if (t < cfg_.epsilon || t > cfg_.horizon)
        throw numeric_error("encode: t = " + std::to_string(t) + " outside [" +
                            std::to_string(cfg_.epsilon) + ", " +
                            std::to_string(cfg_.horizon) + "]");
    LatentPyramid p;
    p.time_tag = t;
    Tensor hid = concat_const_channel(x, t / cfg_.horizon);
    for (int l = 1; l <= cfg_.levels; ++l) {
        const std::string pre = "enc.l" + std::to_string(l) + ".";
        if (l > 1) hid = resample2(hid, Resample::down);
        hid = act(conv2d(hid, param(pre + "conv1.w"), param(pre + "conv1.b"), 1, 1));
        hid = act(conv2d(hid, param(pre + "conv2.w"), param(pre + "conv2.b"), 1, 1));
        p.levels.push_back(conv2d(hid, param(pre + "head.w"), param(pre + "head.b"), 1, 0));
    }
    return p;
}

Tensor HkdModel::decode(const LatentPyramid& pyramid) const {
    if (static_cast<int>(pyramid.levels.size()) != cfg_.levels)
        throw shape_error("decode: pyramid has " + std::to_string(pyramid.levels.size()) +
                          " levels, config expects " + std::to_string(cfg_.levels));
    for (int l = 1; l <= cfg_.levels; ++l) {
        const Shape& zs = pyramid.levels[l - 1].shape();
        int hl = cfg_.level_size(l);
        if (zs.size() != 4 || zs[1] != cfg_.latent_channels[l - 1] || zs[2] != hl ||
            zs[3] != hl)
            throw shape_error("decode: level " + std::to_string(l) + " latent " +
                              shape_str(zs) + " does not match config");
    }
    const int L = cfg_.levels;
    std::string pre = "dec.l" + std::to_string(L) + ".";
    Tensor y = conv2d(pyramid.levels[L - 1], param(pre + "inj.w"), param(pre + "inj.b"), 1, 0);
    y = act(conv2d(y, param(pre + "conv.w"), param(pre + "conv.b"), 1, 1));
    for (int l = L - 1; l >= 1; --l) {
        pre = "dec.l" + std::to_string(l) + ".";
        y = resample2(y, Resample::up);
        y = conv2d(y, param(pre + "proj.w"), param(pre + "proj.b"), 1, 0);
        y = add(y, conv2d(pyramid.levels[l - 1], param(pre + "inj.w"),
                          param(pre + "inj.b"), 1, 0));
        y = act(conv2d(y, param(pre + "conv.w"), param(pre + "conv.b"), 1, 1));
    }
    return conv2d(y, param("dec.head.w"), param("dec.head.b"), 1, 1);
}

int64_t HkdModel::param_count() const {
    int64_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
}

std::vector<Tensor> HkdModel::trainable_tensors() const {
    std::vector<Tensor> out;
    for (const auto& [_, t] : params_) out.push_back(t);
    return out;
}

static std::vector<Tensor> by_prefix(const std::vector<std::pair<std::string, Tensor>>& ps,
                                     const std::string& prefix) {
    std::vector<Tensor> out;
    for (const auto& [n, t] : ps)
        if (n.rfind(prefix, 0) == 0) out.push_back(t);
    return out;
}

std::vector<Tensor> HkdModel::encoder_tensors() const { return by_prefix(params_, "enc."); }
std::vector<Tensor> HkdModel::decoder_tensors() const { return by_prefix(params_, "dec."); }
std::vector<Tensor> HkdModel::koopman_tensors() const { return by_prefix(params_, "A."); }

ModelConfig model_config_from(const RunConfig& run) {
    ModelConfig cfg;
    cfg.image_channels = run.get_int("model.channels");
    cfg.image_size = run.get_int("model.size");
    cfg.levels = run.get_int("model.levels");
    cfg.latent_channels = run.get_int_list("model.latent_channels");
    cfg.hidden_widths = run.get_int_list("model.hidden_widths");
    cfg.epsilon = static_cast<float>(run.get_double("model.epsilon"));
    cfg.horizon = static_cast<float>(run.get_double("model.horizon"));
    cfg.seed = run.get_u64("model.seed");
    cfg.validate();
    return cfg;
}

}  // namespace hkd
