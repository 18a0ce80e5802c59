#include "hkd/tensor.hpp"

#include <cmath>
#include <sstream>

namespace hkd {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw shape_error("non-positive dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return full(shape, 0.0f, requires_grad);
}

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->shape = shape;
    n->data.assign(static_cast<size_t>(shape_numel(shape)), value);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<float> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw shape_error("data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    auto n = std::make_shared<TensorNode>();
    n->shape = shape;
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(float value) { return full({1}, value); }

float Tensor::item() const {
    if (numel() != 1) throw shape_error("item() on non-scalar tensor " + shape_str(shape()));
    return node_->data[0];
}

const std::vector<float>& Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    node_->grad.assign(node_->data.size(), 0.0f);
}

// ---- tape ----

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() {
    prev_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const std::shared_ptr<TensorNode>& n) { entries_.push_back(n); }

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw shape_error("backward() requires a scalar loss, got " + shape_str(loss.shape()));
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0f;
    // Reverse execution order; a node with an empty grad buffer was never
    // reached from the loss and is skipped.
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        TensorNode& n = **it;
        if (n.grad.empty() || !n.backward_fn) continue;
        n.backward_fn(n);
    }
}

namespace detail {

Tensor make_result(Shape shape, std::vector<float> data,
                   const std::vector<Tensor>& parents,
                   std::function<void(TensorNode&)> backward_fn) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    n->requires_grad = rg;
    if (rg && Tape::active()) {
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
        Tape::active()->record(n);
    }
    return Tensor(std::move(n));
}

}  // namespace detail

// ---- elementwise ----

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<float> out(a.vec().size());
    const float* pa = a.data();
    const float* pb = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](TensorNode& n) {
        for (auto& p : n.parents) {
            p->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<float> out(a.vec().size());
    const float* pa = a.data();
    const float* pb = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] - pb[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](TensorNode& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        pa->ensure_grad();
        pb->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            pa->grad[i] += n.grad[i];
            pb->grad[i] -= n.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<float> out(a.vec().size());
    const float* pa = a.data();
    const float* pb = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](TensorNode& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        pa->ensure_grad();
        pb->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            pa->grad[i] += n.grad[i] * pb->data[i];
            pb->grad[i] += n.grad[i] * pa->data[i];
        }
    });
}

Tensor scale(const Tensor& a, float s) {
    std::vector<float> out(a.vec().size());
    const float* pa = a.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * s;
    return detail::make_result(a.shape(), std::move(out), {a}, [s](TensorNode& n) {
        auto& pa = n.parents[0];
        pa->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * s;
    });
}

Tensor silu(const Tensor& a) {
    std::vector<float> out(a.vec().size());
    const float* pa = a.data();
    for (size_t i = 0; i < out.size(); ++i) {
        float sig = 1.0f / (1.0f + std::exp(-pa[i]));
        out[i] = pa[i] * sig;
    }
    return detail::make_result(a.shape(), std::move(out), {a}, [](TensorNode& n) {
        auto& pa = n.parents[0];
        pa->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            float x = pa->data[i];
            float sig = 1.0f / (1.0f + std::exp(-x));
            pa->grad[i] += n.grad[i] * (sig * (1.0f + x * (1.0f - sig)));
        }
    });
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.vec()) acc += v;
    std::vector<float> out{static_cast<float>(acc)};
    return detail::make_result({1}, std::move(out), {a}, [](TensorNode& n) {
        auto& pa = n.parents[0];
        pa->ensure_grad();
        float g = n.grad[0];
        for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g;
    });
}

Tensor mean(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.vec()) acc += v;
    int64_t n_el = a.numel();
    std::vector<float> out{static_cast<float>(acc / static_cast<double>(n_el))};
    return detail::make_result({1}, std::move(out), {a}, [n_el](TensorNode& n) {
        auto& pa = n.parents[0];
        pa->ensure_grad();
        float g = n.grad[0] / static_cast<float>(n_el);
        for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g;
    });
}

Tensor mse(const Tensor& a, const Tensor& b) {
    Tensor d = sub(a, b);
    return mean(mul(d, d));
}

// ---- conv2d ----

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int pad) {
    const Shape& is = input.shape();
    const Shape& ks = kernel.shape();
    if (is.size() != 4) throw shape_error("conv2d: input must be 4-D, got " + shape_str(is));
    if (ks.size() != 4) throw shape_error("conv2d: kernel must be 4-D, got " + shape_str(ks));
    const int N = is[0], Cin = is[1], H = is[2], W = is[3];
    const int Cout = ks[0], KCin = ks[1], kh = ks[2], kw = ks[3];
    if (Cin != KCin)
        throw shape_error("conv2d: input channels " + std::to_string(Cin) +
                          " != kernel channels " + std::to_string(KCin));
    if (bias.shape() != Shape{Cout})
        throw shape_error("conv2d: bias shape " + shape_str(bias.shape()) +
                          " != [" + std::to_string(Cout) + "]");
    if (stride < 1) throw shape_error("conv2d: stride must be positive");
    if (pad < 0) throw shape_error("conv2d: pad must be non-negative");
    if (H + 2 * pad < kh || W + 2 * pad < kw)
        throw shape_error("conv2d: kernel larger than padded input, input " + shape_str(is) +
                          " kernel " + shape_str(ks) + " pad " + std::to_string(pad));
    // floor output size: trailing rows/columns that do not fit are dropped
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw shape_error("conv2d: empty output");

    std::vector<float> out(static_cast<size_t>(N) * Cout * Ho * Wo, 0.0f);
    const float* in = input.data();
    const float* k = kernel.data();
    const float* b = bias.data();

    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Cout; ++co) {
            float* op = out.data() + (static_cast<size_t>(n) * Cout + co) * Ho * Wo;
            float bv = b[co];
            for (int i = 0; i < Ho * Wo; ++i) op[i] = bv;
            for (int ci = 0; ci < Cin; ++ci) {
                const float* ip = in + (static_cast<size_t>(n) * Cin + ci) * H * W;
                const float* kp = k + (static_cast<size_t>(co) * Cin + ci) * kh * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        float wv = kp[ky * kw + kx];
                        if (wv == 0.0f) continue;
                        for (int y = 0; y < Ho; ++y) {
                            int iy = y * stride - pad + ky;
                            if (iy < 0 || iy >= H) continue;
                            const float* irow = ip + iy * W;
                            float* orow = op + y * Wo;
                            for (int x = 0; x < Wo; ++x) {
                                int ix = x * stride - pad + kx;
                                if (ix < 0 || ix >= W) continue;
                                orow[x] += wv * irow[ix];
                            }
                        }
                    }
                }
            }
        }
    }

    auto bwd = [=](TensorNode& node) {
        auto& pin = node.parents[0];
        auto& pk = node.parents[1];
        auto& pb = node.parents[2];
        pin->ensure_grad();
        pk->ensure_grad();
        pb->ensure_grad();
        const float* go = node.grad.data();
        for (int n = 0; n < N; ++n) {
            for (int co = 0; co < Cout; ++co) {
                const float* gp = go + (static_cast<size_t>(n) * Cout + co) * Ho * Wo;
                double bacc = 0.0;
                for (int i = 0; i < Ho * Wo; ++i) bacc += gp[i];
                pb->grad[co] += static_cast<float>(bacc);
                for (int ci = 0; ci < Cin; ++ci) {
                    const float* ip = pin->data.data() +
                                      (static_cast<size_t>(n) * Cin + ci) * H * W;
                    float* gip = pin->grad.data() +
                                 (static_cast<size_t>(n) * Cin + ci) * H * W;
                    const float* kp = pk->data.data() +
                                      (static_cast<size_t>(co) * Cin + ci) * kh * kw;
                    float* gkp = pk->grad.data() +
                                 (static_cast<size_t>(co) * Cin + ci) * kh * kw;
                    for (int ky = 0; ky < kh; ++ky) {
                        for (int kx = 0; kx < kw; ++kx) {
                            float wv = kp[ky * kw + kx];
                            double kacc = 0.0;
                            for (int y = 0; y < Ho; ++y) {
                                int iy = y * stride - pad + ky;
                                if (iy < 0 || iy >= H) continue;
                                const float* irow = ip + iy * W;
                                float* girow = gip + iy * W;
                                const float* grow = gp + y * Wo;
                                for (int x = 0; x < Wo; ++x) {
                                    int ix = x * stride - pad + kx;
                                    if (ix < 0 || ix >= W) continue;
                                    kacc += static_cast<double>(grow[x]) * irow[ix];
                                    girow[ix] += grow[x] * wv;
                                }
                            }
                            gkp[ky * kw + kx] += static_cast<float>(kacc);
                        }
                    }
                }
            }
        }
    };
    return detail::make_result({N, Cout, Ho, Wo}, std::move(out), {input, kernel, bias},
                               std::move(bwd));
}

// ---- resample2 ----

Tensor resample2(const Tensor& input, Resample direction) {
    const Shape& is = input.shape();
    if (is.size() != 4) throw shape_error("resample2: input must be 4-D, got " + shape_str(is));
    const int N = is[0], C = is[1], H = is[2], W = is[3];
    if (direction == Resample::down) {
        if (H % 2 != 0 || W % 2 != 0)
            throw shape_error("resample2 down: spatial size must be even, got " + shape_str(is));
        const int Ho = H / 2, Wo = W / 2;
        std::vector<float> out(static_cast<size_t>(N) * C * Ho * Wo);
        const float* in = input.data();
        for (int nc = 0; nc < N * C; ++nc) {
            const float* ip = in + static_cast<size_t>(nc) * H * W;
            float* op = out.data() + static_cast<size_t>(nc) * Ho * Wo;
            for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x)
                    op[y * Wo + x] = 0.25f * (ip[(2 * y) * W + 2 * x] +
                                              ip[(2 * y) * W + 2 * x + 1] +
                                              ip[(2 * y + 1) * W + 2 * x] +
                                              ip[(2 * y + 1) * W + 2 * x + 1]);
        }
        auto bwd = [=](TensorNode& node) {
            auto& p = node.parents[0];
            p->ensure_grad();
            for (int nc = 0; nc < N * C; ++nc) {
                float* gip = p->grad.data() + static_cast<size_t>(nc) * H * W;
                const float* gop = node.grad.data() + static_cast<size_t>(nc) * Ho * Wo;
                for (int y = 0; y < Ho; ++y)
                    for (int x = 0; x < Wo; ++x) {
                        float g = 0.25f * gop[y * Wo + x];
                        gip[(2 * y) * W + 2 * x] += g;
                        gip[(2 * y) * W + 2 * x + 1] += g;
                        gip[(2 * y + 1) * W + 2 * x] += g;
                        gip[(2 * y + 1) * W + 2 * x + 1] += g;
                    }
            }
        };
        return detail::make_result({N, C, Ho, Wo}, std::move(out), {input}, std::move(bwd));
    }
    const int Ho = H * 2, Wo = W * 2;
    std::vector<float> out(static_cast<size_t>(N) * C * Ho * Wo);
    const float* in = input.data();
    for (int nc = 0; nc < N * C; ++nc) {
        const float* ip = in + static_cast<size_t>(nc) * H * W;
        float* op = out.data() + static_cast<size_t>(nc) * Ho * Wo;
        for (int y = 0; y < Ho; ++y)
            for (int x = 0; x < Wo; ++x) op[y * Wo + x] = ip[(y / 2) * W + x / 2];
    }
    auto bwd = [=](TensorNode& node) {
        auto& p = node.parents[0];
        p->ensure_grad();
        for (int nc = 0; nc < N * C; ++nc) {
            float* gip = p->grad.data() + static_cast<size_t>(nc) * H * W;
            const float* gop = node.grad.data() + static_cast<size_t>(nc) * Ho * Wo;
            for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x) gip[(y / 2) * W + x / 2] += gop[y * Wo + x];
        }
    };
    return detail::make_result({N, C, Ho, Wo}, std::move(out), {input}, std::move(bwd));
}

Tensor concat_const_channel(const Tensor& input, float value) {
    const Shape& is = input.shape();
    if (is.size() != 4)
        throw shape_error("concat_const_channel: input must be 4-D, got " + shape_str(is));
    const int N = is[0], C = is[1], H = is[2], W = is[3];
    std::vector<float> out(static_cast<size_t>(N) * (C + 1) * H * W);
    const float* in = input.data();
    const size_t plane = static_cast<size_t>(H) * W;
    for (int n = 0; n < N; ++n) {
        float* op = out.data() + static_cast<size_t>(n) * (C + 1) * plane;
        const float* ip = in + static_cast<size_t>(n) * C * plane;
        std::copy(ip, ip + C * plane, op);
        std::fill(op + C * plane, op + (C + 1) * plane, value);
    }
    auto bwd = [=](TensorNode& node) {
        auto& p = node.parents[0];
        p->ensure_grad();
        for (int n = 0; n < N; ++n) {
            const float* gop = node.grad.data() + static_cast<size_t>(n) * (C + 1) * plane;
            float* gip = p->grad.data() + static_cast<size_t>(n) * C * plane;
            for (size_t i = 0; i < C * plane; ++i) gip[i] += gop[i];
        }
    };
    return detail::make_result({N, C + 1, H, W}, std::move(out), {input}, std::move(bwd));
}

// ---- Adam ----

void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamParams& hp) {
    if (hp.lr <= 0.0f) throw numeric_error("adam_step: lr must be positive");
    if (state.first_moment.empty()) {
        state.first_moment.resize(params.size());
        state.second_moment.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.first_moment[i].assign(params[i].vec().size(), 0.0f);
            state.second_moment[i].assign(params[i].vec().size(), 0.0f);
        }
    }
    if (state.first_moment.size() != params.size())
        throw shape_error("adam_step: state holds " + std::to_string(state.first_moment.size()) +
                          " buffers for " + std::to_string(params.size()) + " parameters");
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(static_cast<double>(hp.beta1), t);
    const double bc2 = 1.0 - std::pow(static_cast<double>(hp.beta2), t);
    const double decay_factor =
        std::pow(static_cast<double>(hp.decay), 1.0 / static_cast<double>(hp.steps_per_epoch));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].vec();
        const auto& g = params[i].grad();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        if (m.size() != p.size() || g.size() != p.size())
            throw shape_error("adam_step: buffer size mismatch on parameter " +
                              std::to_string(i));
        for (size_t j = 0; j < p.size(); ++j) {
            m[j] = hp.beta1 * m[j] + (1.0f - hp.beta1) * g[j];
            v[j] = hp.beta2 * v[j] + (1.0f - hp.beta2) * g[j] * g[j];
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            double upd = static_cast<double>(p[j]) -
                         hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
            p[j] = static_cast<float>(upd * decay_factor);
        }
    }
}

bool all_finite(const Tensor& t) {
    for (float v : t.vec())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace hkd
