#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace hkd {

struct shape_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// One node of the define-by-run graph. Ops allocate a fresh node per result;
// input buffers are never mutated.
struct TensorNode {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first touched by backward()
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0f);
    }
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, float value, bool requires_grad = false);
    static Tensor from_data(const Shape& shape, std::vector<float> data,
                            bool requires_grad = false);
    static Tensor scalar(float value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }

    std::vector<float>& vec() { return node_->data; }
    const std::vector<float>& vec() const { return node_->data; }
    float* data() { return node_->data.data(); }
    const float* data() const { return node_->data.data(); }

    // Value of a scalar tensor.
    float item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    // Gradient buffer; zeros if backward never reached this tensor.
    const std::vector<float>& grad() const;
    void zero_grad();

    std::shared_ptr<TensorNode>& node() { return node_; }
    const std::shared_ptr<TensorNode>& node() const { return node_; }

    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<TensorNode> node_;
};

// Records executed ops in forward order; backward() replays the chain rule
// in exact reverse order, visiting each recorded op once. Tapes nest; the
// innermost constructed tape is active. Ops executed with no active tape do
// not record (inference mode).
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();
    void record(const std::shared_ptr<TensorNode>& n);
    size_t size() const { return entries_.size(); }

    // loss must be scalar; populates grads on all reached requires_grad leaves.
    void backward(const Tensor& loss);

private:
    std::vector<std::shared_ptr<TensorNode>> entries_;
    Tape* prev_ = nullptr;
};

namespace detail {
// Builds the result node, wires parents and records on the active tape when
// any parent participates in gradient flow.
Tensor make_result(Shape shape, std::vector<float> data,
                   const std::vector<Tensor>& parents,
                   std::function<void(TensorNode&)> backward_fn);
}  // namespace detail

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor silu(const Tensor& a);

// ---- reductions (64-bit accumulation) ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// mean((a-b)^2), composed from the primitives above
Tensor mse(const Tensor& a, const Tensor& b);

// ---- spatial ops on [N,C,H,W] ----
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int pad);

enum class Resample { down, up };
// down: 2x2 average pooling; up: nearest-neighbor x2
Tensor resample2(const Tensor& input, Resample direction);

// Appends one constant-valued channel (time conditioning input).
Tensor concat_const_channel(const Tensor& input, float value);

// ---- optimizer ----
struct AdamState {
    std::vector<std::vector<float>> first_moment;
    std::vector<std::vector<float>> second_moment;
    int64_t step_count = 0;
};

struct AdamParams {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float decay = 1.0f;       // multiplicative per-epoch parameter decay
    int steps_per_epoch = 1;  // decay applied as decay^(1/steps_per_epoch)
};

void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamParams& hp);

bool all_finite(const Tensor& t);

}  // namespace hkd
