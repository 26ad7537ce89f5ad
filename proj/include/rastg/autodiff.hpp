#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rastg/ndarray.hpp"

// Reverse-mode differentiation over NdArray. Ops record onto the innermost
// live Tape (RAII); with no tape active they compute values only, which is
// the eval path. The tape is single-writer: one thread builds and runs it.

namespace rastg::nd {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    NdArray value;
    NdArray grad; // allocated lazily, same shape as value
    bool requires_grad = false;
    bool is_param = false; // parameter leaves keep their grad across sweeps
    std::function<void()> backward_fn;

    void ensure_grad();
    // grad += g
    void accumulate(const NdArray& g);
};

// Leaf wrapping a plain value (no gradient tracking).
Var constant(NdArray v);
// Leaf that participates in differentiation.
Var leaf(NdArray v, bool requires_grad);

// Generic op hook: value plus a backward that reads self->grad and
// accumulates into the parents it captured. Used by ops defined outside
// this module (e.g., adjacency normalization).
Var make_op(NdArray value, const std::vector<Var>& parents,
            std::function<void(Node*)> backward);

class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static bool recording();
    static Tape* current();

    // Reverse sweep from a scalar loss. Visits each recorded node exactly
    // once; intermediate grads are reset first, parameter grads accumulate.
    void backward(const Var& loss);

    std::size_t node_count() const { return nodes_.size(); }
    void add(Var v) { nodes_.push_back(std::move(v)); }

private:
    std::vector<Var> nodes_;
    Tape* prev_ = nullptr;
};

// Named trainable value. The node persists across tapes; gradients
// accumulate additively until zero_grad().
class Parameter {
public:
    Parameter() = default;
    Parameter(std::string name, NdArray init, bool trainable = true);

    const std::string& name() const { return name_; }
    const NdArray& value() const { return node_->value; }
    NdArray& value_mut() { return node_->value; }
    const NdArray& grad() const;
    bool trainable() const { return node_->requires_grad; }
    void zero_grad();
    const Var& var() const { return node_; }

private:
    std::string name_;
    Var node_;
};

// ---- primitive ops -------------------------------------------------------

Var add(const Var& a, const Var& b);
Var add_bias(const Var& x, const Var& b); // b rank-1, broadcast over last axis
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scalar_mul(const Var& a, double s);
Var relu(const Var& x);
Var add_relu(const Var& a, const Var& b); // relu(a + b), one stored array

// (..,M,K) x (K,N), or equal-rank batched (..,M,K) x (..,K,N)
Var matmul(const Var& a, const Var& b);
// (..,M,K) x (..,N,K) contracted over the trailing axis of both
Var matmul_nt(const Var& a, const Var& b);
Var linear(const Var& x, const Var& w, const Var& b);

Var softmax(const Var& x, int axis);

Var reshape(const Var& x, Shape shape);
Var transpose(const Var& x, const std::vector<int>& perm);
Var concat(const std::vector<Var>& xs, int axis);
Var slice(const Var& x, int axis, std::int64_t start, std::int64_t len);

Var mean_pool(const Var& x, const std::vector<int>& axes);
Var mean_all(const Var& x);

struct BnState {
    NdArray running_mean;
    NdArray running_var;
    std::int64_t batches_tracked = 0;
};

// Batch normalization over the trailing (channel) axis; statistics taken
// over all other axes. Train mode uses batch stats (eps added to the biased
// variance) and updates running stats with the given momentum; eval mode
// uses running stats. fuse_relu folds a ReLU into the op.
Var batch_norm_last(const Var& x, const Var& gamma, const Var& beta, BnState& state,
                    bool train, double eps = 1e-5, double momentum = 0.1,
                    bool fuse_relu = false);
// Spec-order wrapper: x is (N, C, T, V) with the channel axis at position 1.
Var batch_norm_nctv(const Var& x, const Var& gamma, const Var& beta, BnState& state,
                    bool train, double eps = 1e-5, double momentum = 0.1);

// Convolution along the frame axis only. Internal layout (N, T, V, C_in);
// kernel u is (C_out, C_in, k_t), bias (C_out). T' = (T + 2p - k_t)/s + 1.
Var temporal_conv_ntvc(const Var& x, const Var& u, const Var& bias, int stride, int padding);
// Spec-order wrapper for (N, C, T, V) inputs.
Var temporal_conv_nctv(const Var& x, const Var& u, const Var& bias, int stride, int padding);

// Fused graph convolution: y[n,t] = sum_k adj[k] * x[n,t] * w[k] with
// x (N,T,V,C_in), adj (K,V,V), w (K,C_in,C_out). No activation.
Var spatial_gcn_sum(const Var& x, const Var& adj, const Var& w);

// Mean Huber loss against a fixed target, continuous at |r| = delta.
Var huber_loss(const Var& pred, const NdArray& target, double delta);

} // namespace rastg::nd
