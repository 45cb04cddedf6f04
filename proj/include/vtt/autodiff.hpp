#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "vtt/tensor.hpp"

namespace vtt::inline VTT_PRECISION_NS {
namespace ad {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
   public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    bool valid() const { return tape_ != nullptr; }
    Tape& tape() const { return *tape_; }
    int id() const { return id_; }

   private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Receives the upstream gradient of the node and accumulates into its parents
// through Tape::accumulate.
using BackwardFn = std::function<void(std::span<const Scalar> grad_out, Tape& tape)>;

// Append-only record of one forward computation. Nodes are stored in creation
// order, which is a topological order because an op can only reference nodes
// that already exist.
class Tape {
   public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var leaf(Tensor value, bool requires_grad = true);

    // Used by op implementations. `fn` is dropped when no parent needs a gradient.
    Var record(std::string_view op, Tensor value, std::vector<Var> parents, BackwardFn fn);

    // Populates gradients of every node reachable from `root`, which must hold a
    // single element. Previous gradients are discarded, so calling backward for a
    // second root on the same tape is supported.
    void backward(Var root);

    // Gradient of a node from the last backward(); zeros if it did not participate.
    Tensor grad(Var v) const;

    void accumulate(Var v, std::span<const Scalar> g);
    void accumulate_at(Var v, std::size_t offset, std::span<const Scalar> g);

    std::size_t size() const { return nodes_.size(); }
    std::size_t last_backward_visits() const { return last_visits_; }
    std::string_view op_name(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].op; }

   private:
    friend class Var;

    struct Node {
        Tensor value;
        std::string_view op;
        bool requires_grad = false;
        BackwardFn backward;
    };

    std::vector<Scalar>& grad_buffer(int id);

    std::vector<Node> nodes_;
    std::vector<std::vector<Scalar>> grads_;
    std::size_t last_visits_ = 0;
};

// Elementwise ops require identical shapes; the only implicit broadcast is
// against a host scalar (scale, add_scalar).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, Scalar s);
Var add_scalar(Var a, Scalar s);
Var neg(Var a);

Var relu(Var a);
Var gelu(Var a);  // tanh approximation
Var silu(Var a);

// 2-D matrix product [m x k] * [k x n].
Var matmul(Var a, Var b);
Var transpose(Var a);
// x: [in] or [T x in], weight: [out x in], bias: [out] or invalid Var.
Var linear(Var x, Var weight, Var bias = {});

// Row-wise ops over the last axis (a rank-1 tensor is one row).
Var softmax(Var x, Scalar temperature = 1);
Var log_softmax(Var x, Scalar temperature = 1);
Var layer_norm(Var x, Var gain, Var bias, Scalar eps = Scalar(1e-5));
Var l2_normalize(Var x);

// axis 0 averages rows ([T x d] -> [d]); axis 1 averages columns ([T x d] -> [T]).
// A rank-1 input reduces to [1] with axis 0.
Var mean(Var x, std::size_t axis);
Var sum(Var x);

// Rank-1 inputs concatenate along axis 0; rank-2 along axis 0 (rows) or 1.
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length);
// Stacks rank-1 [d] parts into [n x d].
Var stack(const std::vector<Var>& rows);
// Row r of a [T x d] matrix as a rank-1 [d] tensor.
Var row(Var x, std::size_t r);
Var reshape(Var x, Shape shape);

// parts: P matrices [B x d]. Output row b*P + p is row b of parts[p].
Var interleave_rows(const std::vector<Var>& parts);
// Mean over consecutive blocks of `segment` rows: [B*segment x d] -> [B x d].
Var segment_mean(Var x, std::size_t segment);
// Same value, no gradient path.
Var detach(Var x);

// Gathers rows of `table` [V x d] for each id -> [T x d].
Var embedding(Var table, const std::vector<std::size_t>& ids);

// -(1/N) sum_i logp[i][labels[i]]
Var nll_loss(Var log_probs, const std::vector<std::size_t>& labels);

struct AttentionResult {
    Var output;      // [T x d]
    Tensor weights;  // [heads x T x T], rows sum to one
};

// Scaled dot-product attention over `heads` equal slices of the feature axis.
// With groups > 1 the rows are split into that many independent sequences of
// equal length (a batch); weights are then [groups*heads x T x T].
AttentionResult multi_head_attention(Var q, Var k, Var v, std::size_t heads, std::size_t groups = 1);

}  // namespace ad
}  // namespace vtt::inline VTT_PRECISION_NS
