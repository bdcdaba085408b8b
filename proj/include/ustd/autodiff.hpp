#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "ustd/common.hpp"

namespace ustd::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
    Tape* tape = nullptr;
    int idx = -1;

    const Mat& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
};

/// Reverse-mode tape over dense matrices. Each op records a closure that
/// accumulates parent gradients. Construct with track_grad=false for
/// forward-only evaluation (sampling); closures are then skipped entirely.
class Tape {
public:
    explicit Tape(bool track_grad = true) : track_(track_grad) {}

    bool tracking() const { return track_; }

    Var constant(Mat v);

    /// Leaf bound to an external parameter. After backward(), the local
    /// gradient is accumulated into *grad_sink (if tracking).
    Var param(const Mat& value, Mat* grad_sink);

    /// Run the reverse sweep from a 1x1 scalar node and flush parameter
    /// gradients into their sinks.
    void backward(const Var& loss);

    const Mat& value(int i) const { return nodes_[i].value; }
    Mat& grad(int i);
    bool needs_grad(int i) const { return nodes_[i].needs_grad; }

    std::size_t size() const { return nodes_.size(); }

    // -- recording internals used by the op free functions --
    // backward_fn receives the tape and the node's own index.
    Var emit(Mat value, bool needs_grad, std::function<void(Tape&, int)> backward_fn);

    /// When true, attention ops store their softmax matrices for inspection.
    bool record_attention = false;
    struct AttentionRecord {
        std::vector<Mat> probs;  // one per head (full) or per group x head (grouped)
        Eigen::Index score_rows = 0, score_cols = 0, groups = 1;
    };
    std::vector<AttentionRecord> attention_log;

private:
    struct Node {
        Mat value;
        Mat grad;
        bool needs_grad = false;
        std::function<void(Tape&, int)> backward_fn;
        Mat* sink = nullptr;
    };
    std::vector<Node> nodes_;
    bool track_;
};

inline const Mat& Var::value() const { return tape->value(idx); }

// ---- element-wise and linear ops ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);            // Hadamard
Var scale(Var a, double s);
Var matmul(Var a, Var b);
Var add_row(Var a, Var row);      // broadcast 1xd row over rows of a
Var mul_row(Var a, Var row);      // broadcast Hadamard with 1xd row
Var vtanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var silu(Var a);
Var vabs(Var a);
Var sum_all(Var a);               // -> 1x1
Var mean_all(Var a);              // -> 1x1

// ---- structural ops ----
Var gather_rows(Var a, std::vector<int> idx);
Var concat_rows(Var a, Var b);
/// (n*g)xd -> nx(g*d): consecutive groups of g rows merged into one row.
Var group_rows(Var a, int g);
/// nx(g*d) -> (n*g)xd: inverse of group_rows.
Var ungroup_rows(Var a, int g);
/// Mean over each consecutive group of g rows: (n*g)xd -> nxd.
Var mean_pool_rows(Var a, int g);
/// Apply (P kron I_stride): out[i*stride+t] = sum_j P(i,j) a[j*stride+t].
/// P is a fixed mixing matrix (no gradient through P).
Var mix_rows(Var a, const Mat& P, int stride);
/// Row-wise (x - mean) / sqrt(var + eps); affine terms applied separately.
Var layernorm_rows(Var a, double eps = 1e-6);

// ---- attention ----
/// Scaled dot-product attention over rows: q (n_q x d), k/v (n_k x d),
/// d divisible by heads; per-head scaling 1/sqrt(d/heads).
Var attention(Var q, Var k, Var v, int heads);
/// Per-group attention: q has G*qg rows, k/v have G*kg rows; group i of q
/// attends only to group i of k/v. Used for node-local attention where each
/// node's queries see only that node's own key/value tokens.
Var grouped_attention(Var q, Var k, Var v, int heads, int q_per_group, int kv_per_group);

}  // namespace ustd::ad
