#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include "dygex/tensor.hpp"

namespace dygex {

// Reverse-mode tape. Forward values are computed eagerly as operations are
// recorded; backward() replays the closures in reverse order, which is
// reverse-topological because an operation's inputs always precede it.
// Gradients are materialized only for nodes that require them.
class Tape {
public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    Var constant(Tensor value);
    Var leaf(const Tensor& value);  // trainable

    const Tensor& val(Var v) const { return nodes_[v.id].value; }
    bool has_grad(Var v) const;
    const Tensor& grad(Var v) const;
    Tensor grad_or_zero(Var v) const;

    // loss must be scalar; gradients accumulate from a seed of 1.
    void backward(Var loss);

    void set_check_numerics(bool on) { check_numerics_ = on; }
    std::size_t size() const { return nodes_.size(); }
    void dump(std::ostream& os) const;

    // elementwise / broadcast
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var add_rowvec(Var x, Var bias);  // bias is 1 x n
    Var affine(Var x, double scale, double shift);
    Var leaky_relu(Var x, double slope);
    Var relu(Var x) { return leaky_relu(x, 0.0); }
    Var logistic(Var x);
    Var tanh(Var x);
    Var exp(Var x);
    Var log(Var x);
    Var sqrt(Var x);
    Var clamp01(Var x);  // subgradient 0 where clipped

    // linear algebra
    Var matmul(Var a, Var b);
    Var linear(Var x, Var w);  // x (m x k) times w^T with w stored (n x k)

    // reductions and glue
    Var sum(Var x);
    Var mean(Var x);
    Var dot(Var a, Var b);
    Var logsumexp(Var x);
    Var concat_cols(Var a, Var b);
    Var concat_rows(Var a, Var b);
    Var hstack(const std::vector<Var>& columns);
    Var stack_scalars(const std::vector<Var>& xs);
    Var gather_rows(Var x, std::vector<int> idx);
    Var pad_to(Var x, std::size_t rows, std::size_t cols);
    // zero-pads on the top/left so the input lands in the bottom-right corner
    Var pad_bottom_right(Var x, std::size_t rows, std::size_t cols);
    // dense (rows x cols) zeros with values[e] added at (row_idx[e], col_idx[e])
    Var scatter_rows(Var values, std::vector<int> row_idx, std::vector<int> col_idx,
                     std::size_t rows, std::size_t cols);
    Var row_normalize(Var x, double eps = 1e-12);

    // softmax family
    Var masked_softmax(Var x, Tensor mask);
    Var segment_softmax(Var x, std::vector<int> segments, int num_segments);

    // graph-structured kernels
    // out[to[e]] += gates[e] * x[from[e]]
    Var edge_combine(Var gates, Var x, std::vector<int> to, std::vector<int> from,
                     std::size_t out_rows);
    // out[i*B+k, j] = u[i,k] + v[i,j] for u, v of shape n x B
    Var rows_outer_sum(Var u, Var v);
    // per-block product: out rows [i*B, (i+1)*B) = a_i (B x B) * s_i (B x K)
    Var block_matmul(Var a, Var s, std::size_t block);
    // out[i*B + j] = xs[j][i] for B inputs of shape n x F
    Var interleave_rows(const std::vector<Var>& xs);

    // losses
    Var bce_from_probs(Var p, Tensor labels);  // probabilities clamped at 1e-12

private:
    struct Node {
        Tensor value;
        std::vector<int> inputs;
        std::function<void(Tape&, int)> back;
        const char* op;
        bool requires_grad;
    };

    Var push(Tensor value, std::vector<int> inputs, const char* op,
             std::function<void(Tape&, int)> back);
    bool needs(const std::vector<int>& inputs) const;
    Tensor& grad_buf(int id);
    void add_grad(int id, const Tensor& g);
    void check_value(const Tensor& t, const char* op) const;

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    bool check_numerics_ = true;

    friend struct TapeTestAccess;
};

}  // namespace dygex
