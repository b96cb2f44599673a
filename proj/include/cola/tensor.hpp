#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cola/common.hpp"

namespace cola {

// Dense 2-D tensor with reverse-mode autodiff. Scalars are 1x1, row vectors
// 1xn. Values are row-major doubles. A Tensor is a cheap handle onto a shared
// node; ops append nodes to an implicit tape through their parent links, and
// backward() walks that graph in reverse topological order.
//
// Once an op writes a node's values they are immutable (read-only sharing
// across threads is safe). Parameter leaves are the one exception: the
// optimizer rewrites them between graph constructions.
class Tensor {
  public:
    struct Node {
        std::size_t rows = 0, cols = 0;
        std::vector<double> value;
        std::vector<double> grad;  // sized on first accumulation
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        // Pushes this node's grad into the parents' grads.
        std::function<void(Node&)> backprop;

        std::size_t size() const { return rows * cols; }
        void ensure_grad() {
            if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        }
    };

    Tensor() = default;

    static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
    static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor randn(std::size_t rows, std::size_t cols, Rng& rng, double stddev,
                        bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    std::size_t rows() const { return node_->rows; }
    std::size_t cols() const { return node_->cols; }
    std::size_t size() const { return node_->size(); }
    std::vector<std::size_t> shape() const { return {rows(), cols()}; }
    std::string shape_str() const;

    const std::vector<double>& values() const { return node_->value; }
    std::vector<double>& mutable_values() { return node_->value; }
    double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad() { node_->grad.clear(); }

    std::shared_ptr<Node> node() const { return node_; }

  private:
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
    std::shared_ptr<Node> node_;

    friend Tensor make_op(std::size_t rows, std::size_t cols,
                          std::vector<Tensor> parents,
                          std::function<void(Tensor::Node&)> backprop);
};

// While a guard is alive, new ops do not record backprop closures and their
// outputs never require grad. Forward values are unaffected.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// ---- ops -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// m [r x c] plus a row vector [1 x c] added to every row.
Tensor add_rowwise(const Tensor& m, const Tensor& row);
// axis 0: down columns; axis 1: along rows. Max-subtracted for stability.
Tensor softmax(const Tensor& x, int axis);
// Row-wise normalization over the last dimension, then affine by gain/bias
// (both [1 x c]). Population variance, epsilon inside the sqrt.
inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor gelu(const Tensor& x);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor mean_rows(const Tensor& x);  // [r x c] -> [1 x c]
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
// Gathers rows by index (repeats allowed); gradients scatter-add back.
Tensor select_rows(const Tensor& x, const std::vector<std::size_t>& rows);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
// Cosine of two equal-length vectors (any 1xN / Nx1 mix); returns a scalar.
// Defined as 0 with zero gradient when either norm is below 1e-12.
Tensor cosine(const Tensor& u, const Tensor& v);
// Assembles scalar tensors into an [r x c] matrix, row-major order.
Tensor stack_scalars(const std::vector<Tensor>& entries, std::size_t rows, std::size_t cols);

// ---- losses ----------------------------------------------------------

// Mean over entries of BCE(sigmoid(s * score), label), computed in the
// numerically safe logits form. labels entries must be 0 or 1.
Tensor sigmoid_bce_with_logits(const Tensor& scores, const Tensor& labels, double s);
// Symmetric InfoNCE with multi-positive numerators: mean over rows of
// -log(sum_pos exp / sum_all exp) plus the column-wise transposed term,
// halved. Every row and column must contain at least one positive label.
Tensor nce_loss(const Tensor& scores, const Tensor& labels, double s);

// ---- backward --------------------------------------------------------

// Populates grad on every requires_grad node reachable from `loss`
// (a scalar). Gradients accumulate additively across uses and across calls.
void backward(const Tensor& loss);

}  // namespace cola
