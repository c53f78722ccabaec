#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices. Every value is a 2-D matrix; scalars are 1x1.
namespace physiome::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Matrix& grad_buffer() {
        if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
        return grad;
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Matrix value, bool requires_grad = false);
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Index rows, Index cols, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Matrix& value() const { return node_->value; }
    // Direct write access for optimizers and checkpoint loading.
    Matrix& mutable_value() { return node_->value; }
    // Zero matrix of the value's shape when nothing has been accumulated.
    Matrix grad() const;
    bool has_grad() const { return node_->grad.size() != 0; }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    void zero_grad() { node_->grad.resize(0, 0); }

    Index rows() const { return node_->value.rows(); }
    Index cols() const { return node_->value.cols(); }
    double item() const;

    // Seeds d(self)/d(self) = 1 and propagates to every reachable leaf.
    void backward() const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Arithmetic.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_transposed(const Tensor& a, const Tensor& b);  // a * b^T
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// a (R x C) + row (1 x C) broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor sum_tensors(std::span<const Tensor> terms);

// Elementwise nonlinearities.
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);

// Row-wise normalizations.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor softmax_rows(const Tensor& x);
// Throws std::domain_error when a row has zero norm.
Tensor l2_normalize_rows(const Tensor& x);

// Shape manipulation.
Tensor transpose(const Tensor& a);
Tensor slice_rows(const Tensor& a, Index start, Index count);
Tensor slice_cols(const Tensor& a, Index start, Index count);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor gather_rows(const Tensor& a, std::span<const Index> rows);
// Repeats a 1 x C row n times.
Tensor broadcast_rows(const Tensor& row, Index n);

// Reductions.
Tensor mean_rows(const Tensor& a);      // R x C -> 1 x C
Tensor sum_all(const Tensor& a);        // -> 1 x 1
Tensor squared_norm(const Tensor& a);   // sum of squares -> 1 x 1
// log sum_k exp(x[r,k]); with exclude_diagonal, column r is skipped in row r.
Tensor logsumexp_rows(const Tensor& x, bool exclude_diagonal = false);
// out[r] = x[r, cols[r]] as an R x 1 column.
Tensor pick(const Tensor& x, std::span<const Index> cols);

// Identity in value, blocks gradient flow.
Tensor detach(const Tensor& a);

// Inverted dropout with a mask drawn from rng; identity when p == 0.
Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng);

// 1-D convolution with zero "same" padding applied independently to each of
// `segments` contiguous row blocks of length `length`. Layout: rows are
// (segment, time), columns are channels. weight is (kernel*c_in) x c_out.
Tensor conv1d_same(const Tensor& x, const Tensor& weight, const Tensor& bias, Index segments,
                   Index length, Index kernel);
// Mean over time within each segment: (segments*length) x C -> segments x C.
Tensor segment_mean(const Tensor& x, Index segments, Index length);

}  // namespace physiome::ag
