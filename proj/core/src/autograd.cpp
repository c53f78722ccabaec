#include "physiome/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace physiome::ag {

namespace {

thread_local bool g_grad_enabled = true;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                                    "x" + std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
    }
}

// Builds the result node. The backward closure is only attached when some
// parent participates in differentiation and grad mode is on.
Tensor make_result(Matrix value, std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& in : inputs) any = any || in.requires_grad();
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(inputs.size());
            for (auto& in : inputs) node->parents.push_back(in.node());
            node->backward = std::move(backward);
        }
    }
    return Tensor(std::move(node));
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Index rows, Index cols, bool requires_grad) {
    return Tensor(Matrix::Zero(rows, cols), requires_grad);
}

Tensor Tensor::scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return Tensor(std::move(m));
}

Matrix Tensor::grad() const {
    if (node_->grad.size() == 0) return Matrix::Zero(node_->value.rows(), node_->value.cols());
    return node_->grad;
}

double Tensor::item() const {
    if (node_->value.size() != 1) throw std::logic_error("item() on a non-scalar tensor");
    return node_->value(0, 0);
}

void Tensor::backward() const {
    if (node_->value.size() != 1) throw std::logic_error("backward() requires a scalar root");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->grad_buffer().array() += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.size() != 0) {
            n->backward(*n);
            // Interior gradients are not needed after propagation.
            if (!n->parents.empty()) n->grad.resize(0, 0);
        }
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
    Matrix out = a.value() * b.value();
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) pa.grad_buffer().noalias() += self.grad * pb.value.transpose();
        if (pb.requires_grad) pb.grad_buffer().noalias() += pa.value.transpose() * self.grad;
    });
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("matmul_transposed: dimension mismatch");
    Matrix out = a.value() * b.value().transpose();
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) pa.grad_buffer().noalias() += self.grad * pb.value;
        if (pb.requires_grad) pb.grad_buffer().noalias() += self.grad.transpose() * pa.value;
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Matrix out = a.value() + b.value();
    return make_result(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t i = 0; i < 2; ++i) {
            Node& p = parent(self, i);
            if (p.requires_grad) p.grad_buffer() += self.grad;
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Matrix out = a.value() - b.value();
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) pa.grad_buffer() += self.grad;
        if (pb.requires_grad) pb.grad_buffer() -= self.grad;
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Matrix out = a.value().cwiseProduct(b.value());
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) pa.grad_buffer() += self.grad.cwiseProduct(pb.value);
        if (pb.requires_grad) pb.grad_buffer() += self.grad.cwiseProduct(pa.value);
    });
}

Tensor scale(const Tensor& a, double s) {
    Matrix out = a.value() * s;
    return make_result(std::move(out), {a}, [s](Node& self) {
        Node& pa = parent(self, 0);
        pa.grad_buffer() += self.grad * s;
    });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: bad row shape");
    Matrix out = a.value().rowwise() + row.value().row(0);
    return make_result(std::move(out), {a, row}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& pr = parent(self, 1);
        if (pa.requires_grad) pa.grad_buffer() += self.grad;
        if (pr.requires_grad) pr.grad_buffer() += self.grad.colwise().sum();
    });
}

Tensor sum_tensors(std::span<const Tensor> terms) {
    if (terms.empty()) throw std::invalid_argument("sum_tensors: empty input");
    Matrix out = terms[0].value();
    for (std::size_t i = 1; i < terms.size(); ++i) {
        check_same_shape(terms[0], terms[i], "sum_tensors");
        out += terms[i].value();
    }
    return make_result(std::move(out), std::vector<Tensor>(terms.begin(), terms.end()), [](Node& self) {
        for (auto& p : self.parents) {
            if (p->requires_grad) p->grad_buffer() += self.grad;
        }
    });
}

Tensor relu(const Tensor& a) {
    Matrix out = a.value().cwiseMax(0.0);
    return make_result(std::move(out), {a}, [](Node& self) {
        Node& pa = parent(self, 0);
        pa.grad_buffer().array() += (pa.value.array() > 0.0).cast<double>() * self.grad.array();
    });
}

Tensor gelu(const Tensor& a) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    Matrix out = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
    return make_result(std::move(out), {a}, [](Node& self) {
        constexpr double kInvSqrt2Pi = 0.39894228040143267794;
        Node& pa = parent(self, 0);
        Matrix d = pa.value.unaryExpr([](double x) {
            return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        });
        pa.grad_buffer().array() += d.array() * self.grad.array();
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const Index rows = x.rows();
    const Index cols = x.cols();
    if (gamma.cols() != cols || beta.cols() != cols) throw std::invalid_argument("layer_norm: bad affine shape");
    Matrix xhat(rows, cols);
    Eigen::VectorXd inv_std(rows);
    for (Index r = 0; r < rows; ++r) {
        const auto row = x.value().row(r);
        const double mean = row.mean();
        const double var = (row.array() - mean).square().mean();
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (row.array() - mean) * inv_std[r];
    }
    Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
    return make_result(std::move(out), {x, gamma, beta},
                       [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                           Node& px = parent(self, 0);
                           Node& pg = parent(self, 1);
                           Node& pb = parent(self, 2);
                           if (pg.requires_grad) pg.grad_buffer() += self.grad.cwiseProduct(xhat).colwise().sum();
                           if (pb.requires_grad) pb.grad_buffer() += self.grad.colwise().sum();
                           if (px.requires_grad) {
                               const double n = static_cast<double>(xhat.cols());
                               Matrix dxhat = self.grad.array().rowwise() * pg.value.row(0).array();
                               Matrix& gx = px.grad_buffer();
                               for (Index r = 0; r < xhat.rows(); ++r) {
                                   const double mean_d = dxhat.row(r).mean();
                                   const double mean_dx = dxhat.row(r).dot(xhat.row(r)) / n;
                                   gx.row(r).array() +=
                                       inv_std[r] * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
                               }
                           }
                       });
}

Tensor softmax_rows(const Tensor& x) {
    Matrix out(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        const double m = x.value().row(r).maxCoeff();
        out.row(r) = (x.value().row(r).array() - m).exp();
        out.row(r) /= out.row(r).sum();
    }
    Matrix y = out;
    return make_result(std::move(out), {x}, [y = std::move(y)](Node& self) {
        Node& px = parent(self, 0);
        Matrix& g = px.grad_buffer();
        for (Index r = 0; r < y.rows(); ++r) {
            const double dot = self.grad.row(r).dot(y.row(r));
            g.row(r).array() += y.row(r).array() * (self.grad.row(r).array() - dot);
        }
    });
}

Tensor l2_normalize_rows(const Tensor& x) {
    Eigen::VectorXd norms = x.value().rowwise().norm();
    for (Index r = 0; r < norms.size(); ++r) {
        if (!(norms[r] > 0.0)) throw std::domain_error("cosine similarity undefined for a zero-norm vector");
    }
    Matrix out = x.value().array().colwise() / norms.array();
    Matrix y = out;
    return make_result(std::move(out), {x}, [y = std::move(y), norms = std::move(norms)](Node& self) {
        Node& px = parent(self, 0);
        Matrix& g = px.grad_buffer();
        for (Index r = 0; r < y.rows(); ++r) {
            const double dot = self.grad.row(r).dot(y.row(r));
            g.row(r) += (self.grad.row(r) - dot * y.row(r)) / norms[r];
        }
    });
}

Tensor transpose(const Tensor& a) {
    Matrix out = a.value().transpose();
    return make_result(std::move(out), {a}, [](Node& self) {
        parent(self, 0).grad_buffer() += self.grad.transpose();
    });
}

Tensor slice_rows(const Tensor& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) throw std::out_of_range("slice_rows out of range");
    Matrix out = a.value().middleRows(start, count);
    return make_result(std::move(out), {a}, [start, count](Node& self) {
        parent(self, 0).grad_buffer().middleRows(start, count) += self.grad;
    });
}

Tensor slice_cols(const Tensor& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) throw std::out_of_range("slice_cols out of range");
    Matrix out = a.value().middleCols(start, count);
    return make_result(std::move(out), {a}, [start, count](Node& self) {
        parent(self, 0).grad_buffer().middleCols(start, count) += self.grad;
    });
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
    Index rows = 0;
    const Index cols = parts[0].cols();
    for (const auto& p : parts) {
        if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    Index offset = 0;
    for (const auto& p : parts) {
        out.middleRows(offset, p.rows()) = p.value();
        offset += p.rows();
    }
    return make_result(std::move(out), std::vector<Tensor>(parts.begin(), parts.end()), [](Node& self) {
        Index off = 0;
        for (auto& p : self.parents) {
            const Index r = p->value.rows();
            if (p->requires_grad) p->grad_buffer() += self.grad.middleRows(off, r);
            off += r;
        }
    });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    Index cols = 0;
    const Index rows = parts[0].rows();
    for (const auto& p : parts) {
        if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += p.cols();
    }
    Matrix out(rows, cols);
    Index offset = 0;
    for (const auto& p : parts) {
        out.middleCols(offset, p.cols()) = p.value();
        offset += p.cols();
    }
    return make_result(std::move(out), std::vector<Tensor>(parts.begin(), parts.end()), [](Node& self) {
        Index off = 0;
        for (auto& p : self.parents) {
            const Index c = p->value.cols();
            if (p->requires_grad) p->grad_buffer() += self.grad.middleCols(off, c);
            off += c;
        }
    });
}

Tensor gather_rows(const Tensor& a, std::span<const Index> rows) {
    Matrix out(static_cast<Index>(rows.size()), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= a.rows()) throw std::out_of_range("gather_rows index out of range");
        out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
    }
    std::vector<Index> idx(rows.begin(), rows.end());
    return make_result(std::move(out), {a}, [idx = std::move(idx)](Node& self) {
        Matrix& g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    });
}

Tensor broadcast_rows(const Tensor& row, Index n) {
    if (row.rows() != 1) throw std::invalid_argument("broadcast_rows expects a single row");
    Matrix out = row.value().replicate(n, 1);
    return make_result(std::move(out), {row}, [](Node& self) {
        parent(self, 0).grad_buffer() += self.grad.colwise().sum();
    });
}

Tensor mean_rows(const Tensor& a) {
    if (a.rows() == 0) throw std::invalid_argument("mean_rows over zero rows");
    Matrix out = a.value().colwise().mean();
    return make_result(std::move(out), {a}, [](Node& self) {
        Node& pa = parent(self, 0);
        const double inv = 1.0 / static_cast<double>(pa.value.rows());
        pa.grad_buffer().rowwise() += self.grad.row(0) * inv;
    });
}

Tensor sum_all(const Tensor& a) {
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return make_result(std::move(out), {a}, [](Node& self) {
        parent(self, 0).grad_buffer().array() += self.grad(0, 0);
    });
}

Tensor squared_norm(const Tensor& a) {
    Matrix out(1, 1);
    out(0, 0) = a.value().squaredNorm();
    return make_result(std::move(out), {a}, [](Node& self) {
        Node& pa = parent(self, 0);
        pa.grad_buffer() += 2.0 * self.grad(0, 0) * pa.value;
    });
}

Tensor logsumexp_rows(const Tensor& x, bool exclude_diagonal) {
    const Index rows = x.rows();
    const Index cols = x.cols();
    if (exclude_diagonal && (rows > cols || cols < 2)) throw std::invalid_argument("logsumexp_rows: bad shape");
    Matrix out(rows, 1);
    Matrix weights = Matrix::Zero(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        double m = -std::numeric_limits<double>::infinity();
        for (Index c = 0; c < cols; ++c) {
            if (exclude_diagonal && c == r) continue;
            m = std::max(m, x.value()(r, c));
        }
        double s = 0.0;
        for (Index c = 0; c < cols; ++c) {
            if (exclude_diagonal && c == r) continue;
            weights(r, c) = std::exp(x.value()(r, c) - m);
            s += weights(r, c);
        }
        weights.row(r) /= s;
        out(r, 0) = m + std::log(s);
    }
    return make_result(std::move(out), {x}, [weights = std::move(weights)](Node& self) {
        Node& px = parent(self, 0);
        px.grad_buffer() += (weights.array().colwise() * self.grad.col(0).array()).matrix();
    });
}

Tensor pick(const Tensor& x, std::span<const Index> cols) {
    if (static_cast<Index>(cols.size()) != x.rows()) throw std::invalid_argument("pick: need one column per row");
    Matrix out(x.rows(), 1);
    for (Index r = 0; r < x.rows(); ++r) {
        if (cols[r] < 0 || cols[r] >= x.cols()) throw std::out_of_range("pick: column out of range");
        out(r, 0) = x.value()(r, cols[r]);
    }
    std::vector<Index> idx(cols.begin(), cols.end());
    return make_result(std::move(out), {x}, [idx = std::move(idx)](Node& self) {
        Matrix& g = parent(self, 0).grad_buffer();
        for (std::size_t r = 0; r < idx.size(); ++r) g(static_cast<Index>(r), idx[r]) += self.grad(static_cast<Index>(r), 0);
    });
}

Tensor detach(const Tensor& a) { return Tensor(a.value(), false); }

Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng) {
    if (p <= 0.0) return a;
    if (p >= 1.0) throw std::invalid_argument("dropout probability must be < 1");
    std::bernoulli_distribution keep(1.0 - p);
    Matrix mask(a.rows(), a.cols());
    for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
    Matrix out = a.value().cwiseProduct(mask);
    return make_result(std::move(out), {a}, [mask = std::move(mask)](Node& self) {
        parent(self, 0).grad_buffer() += self.grad.cwiseProduct(mask);
    });
}

Tensor conv1d_same(const Tensor& x, const Tensor& weight, const Tensor& bias, Index segments, Index length,
                   Index kernel) {
    const Index c_in = x.cols();
    const Index c_out = weight.cols();
    if (kernel % 2 == 0) throw std::invalid_argument("conv1d_same: kernel must be odd");
    if (x.rows() != segments * length) throw std::invalid_argument("conv1d_same: row count != segments*length");
    if (weight.rows() != kernel * c_in) throw std::invalid_argument("conv1d_same: weight shape mismatch");
    if (bias.rows() != 1 || bias.cols() != c_out) throw std::invalid_argument("conv1d_same: bias shape mismatch");
    const Index pad = kernel / 2;

    Matrix columns = Matrix::Zero(segments * length, kernel * c_in);
    const Matrix& xv = x.value();
    for (Index s = 0; s < segments; ++s) {
        for (Index t = 0; t < length; ++t) {
            const Index row = s * length + t;
            for (Index j = 0; j < kernel; ++j) {
                const Index src = t + j - pad;
                if (src < 0 || src >= length) continue;
                columns.row(row).segment(j * c_in, c_in) = xv.row(s * length + src);
            }
        }
    }
    Matrix out = columns * weight.value();
    out.rowwise() += bias.value().row(0);
    return make_result(std::move(out), {x, weight, bias},
                       [columns = std::move(columns), segments, length, kernel, c_in, pad](Node& self) {
                           Node& px = parent(self, 0);
                           Node& pw = parent(self, 1);
                           Node& pb = parent(self, 2);
                           if (pw.requires_grad) pw.grad_buffer().noalias() += columns.transpose() * self.grad;
                           if (pb.requires_grad) pb.grad_buffer() += self.grad.colwise().sum();
                           if (px.requires_grad) {
                               Matrix dcols = self.grad * pw.value.transpose();
                               Matrix& gx = px.grad_buffer();
                               for (Index s = 0; s < segments; ++s) {
                                   for (Index t = 0; t < length; ++t) {
                                       const Index row = s * length + t;
                                       for (Index j = 0; j < kernel; ++j) {
                                           const Index src = t + j - pad;
                                           if (src < 0 || src >= length) continue;
                                           gx.row(s * length + src) += dcols.row(row).segment(j * c_in, c_in);
                                       }
                                   }
                               }
                           }
                       });
}

Tensor segment_mean(const Tensor& x, Index segments, Index length) {
    if (x.rows() != segments * length || length <= 0) throw std::invalid_argument("segment_mean: bad shape");
    Matrix out(segments, x.cols());
    for (Index s = 0; s < segments; ++s) out.row(s) = x.value().middleRows(s * length, length).colwise().mean();
    return make_result(std::move(out), {x}, [segments, length](Node& self) {
        Matrix& g = parent(self, 0).grad_buffer();
        const double inv = 1.0 / static_cast<double>(length);
        for (Index s = 0; s < segments; ++s) g.middleRows(s * length, length).rowwise() += self.grad.row(s) * inv;
    });
}

}  // namespace physiome::ag
