#include "physiome/autograd.hpp"
#include "physiome/nn.hpp"
#include "physiome/optim.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace physiome;
using ag::Index;
using ag::Matrix;
using ag::Tensor;
using testsupport::finite_difference_check;
using testsupport::random_matrix;

namespace {

using Params = std::vector<std::pair<std::string, Tensor>>;

// Contracts an op's output with a fixed random matrix so every output entry
// contributes a distinct weight to the scalar loss.
void expect_gradients(const Params& leaves, const std::function<Tensor()>& op, double tol = 1e-6) {
    std::mt19937_64 rng(123);
    Matrix probe;
    {
        ag::NoGradGuard g;
        const Matrix out = op().value();
        probe = random_matrix(out.rows(), out.cols(), rng);
    }
    const Tensor weights(probe);
    const auto res = finite_difference_check(leaves, [&] { return ag::sum_all(ag::mul(op(), weights)); }, 64);
    EXPECT_LT(res.max_rel, tol) << res.worst;
    EXPECT_GT(res.checked, 0u);
}

Tensor leaf(Index r, Index c, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    return Tensor(random_matrix(r, c, rng, scale), true);
}

}  // namespace

TEST(Autograd, MatmulFamily) {
    auto a = leaf(3, 4, 1), b = leaf(4, 5, 2), c = leaf(5, 4, 3);
    expect_gradients({{"a", a}, {"b", b}}, [&] { return ag::matmul(a, b); });
    expect_gradients({{"a", a}, {"c", c}}, [&] { return ag::matmul_transposed(a, c); });
    EXPECT_TRUE(ag::matmul(a, b).value().isApprox(a.value() * b.value()));
}

TEST(Autograd, ElementwiseAndBroadcast) {
    auto a = leaf(3, 4, 4), b = leaf(3, 4, 5), row = leaf(1, 4, 6);
    expect_gradients({{"a", a}, {"b", b}}, [&] { return ag::add(a, b); });
    expect_gradients({{"a", a}, {"b", b}}, [&] { return ag::sub(a, b); });
    expect_gradients({{"a", a}, {"b", b}}, [&] { return ag::mul(a, b); });
    expect_gradients({{"a", a}}, [&] { return ag::scale(a, -2.5); });
    expect_gradients({{"a", a}, {"row", row}}, [&] { return ag::add_row(a, row); });
    expect_gradients({{"row", row}}, [&] { return ag::broadcast_rows(row, 5); });
    expect_gradients({{"a", a}, {"b", b}}, [&] {
        const std::vector<Tensor> t{a, b, a};
        return ag::sum_tensors(t);
    });
}

TEST(Autograd, Nonlinearities) {
    auto a = leaf(4, 5, 7);
    expect_gradients({{"a", a}}, [&] { return ag::gelu(a); });
    // Keep relu inputs away from the kink.
    Matrix v = a.value();
    for (Index i = 0; i < v.size(); ++i) {
        if (std::abs(v.data()[i]) < 0.05) v.data()[i] = 0.3;
    }
    Tensor r(v, true);
    expect_gradients({{"r", r}}, [&] { return ag::relu(r); });
    // gelu(x) = x * Phi(x)
    const double x = 0.7;
    const Tensor g = ag::gelu(Tensor(Matrix::Constant(1, 1, x)));
    EXPECT_NEAR(g.item(), x * 0.5 * (1 + std::erf(x / std::numbers::sqrt2)), 1e-3);
}

TEST(Autograd, RowNormalizations) {
    auto x = leaf(4, 6, 8), gamma = leaf(1, 6, 9), beta = leaf(1, 6, 10);
    expect_gradients({{"x", x}, {"gamma", gamma}, {"beta", beta}}, [&] { return ag::layer_norm(x, gamma, beta); });
    expect_gradients({{"x", x}}, [&] { return ag::softmax_rows(x); });
    expect_gradients({{"x", x}}, [&] { return ag::l2_normalize_rows(x); });
    const Matrix s = ag::softmax_rows(x).value();
    for (Index r = 0; r < s.rows(); ++r) EXPECT_NEAR(s.row(r).sum(), 1.0, 1e-12);
    const Matrix n = ag::l2_normalize_rows(x).value();
    for (Index r = 0; r < n.rows(); ++r) EXPECT_NEAR(n.row(r).norm(), 1.0, 1e-12);
}

TEST(Autograd, ZeroRowNormalizationThrows) {
    Matrix m = Matrix::Ones(2, 3);
    m.row(1).setZero();
    EXPECT_THROW(ag::l2_normalize_rows(Tensor(m)), std::domain_error);
}

TEST(Autograd, ShapeOps) {
    auto a = leaf(5, 4, 11), b = leaf(2, 4, 12), c = leaf(5, 3, 13);
    expect_gradients({{"a", a}}, [&] { return ag::transpose(a); });
    expect_gradients({{"a", a}}, [&] { return ag::slice_rows(a, 1, 3); });
    expect_gradients({{"a", a}}, [&] { return ag::slice_cols(a, 1, 2); });
    expect_gradients({{"a", a}, {"b", b}}, [&] {
        const std::vector<Tensor> parts{a, b};
        return ag::concat_rows(parts);
    });
    expect_gradients({{"a", a}, {"c", c}}, [&] {
        const std::vector<Tensor> parts{a, c};
        return ag::concat_cols(parts);
    });
    const std::vector<Index> rows{4, 0, 4, 2};
    expect_gradients({{"a", a}}, [&] { return ag::gather_rows(a, rows); });
}

TEST(Autograd, Reductions) {
    auto a = leaf(5, 4, 14);
    expect_gradients({{"a", a}}, [&] { return ag::mean_rows(a); });
    expect_gradients({{"a", a}}, [&] { return ag::sum_all(a); });
    expect_gradients({{"a", a}}, [&] { return ag::squared_norm(a); });
    auto sq = leaf(4, 4, 15, 3.0);
    expect_gradients({{"sq", sq}}, [&] { return ag::logsumexp_rows(sq); });
    expect_gradients({{"sq", sq}}, [&] { return ag::logsumexp_rows(sq, true); });
    const std::vector<Index> cols{3, 0, 1, 1};
    expect_gradients({{"sq", sq}}, [&] { return ag::pick(sq, cols); });

    const Matrix v = sq.value();
    const Matrix l = ag::logsumexp_rows(sq, true).value();
    for (Index r = 0; r < 4; ++r) {
        double s = 0;
        for (Index k = 0; k < 4; ++k) {
            if (k != r) s += std::exp(v(r, k));
        }
        EXPECT_NEAR(l(r, 0), std::log(s), 1e-12);
    }
}

TEST(Autograd, ConvolutionAndSegmentMean) {
    const Index segments = 2, length = 6, c_in = 3, c_out = 4, kernel = 3;
    auto x = leaf(segments * length, c_in, 16), w = leaf(kernel * c_in, c_out, 17), b = leaf(1, c_out, 18);
    expect_gradients({{"x", x}, {"w", w}, {"b", b}},
                     [&] { return ag::conv1d_same(x, w, b, segments, length, kernel); });
    expect_gradients({{"x", x}}, [&] { return ag::segment_mean(x, segments, length); });

    // Scalar-loop oracle with zero padding inside each segment.
    const Matrix y = ag::conv1d_same(x, w, b, segments, length, kernel).value();
    const Index pad = kernel / 2;
    for (Index s = 0; s < segments; ++s) {
        for (Index t = 0; t < length; ++t) {
            for (Index o = 0; o < c_out; ++o) {
                double acc = b.value()(0, o);
                for (Index k = 0; k < kernel; ++k) {
                    const Index src = t + k - pad;
                    if (src < 0 || src >= length) continue;
                    for (Index i = 0; i < c_in; ++i) acc += x.value()(s * length + src, i) * w.value()(k * c_in + i, o);
                }
                EXPECT_NEAR(y(s * length + t, o), acc, 1e-12);
            }
        }
    }
}

TEST(Autograd, DetachBlocksGradient) {
    auto a = leaf(2, 3, 19);
    const Tensor loss = ag::sum_all(ag::mul(ag::detach(a), a));
    loss.backward();
    EXPECT_TRUE(a.grad().isApprox(a.value()));
}

TEST(Autograd, GradientsAccumulateAcrossUses) {
    auto a = leaf(2, 2, 20);
    ag::sum_all(ag::add(a, a)).backward();
    EXPECT_TRUE(a.grad().isApprox(Matrix::Constant(2, 2, 2.0)));
}

TEST(Autograd, NoGradGuardBuildsNoGraph) {
    auto a = leaf(2, 2, 21);
    {
        ag::NoGradGuard g;
        EXPECT_FALSE(ag::grad_enabled());
        const Tensor y = ag::matmul(a, a);
        EXPECT_FALSE(y.requires_grad());
        EXPECT_TRUE(y.node()->parents.empty());
    }
    EXPECT_TRUE(ag::grad_enabled());
}

TEST(Autograd, DropoutIdentityAtZeroAndUnbiased) {
    std::mt19937_64 rng(3);
    auto a = leaf(4, 4, 22);
    EXPECT_TRUE(ag::dropout(a, 0.0, rng).value() == a.value());
    const Tensor ones(Matrix::Ones(200, 200));
    const Matrix d = ag::dropout(ones, 0.25, rng).value();
    EXPECT_NEAR(d.mean(), 1.0, 0.02);
    for (Index i = 0; i < d.size(); ++i) {
        const double v = d.data()[i];
        EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-12);
    }
}

TEST(Nn, SinusoidalTableMatchesFormula) {
    const Matrix t = nn::sinusoidal_table(11, 8);
    for (Index p = 0; p < 11; ++p) {
        for (Index i = 0; i < 4; ++i) {
            const double angle = static_cast<double>(p) / std::pow(10000.0, 2.0 * static_cast<double>(i) / 8.0);
            EXPECT_NEAR(t(p, 2 * i), std::sin(angle), 1e-12);
            EXPECT_NEAR(t(p, 2 * i + 1), std::cos(angle), 1e-12);
        }
    }
}

TEST(Nn, LinearMatchesAffineMap) {
    std::mt19937_64 rng(1);
    nn::Linear lin(4, 3, rng);
    const auto params = nn::named_parameters(lin, "lin");
    ASSERT_EQ(params.size(), 2u);
    const Tensor x(random_matrix(5, 4, rng));
    Matrix expected = x.value() * params[0].second.value();
    expected.rowwise() += params[1].second.value().row(0);
    EXPECT_TRUE(lin.forward(x).value().isApprox(expected, 1e-12));
}

TEST(Nn, LoraStartsAsIdentityDelta) {
    std::mt19937_64 rng(2);
    nn::Linear lin(6, 5, rng);
    const Tensor x(random_matrix(3, 6, rng));
    const Matrix before = lin.forward(x).value();
    lin.attach_lora(2, 4.0, 0.0, rng);
    ASSERT_TRUE(lin.lora().has_value());
    EXPECT_TRUE(lin.lora()->up.value().isZero(0.0));
    EXPECT_TRUE(testsupport::bit_equal(lin.forward(x).value(), before));
    EXPECT_DOUBLE_EQ(lin.lora()->scaling(), 2.0);
}

TEST(Nn, LoraDeltaMatchesLowRankFormula) {
    std::mt19937_64 rng(3);
    nn::Linear lin(6, 5, rng);
    const Tensor x(random_matrix(3, 6, rng));
    const Matrix base = lin.forward(x).value();
    lin.attach_lora(2, 3.0, 0.0, rng);
    auto params = nn::named_parameters(lin, "l");
    Tensor up;
    Tensor down;
    for (auto& [name, t] : params) {
        if (name.find("lora") != std::string::npos && t.rows() == 2) up = t;
        if (name.find("lora") != std::string::npos && t.rows() == 6) down = t;
    }
    ASSERT_TRUE(up.defined() && down.defined());
    up.mutable_value() = random_matrix(2, 5, rng);
    const Matrix expected = base + 1.5 * x.value() * down.value() * up.value();
    EXPECT_TRUE(lin.forward(x).value().isApprox(expected, 1e-12));
}

TEST(Nn, AttentionMatchesScalarOracle) {
    std::mt19937_64 rng(4);
    const Index dim = 4, heads = 2;
    nn::MultiHeadAttention attn(dim, heads, rng);
    const auto params = nn::named_parameters(attn, "a");
    ASSERT_EQ(params.size(), 8u);
    auto affine = [&](const Matrix& x, std::size_t which) {
        Matrix y = x * params[2 * which].second.value();
        y.rowwise() += params[2 * which + 1].second.value().row(0);
        return y;
    };
    const Matrix q_in = random_matrix(3, dim, rng), c_in = random_matrix(5, dim, rng);
    const Matrix q = affine(q_in, 0), k = affine(c_in, 1), v = affine(c_in, 2);
    const Index hd = dim / heads;
    Matrix mixed(3, dim);
    for (Index h = 0; h < heads; ++h) {
        for (Index i = 0; i < 3; ++i) {
            std::vector<double> w(5);
            double z = 0;
            for (Index j = 0; j < 5; ++j) {
                double s = 0;
                for (Index d = 0; d < hd; ++d) s += q(i, h * hd + d) * k(j, h * hd + d);
                w[static_cast<std::size_t>(j)] = std::exp(s / std::sqrt(static_cast<double>(hd)));
                z += w[static_cast<std::size_t>(j)];
            }
            for (Index d = 0; d < hd; ++d) {
                double acc = 0;
                for (Index j = 0; j < 5; ++j) acc += w[static_cast<std::size_t>(j)] / z * v(j, h * hd + d);
                mixed(i, h * hd + d) = acc;
            }
        }
    }
    const Matrix expected = affine(mixed, 3);
    EXPECT_TRUE(attn.forward(Tensor(q_in), Tensor(c_in)).value().isApprox(expected, 1e-10));
}

TEST(Nn, TransformerStackGradients) {
    std::mt19937_64 rng(5);
    nn::TransformerStack stack(4, 2, 2, true, rng);
    stack.attach_lora_qv(2, 2.0, 0.0, rng);
    auto params = nn::named_parameters(stack, "t");
    // Give the zero-initialized LoRA factors non-trivial values.
    for (auto& [name, t] : params) {
        if (name.find("lora") != std::string::npos) t.mutable_value() = random_matrix(t.rows(), t.cols(), rng, 0.3);
    }
    const Tensor x(random_matrix(3, 4, rng)), ctx(random_matrix(5, 4, rng));
    const Matrix probe = random_matrix(3, 4, rng);
    const auto res = finite_difference_check(
        params, [&] { return ag::sum_all(ag::mul(stack.forward(x, &ctx), Tensor(probe))); }, 12);
    EXPECT_LT(res.max_rel, 1e-5) << res.worst;
}

TEST(Optim, AdamWMatchesScalarOracle) {
    std::mt19937_64 rng(6);
    Tensor p(random_matrix(2, 3, rng), true);
    Tensor frozen(random_matrix(2, 2, rng), false);
    const Matrix frozen_before = frozen.value();
    optim::AdamWConfig cfg{0.01, 0.9, 0.99, 1e-8, 0.1};
    optim::AdamW opt({{"p", p}, {"f", frozen}}, cfg);
    EXPECT_EQ(opt.parameter_count(), 6u);

    std::vector<double> w(p.value().data(), p.value().data() + 6), m(6, 0.0), v(6, 0.0);
    for (int step = 1; step <= 5; ++step) {
        const Matrix target = random_matrix(2, 3, rng);
        opt.zero_grad();
        ag::squared_norm(ag::sub(p, Tensor(target))).backward();
        opt.step();
        for (std::size_t i = 0; i < 6; ++i) {
            const double g = 2 * (w[i] - target.data()[i]);
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.99 * v[i] + 0.01 * g * g;
            const double mh = m[i] / (1 - std::pow(0.9, step));
            const double vh = v[i] / (1 - std::pow(0.99, step));
            w[i] -= 0.01 * (mh / (std::sqrt(vh) + 1e-8) + 0.1 * w[i]);
        }
        for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(p.value().data()[i], w[i], 1e-12) << step;
    }
    EXPECT_TRUE(testsupport::bit_equal(frozen.value(), frozen_before));
}
