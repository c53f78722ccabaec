#include "physiome/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace physiome::nn {

Tensor make_param(Matrix value) { return Tensor(std::move(value), true); }

Matrix xavier_uniform(Index in, Index out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix m(in, out);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

Matrix normal_matrix(Index rows, Index cols, double std, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

Matrix sinusoidal_table(Index positions, Index dim) {
    Matrix table(positions, dim);
    for (Index p = 0; p < positions; ++p) {
        for (Index c = 0; c < dim; ++c) {
            const Index pair = c / 2;
            const double angle =
                static_cast<double>(p) / std::pow(10000.0, 2.0 * static_cast<double>(pair) / static_cast<double>(dim));
            table(p, c) = (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return table;
}

Linear::Linear(Index in, Index out, std::mt19937_64& rng, bool with_bias)
    : weight_(make_param(xavier_uniform(in, out, rng))),
      bias_(make_param(Matrix::Zero(1, out))),
      has_bias_(with_bias) {}

Tensor Linear::forward(const Tensor& x, const Mode& mode) const {
    Tensor y = ag::matmul(x, weight_);
    if (has_bias_) y = ag::add_row(y, bias_);
    if (lora_) {
        Tensor in = x;
        if (mode.training && lora_->dropout > 0.0 && mode.rng != nullptr) in = ag::dropout(x, lora_->dropout, *mode.rng);
        Tensor delta = ag::matmul(ag::matmul(in, lora_->down), lora_->up);
        y = ag::add(y, ag::scale(delta, lora_->scaling()));
    }
    return y;
}

void Linear::attach_lora(int rank, double alpha, double dropout, std::mt19937_64& rng) {
    if (rank <= 0) throw std::invalid_argument("LoRA rank must be positive");
    LoraAdapter adapter;
    adapter.rank = rank;
    adapter.alpha = alpha;
    adapter.dropout = dropout;
    // Kaiming-uniform style init for the down projection.
    const double limit = 1.0 / std::sqrt(static_cast<double>(in_features()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix down(in_features(), rank);
    for (Index i = 0; i < down.size(); ++i) down.data()[i] = dist(rng);
    adapter.down = make_param(std::move(down));
    adapter.up = make_param(Matrix::Zero(rank, out_features()));
    lora_ = std::move(adapter);
}

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + "/weight", weight_);
    if (has_bias_) fn(prefix + "/bias", bias_);
    if (lora_) {
        fn(prefix + "/lora/down", lora_->down);
        fn(prefix + "/lora/up", lora_->up);
    }
}

LayerNorm::LayerNorm(Index dim)
    : gamma_(make_param(Matrix::Ones(1, dim))), beta_(make_param(Matrix::Zero(1, dim))) {}

Tensor LayerNorm::forward(const Tensor& x) const { return ag::layer_norm(x, gamma_, beta_); }

void LayerNorm::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + "/gamma", gamma_);
    fn(prefix + "/beta", beta_);
}

Mlp::Mlp(Index in, Index hidden, Index out, std::mt19937_64& rng) : fc1_(in, hidden, rng), fc2_(hidden, out, rng) {}

Tensor Mlp::forward(const Tensor& x, const Mode& mode) const {
    return fc2_.forward(ag::gelu(fc1_.forward(x, mode)), mode);
}

void Mlp::visit(const std::string& prefix, const ParamVisitor& fn) {
    fc1_.visit(prefix + "/fc1", fn);
    fc2_.visit(prefix + "/fc2", fn);
}

MultiHeadAttention::MultiHeadAttention(Index dim, Index heads, std::mt19937_64& rng)
    : heads_(heads), q_(dim, dim, rng), k_(dim, dim, rng), v_(dim, dim, rng), o_(dim, dim, rng) {
    if (heads <= 0 || dim % heads != 0) {
        throw std::invalid_argument("attention dim " + std::to_string(dim) + " not divisible by " +
                                    std::to_string(heads) + " heads");
    }
}

Tensor MultiHeadAttention::forward(const Tensor& query, const Tensor& context, const Mode& mode) const {
    const Tensor q = q_.forward(query, mode);
    const Tensor k = k_.forward(context, mode);
    const Tensor v = v_.forward(context, mode);
    const Index head_dim = q.cols() / heads_;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<Tensor> outputs;
    outputs.reserve(static_cast<std::size_t>(heads_));
    for (Index h = 0; h < heads_; ++h) {
        const Tensor qh = ag::slice_cols(q, h * head_dim, head_dim);
        const Tensor kh = ag::slice_cols(k, h * head_dim, head_dim);
        const Tensor vh = ag::slice_cols(v, h * head_dim, head_dim);
        const Tensor attn = ag::softmax_rows(ag::scale(ag::matmul_transposed(qh, kh), inv_sqrt));
        outputs.push_back(ag::matmul(attn, vh));
    }
    const Tensor merged = heads_ == 1 ? outputs.front() : ag::concat_cols(outputs);
    return o_.forward(merged, mode);
}

void MultiHeadAttention::attach_lora_qv(int rank, double alpha, double dropout, std::mt19937_64& rng) {
    q_.attach_lora(rank, alpha, dropout, rng);
    v_.attach_lora(rank, alpha, dropout, rng);
}

void MultiHeadAttention::visit(const std::string& prefix, const ParamVisitor& fn) {
    q_.visit(prefix + "/q", fn);
    k_.visit(prefix + "/k", fn);
    v_.visit(prefix + "/v", fn);
    o_.visit(prefix + "/o", fn);
}

TransformerBlock::TransformerBlock(Index dim, Index heads, Index mlp_ratio, bool cross_attention,
                                   std::mt19937_64& rng)
    : cross_(cross_attention),
      ln_self_(dim),
      self_attn_(dim, heads, rng),
      ln_ff_(dim),
      ff_(dim, dim * mlp_ratio, dim, rng) {
    if (cross_) {
        ln_query_ = LayerNorm(dim);
        ln_context_ = LayerNorm(dim);
        cross_attn_ = MultiHeadAttention(dim, heads, rng);
    }
}

Tensor TransformerBlock::forward(const Tensor& x, const Tensor* context, const Mode& mode) const {
    const Tensor h = ln_self_.forward(x);
    Tensor y = ag::add(x, self_attn_.forward(h, h, mode));
    if (cross_) {
        if (context == nullptr) throw std::invalid_argument("cross-attention block needs a context");
        const Tensor c = ln_context_.forward(*context);
        y = ag::add(y, cross_attn_.forward(ln_query_.forward(y), c, mode));
    }
    return ag::add(y, ff_.forward(ln_ff_.forward(y), mode));
}

void TransformerBlock::attach_lora_qv(int rank, double alpha, double dropout, std::mt19937_64& rng) {
    self_attn_.attach_lora_qv(rank, alpha, dropout, rng);
}

void TransformerBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
    ln_self_.visit(prefix + "/ln_self", fn);
    self_attn_.visit(prefix + "/self_attn", fn);
    if (cross_) {
        ln_query_.visit(prefix + "/ln_query", fn);
        ln_context_.visit(prefix + "/ln_context", fn);
        cross_attn_.visit(prefix + "/cross_attn", fn);
    }
    ln_ff_.visit(prefix + "/ln_ff", fn);
    ff_.visit(prefix + "/ff", fn);
}

TransformerStack::TransformerStack(Index dim, Index depth, Index heads, bool cross_attention, std::mt19937_64& rng)
    : dim_(dim), final_norm_(dim) {
    blocks_.reserve(static_cast<std::size_t>(depth));
    for (Index i = 0; i < depth; ++i) blocks_.emplace_back(dim, heads, 4, cross_attention, rng);
}

Tensor TransformerStack::forward(const Tensor& x, const Tensor* context, const Mode& mode) const {
    Tensor h = x;
    for (const auto& block : blocks_) h = block.forward(h, context, mode);
    return final_norm_.forward(h);
}

void TransformerStack::attach_lora_qv(int rank, double alpha, double dropout, std::mt19937_64& rng) {
    for (auto& block : blocks_) block.attach_lora_qv(rank, alpha, dropout, rng);
}

void TransformerStack::visit(const std::string& prefix, const ParamVisitor& fn) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit(prefix + "/block" + std::to_string(i), fn);
    final_norm_.visit(prefix + "/norm", fn);
}

}  // namespace physiome::nn
