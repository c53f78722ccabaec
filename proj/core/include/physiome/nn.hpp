#pragma once

#include "physiome/autograd.hpp"

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace physiome::nn {

using ag::Index;
using ag::Matrix;
using ag::Tensor;

using ParamVisitor = std::function<void(const std::string& name, Tensor& param)>;

// Training mode enables dropout; the rng is only touched when it does.
struct Mode {
    bool training = false;
    std::mt19937_64* rng = nullptr;
};

Tensor make_param(Matrix value);
Matrix xavier_uniform(Index in, Index out, std::mt19937_64& rng);
Matrix normal_matrix(Index rows, Index cols, double std, std::mt19937_64& rng);

// Fixed sinusoidal table: row p, column 2i -> sin(p / 10000^(2i/d)),
// column 2i+1 -> cos(same angle).
Matrix sinusoidal_table(Index positions, Index dim);

struct LoraAdapter {
    int rank = 0;
    double alpha = 1.0;
    double dropout = 0.0;
    Tensor down;  // in x rank
    Tensor up;    // rank x out, zero-initialized

    double scaling() const { return alpha / static_cast<double>(rank); }
};

class Linear {
public:
    Linear() = default;
    Linear(Index in, Index out, std::mt19937_64& rng, bool with_bias = true);

    Tensor forward(const Tensor& x, const Mode& mode = {}) const;

    // Adds a trainable low-rank delta: y = x W + b + (alpha/rank) * drop(x) A B.
    void attach_lora(int rank, double alpha, double dropout, std::mt19937_64& rng);
    const std::optional<LoraAdapter>& lora() const { return lora_; }

    void visit(const std::string& prefix, const ParamVisitor& fn);

    Index in_features() const { return weight_.rows(); }
    Index out_features() const { return weight_.cols(); }

private:
    Tensor weight_;
    Tensor bias_;
    bool has_bias_ = true;
    std::optional<LoraAdapter> lora_;
};

class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(Index dim);
    Tensor forward(const Tensor& x) const;
    void visit(const std::string& prefix, const ParamVisitor& fn);

private:
    Tensor gamma_;
    Tensor beta_;
};

// Two affine layers with a GELU in between.
class Mlp {
public:
    Mlp() = default;
    Mlp(Index in, Index hidden, Index out, std::mt19937_64& rng);
    Tensor forward(const Tensor& x, const Mode& mode = {}) const;
    void visit(const std::string& prefix, const ParamVisitor& fn);

private:
    Linear fc1_;
    Linear fc2_;
};

class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(Index dim, Index heads, std::mt19937_64& rng);

    Tensor forward(const Tensor& query, const Tensor& context, const Mode& mode = {}) const;
    void attach_lora_qv(int rank, double alpha, double dropout, std::mt19937_64& rng);
    void visit(const std::string& prefix, const ParamVisitor& fn);

private:
    Index heads_ = 1;
    Linear q_, k_, v_, o_;
};

// Pre-norm transformer block. With cross attention enabled, a second
// attention sublayer reads an external context sequence.
class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(Index dim, Index heads, Index mlp_ratio, bool cross_attention, std::mt19937_64& rng);

    Tensor forward(const Tensor& x, const Tensor* context, const Mode& mode = {}) const;
    void attach_lora_qv(int rank, double alpha, double dropout, std::mt19937_64& rng);
    void visit(const std::string& prefix, const ParamVisitor& fn);

private:
    bool cross_ = false;
    LayerNorm ln_self_;
    MultiHeadAttention self_attn_;
    LayerNorm ln_query_;
    LayerNorm ln_context_;
    MultiHeadAttention cross_attn_;
    LayerNorm ln_ff_;
    Mlp ff_;
};

class TransformerStack {
public:
    TransformerStack() = default;
    TransformerStack(Index dim, Index depth, Index heads, bool cross_attention, std::mt19937_64& rng);

    Tensor forward(const Tensor& x, const Tensor* context = nullptr, const Mode& mode = {}) const;
    void attach_lora_qv(int rank, double alpha, double dropout, std::mt19937_64& rng);
    void visit(const std::string& prefix, const ParamVisitor& fn);
    Index dim() const { return dim_; }

private:
    Index dim_ = 0;
    std::vector<TransformerBlock> blocks_;
    LayerNorm final_norm_;
};

// Collects every parameter reachable through `visit` into a flat list.
template <typename M>
std::vector<std::pair<std::string, Tensor>> named_parameters(M& module, const std::string& prefix) {
    std::vector<std::pair<std::string, Tensor>> out;
    module.visit(prefix, [&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
    return out;
}

}  // namespace physiome::nn
