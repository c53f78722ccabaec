#pragma once

#include "physiome/nn.hpp"
#include "physiome/signal.hpp"

#include <random>
#include <span>
#include <vector>

namespace physiome {

struct NeuroNetConfig {
    FrameSpec frames{4.0, 1.0};
    double sample_rate_hz = 100.0;
    double window_sec = 30.0;

    ag::Index frame_channels = 64;
    ag::Index encoder_dim = 512;
    ag::Index encoder_depth = 8;
    ag::Index encoder_heads = 8;
    ag::Index decoder_dim = 256;
    ag::Index decoder_depth = 8;
    ag::Index decoder_heads = 4;
    std::vector<ag::Index> projection_hidden{1024, 512};

    double mask_ratio = 0.8;
    double temperature = 0.1;
    double balance = 1.0;  // weight of the contrastive term

    std::size_t frame_length() const { return frames.in_samples(sample_rate_hz).first; }
    std::size_t token_count() const;
    void validate() const;
};

// |V| = max(1, round((1 - ratio) * n)).
std::size_t visible_count(std::size_t n, double mask_ratio);
// Sorted random subset of [0, n) with `count` elements.
std::vector<ag::Index> sample_indices(std::size_t n, std::size_t count, std::mt19937_64& rng);
// [0, n) minus `visible` (which must be sorted).
std::vector<ag::Index> complement_indices(std::size_t n, std::span<const ag::Index> visible);

// Multi-scale per-frame feature extractor: a shared convolution followed by
// three residual stacks (kernels 3, 5, 7), per-frame average pooling,
// concatenation and an MLP to the encoder width. Frames never interact.
class FrameNetwork {
public:
    FrameNetwork() = default;
    FrameNetwork(ag::Index frame_length, ag::Index channels, ag::Index out_dim, std::mt19937_64& rng);

    ag::Tensor forward(const ag::Matrix& frames) const;
    void visit(const std::string& prefix, const nn::ParamVisitor& fn);

private:
    struct ConvLayer {
        ag::Tensor weight;
        ag::Tensor bias;
        ag::Index kernel = 1;
    };
    struct Branch {
        ag::Index kernel = 3;
        std::vector<ConvLayer> convs;  // two per residual block
    };

    static ConvLayer make_conv(ag::Index c_in, ag::Index c_out, ag::Index kernel, std::mt19937_64& rng);
    ag::Tensor conv(const ConvLayer& layer, const ag::Tensor& x, ag::Index segments) const;

    ag::Index frame_length_ = 0;
    ConvLayer shared_;
    std::vector<Branch> branches_;
    nn::Mlp projection_;
};

struct MaskedPrediction {
    std::vector<ag::Index> visible;
    std::vector<ag::Index> masked;
    ag::Tensor latent;          // (|V| + 1) x D_enc, class token first
    ag::Tensor reconstruction;  // N x D_enc
};

class NeuroNet {
public:
    NeuroNet() = default;
    NeuroNet(const NeuroNetConfig& cfg, std::uint64_t seed);

    const NeuroNetConfig& config() const { return cfg_; }
    ag::Index token_count() const { return static_cast<ag::Index>(positional_.rows()); }

    ag::Tensor frame_encode(const ag::Matrix& frames) const;
    // Runs the transformer encoder over the selected tokens (positional
    // encoding added before selection) with the class token prepended.
    ag::Tensor encode_tokens(const ag::Tensor& tokens, std::span<const ag::Index> visible,
                             const nn::Mode& mode = {}) const;
    ag::Tensor encode_all(const ag::Tensor& tokens, const nn::Mode& mode = {}) const;
    // Mask tokens fill every position outside `visible`; returns N x D_enc.
    ag::Tensor decode(const ag::Tensor& latent, std::span<const ag::Index> visible) const;
    MaskedPrediction masked_predict(const ag::Tensor& tokens, double mask_ratio, std::mt19937_64& rng) const;

    // Mean over encoder outputs excluding the class token.
    static ag::Tensor pool(const ag::Tensor& latent);
    ag::Tensor project(const ag::Tensor& pooled) const;

    // Frozen-plus-adapter signal encoder used downstream: N x D_enc tokens
    // with the class token removed.
    ag::Tensor encode_signal(const ag::Matrix& frames, const nn::Mode& mode = {}) const;

    nn::TransformerStack& encoder() { return encoder_; }
    void visit(const std::string& prefix, const nn::ParamVisitor& fn);
    // Encoder-side parameters only (frame network, class token, encoder).
    void visit_encoder(const std::string& prefix, const nn::ParamVisitor& fn);

private:
    NeuroNetConfig cfg_;
    FrameNetwork frame_net_;
    ag::Tensor positional_;  // constant
    ag::Tensor class_token_;
    nn::TransformerStack encoder_;
    nn::Linear decoder_embed_;
    ag::Tensor mask_token_;
    ag::Tensor decoder_positional_;  // constant
    nn::TransformerStack decoder_;
    nn::Linear decoder_out_;
    nn::Mlp projection_;
};

// Mean over masked indices of ||r_i - z_i||^2; zero when `masked` is empty.
ag::Tensor inter_recon_loss(const ag::Tensor& reconstruction, const ag::Tensor& target,
                            std::span<const ag::Index> masked);

// NT-Xent over the 2B-view pool with cosine similarity, averaged over all
// 2B anchors. Rows of z_a and z_b at the same index are positives.
ag::Tensor nt_xent(const ag::Tensor& z_a, const ag::Tensor& z_b, double temperature);

// 0.5 * (recon1 + recon2) + balance * contrastive.
ag::Tensor neuronet_total_loss(const ag::Tensor& recon1, const ag::Tensor& recon2, const ag::Tensor& contrastive,
                               double balance);
double neuronet_total_loss(double recon1, double recon2, double contrastive, double balance);

struct NeuroNetLosses {
    ag::Tensor recon1;
    ag::Tensor recon2;
    ag::Tensor contrastive;
    ag::Tensor total;
};

// Two independent masked predictions per sample plus NT-Xent between the
// projected pooled latents of the two views.
NeuroNetLosses neuronet_batch_loss(const NeuroNet& net, std::span<const ag::Matrix> frames, std::mt19937_64& rng);

}  // namespace physiome
