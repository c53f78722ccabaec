#include "physiome/neuronet.hpp"

#include "physiome/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace physiome {

using ag::Index;
using ag::Matrix;
using ag::Tensor;

std::size_t NeuroNetConfig::token_count() const {
    const auto length = static_cast<std::size_t>(std::llround(window_sec * sample_rate_hz));
    return frames.frame_count(length, sample_rate_hz);
}

void NeuroNetConfig::validate() const {
    frames.validate();
    if (encoder_dim % encoder_heads != 0) {
        throw ConfigError("encoder dim " + std::to_string(encoder_dim) + " is not divisible by " +
                          std::to_string(encoder_heads) + " heads");
    }
    if (decoder_dim % decoder_heads != 0) throw ConfigError("decoder dim must be divisible by decoder heads");
    if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("mask ratio must be in [0, 1)");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (!(balance >= 0.0)) throw ConfigError("balance scale must be >= 0");
    if (projection_hidden.size() != 2) throw ConfigError("projection_hidden needs exactly two sizes");
    if (frame_channels < 1 || encoder_depth < 1 || decoder_depth < 1) throw ConfigError("network sizes must be >= 1");
    token_count();
}

std::size_t visible_count(std::size_t n, double mask_ratio) {
    const auto kept = static_cast<std::size_t>(std::llround((1.0 - mask_ratio) * static_cast<double>(n)));
    return std::clamp<std::size_t>(kept, 1, std::max<std::size_t>(n, 1));
}

std::vector<Index> sample_indices(std::size_t n, std::size_t count, std::mt19937_64& rng) {
    if (count > n) throw std::invalid_argument("cannot sample more indices than available");
    std::vector<Index> all(n);
    std::iota(all.begin(), all.end(), Index{0});
    // Partial Fisher-Yates keeps the draw count independent of n - count.
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(all[i], all[pick(rng)]);
    }
    all.resize(count);
    std::sort(all.begin(), all.end());
    return all;
}

std::vector<Index> complement_indices(std::size_t n, std::span<const Index> visible) {
    std::vector<Index> out;
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (j < visible.size() && visible[j] == static_cast<Index>(i)) {
            ++j;
        } else {
            out.push_back(static_cast<Index>(i));
        }
    }
    return out;
}

FrameNetwork::ConvLayer FrameNetwork::make_conv(Index c_in, Index c_out, Index kernel, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(kernel * c_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix w(kernel * c_in, c_out);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
    return ConvLayer{nn::make_param(std::move(w)), nn::make_param(Matrix::Zero(1, c_out)), kernel};
}

FrameNetwork::FrameNetwork(Index frame_length, Index channels, Index out_dim, std::mt19937_64& rng)
    : frame_length_(frame_length) {
    shared_ = make_conv(1, channels, 7, rng);
    for (Index kernel : {Index{3}, Index{5}, Index{7}}) {
        Branch b;
        b.kernel = kernel;
        for (int i = 0; i < 4; ++i) b.convs.push_back(make_conv(channels, channels, kernel, rng));
        branches_.push_back(std::move(b));
    }
    projection_ = nn::Mlp(3 * channels, out_dim, out_dim, rng);
}

Tensor FrameNetwork::conv(const ConvLayer& layer, const Tensor& x, Index segments) const {
    return ag::conv1d_same(x, layer.weight, layer.bias, segments, frame_length_, layer.kernel);
}

Tensor FrameNetwork::forward(const Matrix& frames) const {
    if (frames.cols() != frame_length_) throw std::invalid_argument("frame length does not match the frame network");
    if (!frames.allFinite()) throw std::invalid_argument("frame input contains non-finite values");
    const Index segments = frames.rows();
    const Tensor x(Eigen::Map<const Matrix>(frames.data(), segments * frame_length_, 1));
    const Tensor h = ag::relu(conv(shared_, x, segments));
    std::vector<Tensor> pooled;
    for (const auto& branch : branches_) {
        Tensor b = h;
        for (std::size_t i = 0; i + 1 < branch.convs.size(); i += 2) {
            const Tensor t = conv(branch.convs[i + 1], ag::relu(conv(branch.convs[i], b, segments)), segments);
            b = ag::relu(ag::add(b, t));
        }
        pooled.push_back(ag::segment_mean(b, segments, frame_length_));
    }
    return projection_.forward(ag::concat_cols(pooled));
}

void FrameNetwork::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
    fn(prefix + "/shared/weight", shared_.weight);
    fn(prefix + "/shared/bias", shared_.bias);
    for (auto& branch : branches_) {
        const std::string bp = prefix + "/k" + std::to_string(branch.kernel);
        for (std::size_t i = 0; i < branch.convs.size(); ++i) {
            auto& c = branch.convs[i];
            fn(bp + "/conv" + std::to_string(i) + "/weight", c.weight);
            fn(bp + "/conv" + std::to_string(i) + "/bias", c.bias);
        }
    }
    projection_.visit(prefix + "/projection", fn);
}

NeuroNet::NeuroNet(const NeuroNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const auto n = static_cast<Index>(cfg_.token_count());
    frame_net_ = FrameNetwork(static_cast<Index>(cfg_.frame_length()), cfg_.frame_channels, cfg_.encoder_dim, rng);
    positional_ = Tensor(nn::sinusoidal_table(n, cfg_.encoder_dim));
    class_token_ = nn::make_param(nn::normal_matrix(1, cfg_.encoder_dim, 0.02, rng));
    encoder_ = nn::TransformerStack(cfg_.encoder_dim, cfg_.encoder_depth, cfg_.encoder_heads, false, rng);
    decoder_embed_ = nn::Linear(cfg_.encoder_dim, cfg_.decoder_dim, rng);
    mask_token_ = nn::make_param(nn::normal_matrix(1, cfg_.decoder_dim, 0.02, rng));
    decoder_positional_ = Tensor(nn::sinusoidal_table(n, cfg_.decoder_dim));
    decoder_ = nn::TransformerStack(cfg_.decoder_dim, cfg_.decoder_depth, cfg_.decoder_heads, false, rng);
    decoder_out_ = nn::Linear(cfg_.decoder_dim, cfg_.encoder_dim, rng);
    projection_ = nn::Mlp(cfg_.encoder_dim, cfg_.projection_hidden[0], cfg_.projection_hidden[1], rng);
}

Tensor NeuroNet::frame_encode(const Matrix& frames) const {
    if (frames.rows() < 1) throw std::invalid_argument("frame_encode needs at least one frame");
    return frame_net_.forward(frames);
}

Tensor NeuroNet::encode_tokens(const Tensor& tokens, std::span<const Index> visible, const nn::Mode& mode) const {
    if (tokens.rows() == 0) throw std::invalid_argument("empty token sequence");
    if (tokens.rows() != positional_.rows()) {
        throw std::invalid_argument("token count " + std::to_string(tokens.rows()) +
                                    " does not match the positional table (" + std::to_string(positional_.rows()) +
                                    ")");
    }
    const Tensor placed = ag::gather_rows(ag::add(tokens, positional_), visible);
    const Tensor parts[] = {class_token_, placed};
    return encoder_.forward(ag::concat_rows(parts), nullptr, mode);
}

Tensor NeuroNet::encode_all(const Tensor& tokens, const nn::Mode& mode) const {
    std::vector<Index> all(static_cast<std::size_t>(tokens.rows()));
    std::iota(all.begin(), all.end(), Index{0});
    return encode_tokens(tokens, all, mode);
}

Tensor NeuroNet::decode(const Tensor& latent, std::span<const Index> visible) const {
    const Index n = positional_.rows();
    const auto v = static_cast<Index>(visible.size());
    if (latent.rows() != v + 1) throw std::invalid_argument("latent rows must equal |visible| + 1");
    const Tensor embedded = decoder_embed_.forward(latent);
    const Tensor pool_parts[] = {embedded, mask_token_};
    const Tensor pool = ag::concat_rows(pool_parts);
    std::vector<Index> source(static_cast<std::size_t>(n), v + 1);
    for (Index k = 0; k < v; ++k) source[static_cast<std::size_t>(visible[static_cast<std::size_t>(k)])] = k + 1;
    const Tensor seq = ag::add(ag::gather_rows(pool, source), decoder_positional_);
    const Tensor parts[] = {ag::slice_rows(embedded, 0, 1), seq};
    const Tensor decoded = decoder_.forward(ag::concat_rows(parts));
    return decoder_out_.forward(ag::slice_rows(decoded, 1, n));
}

MaskedPrediction NeuroNet::masked_predict(const Tensor& tokens, double mask_ratio, std::mt19937_64& rng) const {
    if (tokens.rows() == 0) throw std::invalid_argument("masked_predict on an empty sequence");
    if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw std::invalid_argument("mask ratio must be in [0, 1)");
    const auto n = static_cast<std::size_t>(tokens.rows());
    MaskedPrediction out;
    out.visible = sample_indices(n, visible_count(n, mask_ratio), rng);
    out.masked = complement_indices(n, out.visible);
    out.latent = encode_tokens(tokens, out.visible);
    out.reconstruction = decode(out.latent, out.visible);
    return out;
}

Tensor NeuroNet::pool(const Tensor& latent) { return ag::mean_rows(ag::slice_rows(latent, 1, latent.rows() - 1)); }

Tensor NeuroNet::project(const Tensor& pooled) const { return projection_.forward(pooled); }

Tensor NeuroNet::encode_signal(const Matrix& frames, const nn::Mode& mode) const {
    const Tensor latent = encode_all(frame_encode(frames), mode);
    return ag::slice_rows(latent, 1, latent.rows() - 1);
}

void NeuroNet::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
    visit_encoder(prefix, fn);
    decoder_embed_.visit(prefix + "/decoder_embed", fn);
    fn(prefix + "/mask_token", mask_token_);
    decoder_.visit(prefix + "/decoder", fn);
    decoder_out_.visit(prefix + "/decoder_out", fn);
    projection_.visit(prefix + "/projection", fn);
}

void NeuroNet::visit_encoder(const std::string& prefix, const nn::ParamVisitor& fn) {
    frame_net_.visit(prefix + "/frame", fn);
    fn(prefix + "/class_token", class_token_);
    encoder_.visit(prefix + "/encoder", fn);
}

Tensor inter_recon_loss(const Tensor& reconstruction, const Tensor& target, std::span<const Index> masked) {
    if (reconstruction.rows() != target.rows() || reconstruction.cols() != target.cols()) {
        throw std::invalid_argument("reconstruction and target shapes differ");
    }
    if (masked.empty()) return Tensor::scalar(0.0);
    const Tensor diff = ag::gather_rows(ag::sub(reconstruction, target), masked);
    return ag::scale(ag::squared_norm(diff), 1.0 / static_cast<double>(masked.size()));
}

Tensor nt_xent(const Tensor& z_a, const Tensor& z_b, double temperature) {
    if (z_a.rows() != z_b.rows() || z_a.cols() != z_b.cols() || z_a.rows() < 1) {
        throw std::invalid_argument("nt_xent needs two equally shaped non-empty batches");
    }
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    const Index b = z_a.rows();
    const Tensor parts[] = {z_a, z_b};
    const Tensor unit = ag::l2_normalize_rows(ag::concat_rows(parts));
    const Tensor sim = ag::scale(ag::matmul_transposed(unit, unit), 1.0 / temperature);
    std::vector<Index> positives(static_cast<std::size_t>(2 * b));
    for (Index a = 0; a < 2 * b; ++a) positives[static_cast<std::size_t>(a)] = a < b ? a + b : a - b;
    const Tensor per_anchor = ag::sub(ag::logsumexp_rows(sim, true), ag::pick(sim, positives));
    return ag::scale(ag::sum_all(per_anchor), 1.0 / static_cast<double>(2 * b));
}

Tensor neuronet_total_loss(const Tensor& recon1, const Tensor& recon2, const Tensor& contrastive, double balance) {
    return ag::add(ag::scale(ag::add(recon1, recon2), 0.5), ag::scale(contrastive, balance));
}

double neuronet_total_loss(double recon1, double recon2, double contrastive, double balance) {
    return 0.5 * (recon1 + recon2) + balance * contrastive;
}

NeuroNetLosses neuronet_batch_loss(const NeuroNet& net, std::span<const Matrix> frames, std::mt19937_64& rng) {
    if (frames.empty()) throw std::invalid_argument("empty batch");
    const double ratio = net.config().mask_ratio;
    std::vector<Tensor> r1, r2, z1, z2;
    for (const auto& f : frames) {
        const Tensor tokens = net.frame_encode(f);
        const MaskedPrediction a = net.masked_predict(tokens, ratio, rng);
        const MaskedPrediction b = net.masked_predict(tokens, ratio, rng);
        r1.push_back(inter_recon_loss(a.reconstruction, tokens, a.masked));
        r2.push_back(inter_recon_loss(b.reconstruction, tokens, b.masked));
        z1.push_back(net.project(NeuroNet::pool(a.latent)));
        z2.push_back(net.project(NeuroNet::pool(b.latent)));
    }
    const double inv_b = 1.0 / static_cast<double>(frames.size());
    NeuroNetLosses out;
    out.recon1 = ag::scale(ag::sum_tensors(r1), inv_b);
    out.recon2 = ag::scale(ag::sum_tensors(r2), inv_b);
    out.contrastive = nt_xent(ag::concat_rows(z1), ag::concat_rows(z2), net.config().temperature);
    out.total = neuronet_total_loss(out.recon1, out.recon2, out.contrastive, net.config().balance);
    return out;
}

}  // namespace physiome
