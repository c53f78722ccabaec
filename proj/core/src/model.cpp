#include "physiome/model.hpp"

#include "physiome/error.hpp"

#include <numeric>
#include <stdexcept>

namespace physiome {

using ag::Index;
using ag::Matrix;
using ag::Tensor;

std::string to_string(DropTokenMode mode) { return mode == DropTokenMode::kSingle ? "single" : "per_position"; }

std::string to_string(RestorationStrategy strategy) {
    switch (strategy) {
        case RestorationStrategy::kMaskedToken: return "masked_token";
        case RestorationStrategy::kMemoryToken: return "memory_token";
        case RestorationStrategy::kRestorationDecoder: return "restoration_decoder";
    }
    return "unknown";
}

std::string to_string(RestorationContext context) { return context == RestorationContext::kRun ? "run" : "fused"; }

DropTokenMode parse_drop_token_mode(const std::string& s) {
    if (s == "single") return DropTokenMode::kSingle;
    if (s == "per_position") return DropTokenMode::kPerPosition;
    throw ConfigError("drop_token_mode must be single or per_position, got '" + s + "'");
}

RestorationStrategy parse_restoration_strategy(const std::string& s) {
    if (s == "masked_token") return RestorationStrategy::kMaskedToken;
    if (s == "memory_token") return RestorationStrategy::kMemoryToken;
    if (s == "restoration_decoder") return RestorationStrategy::kRestorationDecoder;
    throw ConfigError("unknown restoration strategy '" + s + "'");
}

RestorationContext parse_restoration_context(const std::string& s) {
    if (s == "run") return RestorationContext::kRun;
    if (s == "fused") return RestorationContext::kFused;
    throw ConfigError("restoration_context must be run or fused, got '" + s + "'");
}

void PhysioMEConfig::validate() const {
    auto positive = [](Index v, const char* what) {
        if (v < 1) throw ConfigError(std::string(what) + " must be >= 1");
    };
    positive(mm_dim, "mm_dim");
    positive(mm_depth, "mm_depth");
    positive(mm_heads, "mm_heads");
    positive(decoder_dim, "decoder_dim");
    positive(decoder_depth, "decoder_depth");
    positive(decoder_heads, "decoder_heads");
    positive(restoration_dim, "restoration_dim");
    positive(restoration_depth, "restoration_depth");
    positive(restoration_heads, "restoration_heads");
    if (mm_dim % mm_heads != 0) throw ConfigError("mm_dim must be divisible by mm_heads");
    if (decoder_dim % decoder_heads != 0) throw ConfigError("decoder_dim must be divisible by decoder_heads");
    if (restoration_dim % restoration_heads != 0) {
        throw ConfigError("restoration_dim must be divisible by restoration_heads");
    }
    if (projection_hidden.size() != 2 || projection_hidden[0] < 1 || projection_hidden[1] < 1) {
        throw ConfigError("projection_hidden needs exactly two positive sizes");
    }
    if (lora_rank < 1) throw ConfigError("lora_rank must be >= 1");
    if (!(lora_dropout >= 0.0 && lora_dropout < 1.0)) throw ConfigError("lora_dropout must be in [0, 1)");
    if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must be in [0, 1)");
    if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw ConfigError("drop_prob must be in [0, 1)");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) throw ConfigError("loss weights must be nonnegative");
    if (alpha + beta + gamma <= 0.0) throw ConfigError("at least one loss weight must be positive");
    if (training_strategy == RestorationStrategy::kMaskedToken) {
        throw ConfigError("masked_token shares the restoration_decoder model; train with restoration_decoder");
    }
    if (epochs < 0 || batch_size < 2) throw ConfigError("epochs must be >= 0 and batch_size >= 2");
}

Tensor FusedSequence::run(int modality) const {
    const RunSpan& s = span_of(modality);
    return ag::slice_rows(output, s.offset, s.length);
}

const RunSpan& FusedSequence::span_of(int modality) const {
    for (const auto& s : runs) {
        if (s.modality == modality) return s;
    }
    throw std::out_of_range("modality " + std::to_string(modality) + " has no run in the fused sequence");
}

PhysioME::PhysioME(const PhysioMEConfig& cfg, std::vector<NeuroNet> encoders, std::uint64_t seed)
    : cfg_(cfg), bank_(std::move(encoders)) {
    cfg_.validate();
    if (bank_.empty()) throw ConfigError("PhysioME needs at least one modality encoder");
    n_ = bank_.front().token_count();
    d_enc_ = bank_.front().config().encoder_dim;
    for (const auto& net : bank_) {
        if (net.token_count() != n_ || net.config().encoder_dim != d_enc_) {
            throw ConfigError("all modality encoders must share token count and encoder dim");
        }
    }
    std::mt19937_64 rng(seed);
    const auto m_count = bank_.size();
    for (auto& net : bank_) {
        net.visit("", [](const std::string&, Tensor& t) { t.set_requires_grad(false); });
        net.encoder().attach_lora_qv(cfg_.lora_rank, cfg_.lora_alpha, cfg_.lora_dropout, rng);
    }
    const Index d = cfg_.mm_dim;
    positional_ = Tensor(nn::sinusoidal_table(n_, d));
    mask_token_ = nn::make_param(nn::normal_matrix(1, d, 0.02, rng));
    class_token_ = nn::make_param(nn::normal_matrix(1, d, 0.02, rng));
    mm_encoder_ = nn::TransformerStack(d, cfg_.mm_depth, cfg_.mm_heads, false, rng);
    for (std::size_t m = 0; m < m_count; ++m) {
        in_proj_.emplace_back(d_enc_, d, d, rng);
        modality_tokens_.push_back(nn::make_param(nn::normal_matrix(1, d, 0.02, rng)));

        ModalityDecoder md;
        md.embed = nn::Linear(d, cfg_.decoder_dim, rng);
        md.mask_token = nn::make_param(nn::normal_matrix(1, cfg_.decoder_dim, 0.02, rng));
        md.positional = Tensor(nn::sinusoidal_table(n_, cfg_.decoder_dim));
        md.blocks = nn::TransformerStack(cfg_.decoder_dim, cfg_.decoder_depth, cfg_.decoder_heads, false, rng);
        md.out = nn::Mlp(cfg_.decoder_dim, cfg_.decoder_dim, d_enc_, rng);
        mod_dec_.push_back(std::move(md));

        RestorationDecoder rd;
        rd.embed = nn::Linear(d, cfg_.restoration_dim, rng);
        rd.queries = nn::make_param(nn::normal_matrix(n_, cfg_.restoration_dim, 0.02, rng));
        rd.positional = Tensor(nn::sinusoidal_table(n_, cfg_.restoration_dim));
        rd.blocks =
            nn::TransformerStack(cfg_.restoration_dim, cfg_.restoration_depth, cfg_.restoration_heads, true, rng);
        rd.out = nn::Mlp(cfg_.restoration_dim, cfg_.restoration_dim, d_enc_, rng);
        rest_dec_.push_back(std::move(rd));

        memory_.push_back(nn::make_param(Matrix::Zero(n_, d_enc_)));
        contrast_e_.emplace_back(d_enc_, cfg_.projection_hidden[0], cfg_.projection_hidden[1], rng);
    }
    contrast_o_ = nn::Mlp(d, cfg_.projection_hidden[0], cfg_.projection_hidden[1], rng);
}

void PhysioME::check_modality(int m) const {
    if (m < 0 || m >= modalities()) throw std::out_of_range("unknown modality id " + std::to_string(m));
}

const NeuroNet& PhysioME::backbone(int m) const {
    check_modality(m);
    return bank_[static_cast<std::size_t>(m)];
}

Matrix PhysioME::frame_tokens(int m, const Matrix& frames) const {
    check_modality(m);
    ag::NoGradGuard guard;
    return bank_[static_cast<std::size_t>(m)].frame_encode(frames).value();
}

Tensor PhysioME::encode_modality(int m, const Matrix& frame_tokens, const nn::Mode& mode) const {
    check_modality(m);
    const Tensor latent = bank_[static_cast<std::size_t>(m)].encode_all(Tensor(frame_tokens), mode);
    return ag::slice_rows(latent, 1, latent.rows() - 1);
}

Tensor PhysioME::project_tokens(const Tensor& e, int m, const nn::Mode& mode) const {
    check_modality(m);
    if (e.rows() > positional_.rows()) {
        throw std::invalid_argument("sequence of " + std::to_string(e.rows()) + " tokens exceeds the positional table (" +
                                    std::to_string(positional_.rows()) + ")");
    }
    const auto mi = static_cast<std::size_t>(m);
    const Tensor pe = e.rows() == positional_.rows() ? positional_ : ag::slice_rows(positional_, 0, e.rows());
    return ag::add_row(ag::add(in_proj_[mi].forward(e, mode), pe), modality_tokens_[mi]);
}

Tensor PhysioME::mask_run(int m) const {
    check_modality(m);
    const Tensor& mt = modality_tokens_[static_cast<std::size_t>(m)];
    if (cfg_.drop_token_mode == DropTokenMode::kSingle) return ag::add(mask_token_, mt);
    return ag::add_row(ag::add_row(positional_, mask_token_), mt);
}

Tensor PhysioME::memory_run(int m, const nn::Mode& mode) const {
    return project_tokens(memory_tokens(m), m, mode);
}

const Tensor& PhysioME::memory_tokens(int m) const {
    check_modality(m);
    return memory_[static_cast<std::size_t>(m)];
}

void PhysioME::set_memory_tokens(int m, const Matrix& value) {
    check_modality(m);
    auto& bank = memory_[static_cast<std::size_t>(m)];
    if (value.rows() != bank.rows() || value.cols() != bank.cols()) throw std::invalid_argument("memory bank shape mismatch");
    bank.mutable_value() = value;
}

FusedSequence PhysioME::multimodal_encode(std::span<const ModalityRun> runs, const nn::Mode& mode) const {
    bool any_observed = false;
    for (const auto& r : runs) any_observed = any_observed || !r.placeholder;
    if (!any_observed) throw std::invalid_argument("no observed modality");
    FusedSequence out;
    std::vector<Tensor> parts{class_token_};
    Index offset = 1;
    for (const auto& r : runs) {
        check_modality(r.modality);
        if (r.tokens.cols() != cfg_.mm_dim) throw std::invalid_argument("run width does not match mm_dim");
        parts.push_back(r.tokens);
        out.runs.push_back({r.modality, offset, r.tokens.rows(), r.placeholder});
        offset += r.tokens.rows();
    }
    out.output = mm_encoder_.forward(ag::concat_rows(parts), nullptr, mode);
    return out;
}

Tensor PhysioME::decode_modality(int m, const Tensor& run, std::span<const Index> sampled, const nn::Mode& mode) const {
    check_modality(m);
    if (run.rows() != static_cast<Index>(sampled.size())) {
        throw std::invalid_argument("decode_modality: run length must equal the sampled index count");
    }
    const ModalityDecoder& dec = mod_dec_[static_cast<std::size_t>(m)];
    const Tensor embedded = dec.embed.forward(run, mode);
    const Tensor pool_parts[] = {embedded, dec.mask_token};
    const Tensor pool = ag::concat_rows(pool_parts);
    const auto k = static_cast<Index>(sampled.size());
    std::vector<Index> source(static_cast<std::size_t>(n_), k);
    for (Index i = 0; i < k; ++i) {
        const Index pos = sampled[static_cast<std::size_t>(i)];
        if (pos < 0 || pos >= n_) throw std::out_of_range("sampled index out of range");
        source[static_cast<std::size_t>(pos)] = i;
    }
    const Tensor seq = ag::add(ag::gather_rows(pool, source), dec.positional);
    return dec.out.forward(dec.blocks.forward(seq, nullptr, mode), mode);
}

Tensor PhysioME::restore_modality(int m, const Tensor& run, const Tensor& fused, const nn::Mode& mode) const {
    check_modality(m);
    const RestorationDecoder& dec = rest_dec_[static_cast<std::size_t>(m)];
    Tensor context = run;
    if (cfg_.restoration_context == RestorationContext::kFused) {
        const Tensor parts[] = {run, fused};
        context = ag::concat_rows(parts);
    }
    const Tensor ctx = dec.embed.forward(context, mode);
    const Tensor queries = ag::add(dec.queries, dec.positional);
    return dec.out.forward(dec.blocks.forward(queries, &ctx, mode), mode);
}

Tensor PhysioME::contrast_modality(int m, const Tensor& e, const nn::Mode& mode) const {
    check_modality(m);
    return contrast_e_[static_cast<std::size_t>(m)].forward(ag::l2_normalize_rows(ag::mean_rows(e)), mode);
}

Tensor PhysioME::contrast_fused(const Tensor& o, const nn::Mode& mode) const {
    return contrast_o_.forward(ag::l2_normalize_rows(ag::mean_rows(o)), mode);
}

void PhysioME::visit(const nn::ParamVisitor& fn) {
    visit_frozen(fn);
    for (std::size_t m = 0; m < bank_.size(); ++m) {
        const std::string ms = std::to_string(m);
        const std::string net_prefix = "neuronet/" + ms;
        const std::string lora_prefix = "physiome/modality_enc/" + ms + "/lora";
        bank_[m].visit_encoder(net_prefix, [&](const std::string& name, Tensor& t) {
            const auto pos = name.find("/lora/");
            if (pos == std::string::npos) return;
            // neuronet/<m>/encoder/.../q/lora/down -> physiome/modality_enc/<m>/lora/encoder/.../q/down
            fn(lora_prefix + name.substr(net_prefix.size(), pos - net_prefix.size()) + name.substr(pos + 5), t);
        });
        in_proj_[m].visit("physiome/modality_enc/" + ms + "/proj", fn);
        fn("physiome/tokens/modality_" + ms, modality_tokens_[m]);
        auto& md = mod_dec_[m];
        const std::string mdp = "physiome/mod_dec/" + ms;
        md.embed.visit(mdp + "/embed", fn);
        fn(mdp + "/mask_token", md.mask_token);
        md.blocks.visit(mdp + "/blocks", fn);
        md.out.visit(mdp + "/out", fn);
        auto& rd = rest_dec_[m];
        const std::string rdp = "physiome/rest_dec/" + ms;
        rd.embed.visit(rdp + "/embed", fn);
        fn(rdp + "/queries", rd.queries);
        rd.blocks.visit(rdp + "/blocks", fn);
        rd.out.visit(rdp + "/out", fn);
        fn("physiome/tokens/memory_" + ms, memory_[m]);
        contrast_e_[m].visit("physiome/contrast/modality_" + ms, fn);
    }
    fn("physiome/tokens/mask", mask_token_);
    fn("physiome/tokens/class", class_token_);
    mm_encoder_.visit("physiome/mm_enc", fn);
    contrast_o_.visit("physiome/contrast/fused", fn);
}

void PhysioME::visit_frozen(const nn::ParamVisitor& fn) {
    for (std::size_t m = 0; m < bank_.size(); ++m) {
        bank_[m].visit_encoder("neuronet/" + std::to_string(m), [&](const std::string& name, Tensor& t) {
            if (name.find("/lora/") == std::string::npos) fn(name, t);
        });
    }
}

std::vector<std::pair<std::string, Tensor>> PhysioME::trainable_parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    visit([&](const std::string& name, Tensor& t) {
        if (t.requires_grad()) out.emplace_back(name, t);
    });
    return out;
}

}  // namespace physiome
