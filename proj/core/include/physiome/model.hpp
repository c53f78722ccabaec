#pragma once

#include "physiome/neuronet.hpp"
#include "physiome/optim.hpp"

#include <span>
#include <string>
#include <vector>

namespace physiome {

// How a dropped (or missing) modality is represented inside the multimodal
// encoder: one mask token, or the mask token repeated at every position.
enum class DropTokenMode { kSingle, kPerPosition };
enum class RestorationStrategy { kMaskedToken, kMemoryToken, kRestorationDecoder };
// What the restoration decoder's queries attend to: only the dropped
// modality's own run, or that run followed by the whole fused sequence.
enum class RestorationContext { kRun, kFused };

std::string to_string(DropTokenMode mode);
std::string to_string(RestorationStrategy strategy);
std::string to_string(RestorationContext context);
DropTokenMode parse_drop_token_mode(const std::string& s);
RestorationStrategy parse_restoration_strategy(const std::string& s);
RestorationContext parse_restoration_context(const std::string& s);

struct PhysioMEConfig {
    ag::Index mm_dim = 512;
    ag::Index mm_depth = 6;
    ag::Index mm_heads = 8;
    ag::Index decoder_dim = 256;
    ag::Index decoder_depth = 4;
    ag::Index decoder_heads = 8;
    ag::Index restoration_dim = 256;
    ag::Index restoration_depth = 8;
    ag::Index restoration_heads = 8;
    std::vector<ag::Index> projection_hidden{1024, 512};

    int lora_rank = 4;
    double lora_alpha = 16.0;
    double lora_dropout = 0.05;

    double mask_ratio = 0.4;
    double drop_prob = 0.5;
    double temperature = 0.1;
    double alpha = 1.0;  // intra reconstruction
    double beta = 1.0;   // missing reconstruction
    double gamma = 1.0;  // cross contrast

    DropTokenMode drop_token_mode = DropTokenMode::kSingle;
    // kMemoryToken trains the per-modality token bank in place of the mask
    // token; the other two strategies share one trained model.
    RestorationStrategy training_strategy = RestorationStrategy::kRestorationDecoder;
    RestorationContext restoration_context = RestorationContext::kFused;
    bool restoration_gradient = false;
    // Let the intra reconstruction loss pull on its own target e^(m). Off by
    // default: the LoRA encoder otherwise collapses e toward a constant.
    bool intra_target_gradient = false;

    int epochs = 50;
    int batch_size = 512;
    optim::AdamWConfig optimizer{2e-4, 0.9, 0.999, 1e-8, 0.01};
    std::uint64_t seed = 1;

    void validate() const;
};

// One contiguous block of the multimodal encoder input, already in the
// multimodal token space.
struct ModalityRun {
    int modality = 0;
    ag::Tensor tokens;
    bool placeholder = false;  // mask or memory tokens standing in for a modality
};

struct RunSpan {
    int modality = 0;
    ag::Index offset = 0;  // row in the encoder output (class token is row 0)
    ag::Index length = 0;
    bool placeholder = false;
};

struct FusedSequence {
    ag::Tensor output;  // (1 + sum of run lengths) x D_mm
    std::vector<RunSpan> runs;

    ag::Tensor run(int modality) const;
    const RunSpan& span_of(int modality) const;
    ag::Tensor class_token() const { return ag::slice_rows(output, 0, 1); }
};

class PhysioME {
public:
    PhysioME() = default;
    // Takes ownership of one pretrained NeuroNet per modality, freezes every
    // backbone tensor and attaches LoRA to the encoder query/value projections.
    PhysioME(const PhysioMEConfig& cfg, std::vector<NeuroNet> encoders, std::uint64_t seed);

    const PhysioMEConfig& config() const { return cfg_; }
    PhysioMEConfig& mutable_config() { return cfg_; }
    int modalities() const { return static_cast<int>(bank_.size()); }
    ag::Index token_count() const { return n_; }
    ag::Index encoder_dim() const { return d_enc_; }
    const NeuroNet& backbone(int m) const;

    // Frozen frame-network tokens for one window; no graph is recorded.
    ag::Matrix frame_tokens(int m, const ag::Matrix& frames) const;
    // Frozen encoder plus LoRA delta over cached frame tokens: N x D_enc.
    ag::Tensor encode_modality(int m, const ag::Matrix& frame_tokens, const nn::Mode& mode = {}) const;
    // MLP(e) + pe + mt^(m): N x D_mm.
    ag::Tensor project_tokens(const ag::Tensor& e, int m, const nn::Mode& mode = {}) const;
    // Placeholder for a dropped modality under the configured drop_token_mode.
    ag::Tensor mask_run(int m) const;
    // Memory-bank placeholder projected like a real modality: N x D_mm.
    ag::Tensor memory_run(int m, const nn::Mode& mode = {}) const;
    const ag::Tensor& memory_tokens(int m) const;
    void set_memory_tokens(int m, const ag::Matrix& value);

    // Prepends the class token and runs the multimodal encoder. Throws
    // "no observed modality" when every run is a placeholder.
    FusedSequence multimodal_encode(std::span<const ModalityRun> runs, const nn::Mode& mode = {}) const;
    // Mask tokens fill the positions outside `sampled`; returns N x D_enc.
    ag::Tensor decode_modality(int m, const ag::Tensor& run, std::span<const ag::Index> sampled,
                               const nn::Mode& mode = {}) const;
    // N learnable queries cross-attend to the run (and the fused sequence when
    // configured); returns N x D_enc.
    ag::Tensor restore_modality(int m, const ag::Tensor& run, const ag::Tensor& fused,
                                const nn::Mode& mode = {}) const;

    // MLP_e(normalize(mean_seq(e))) and MLP_o(normalize(mean_seq(o))).
    ag::Tensor contrast_modality(int m, const ag::Tensor& e, const nn::Mode& mode = {}) const;
    ag::Tensor contrast_fused(const ag::Tensor& o, const nn::Mode& mode = {}) const;

    // Every tensor, frozen backbone included, under checkpoint names.
    void visit(const nn::ParamVisitor& fn);
    // Frozen backbone tensors only (encoder side).
    void visit_frozen(const nn::ParamVisitor& fn);
    std::vector<std::pair<std::string, ag::Tensor>> trainable_parameters();

    const ag::Matrix& positional() const { return positional_.value(); }

private:
    struct ModalityDecoder {
        nn::Linear embed;
        ag::Tensor mask_token;
        ag::Tensor positional;  // constant
        nn::TransformerStack blocks;
        nn::Mlp out;
    };
    struct RestorationDecoder {
        nn::Linear embed;
        ag::Tensor queries;
        ag::Tensor positional;  // constant
        nn::TransformerStack blocks;
        nn::Mlp out;
    };

    void check_modality(int m) const;

    PhysioMEConfig cfg_;
    ag::Index n_ = 0;
    ag::Index d_enc_ = 0;
    std::vector<NeuroNet> bank_;
    std::vector<nn::Mlp> in_proj_;
    ag::Tensor positional_;  // constant N x D_mm
    std::vector<ag::Tensor> modality_tokens_;
    ag::Tensor mask_token_;
    ag::Tensor class_token_;
    nn::TransformerStack mm_encoder_;
    std::vector<ModalityDecoder> mod_dec_;
    std::vector<RestorationDecoder> rest_dec_;
    std::vector<ag::Tensor> memory_;  // N x D_enc per modality
    std::vector<nn::Mlp> contrast_e_;
    nn::Mlp contrast_o_;
};

}  // namespace physiome
