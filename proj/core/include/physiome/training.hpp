#pragma once

#include "physiome/model.hpp"
#include "physiome/signal.hpp"

#include <functional>
#include <random>
#include <span>
#include <vector>

namespace physiome {

struct DropSamplePlan {
    std::vector<bool> dropped;                   // per modality
    std::vector<std::vector<ag::Index>> sampled;  // H per modality, empty when dropped

    int modalities() const { return static_cast<int>(dropped.size()); }
    std::vector<int> kept() const;
    std::vector<int> dropped_modalities() const;
};

// Each modality is dropped with probability drop_prob; a draw that drops
// every modality is rejected and redrawn. Kept modalities sample
// max(1, round((1 - ratio) * n)) sorted indices.
DropSamplePlan make_plan(int modalities, std::size_t n, double ratio, double drop_prob, std::mt19937_64& rng);
// Plan for batch `batch_index` of a run seeded with `seed`.
DropSamplePlan plan_for_batch(std::uint64_t seed, std::uint64_t batch_index, int modalities, std::size_t n,
                              double ratio, double drop_prob);

// Losses over one sample. Per-modality vectors are indexed by modality id;
// entries for modalities a loss does not use may be left undefined.
ag::Tensor intra_recon_loss(std::span<const ag::Tensor> d, std::span<const ag::Tensor> e, const DropSamplePlan& plan);
ag::Tensor missing_recon_loss(std::span<const ag::Tensor> g, std::span<const ag::Tensor> e,
                              const DropSamplePlan& plan);
// em[m] and om are B x P batches; mean over all modalities of NT-Xent(em[m], om).
ag::Tensor cross_contra_loss(std::span<const ag::Tensor> em, const ag::Tensor& om, double temperature);

struct LossWeights {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 1.0;
};

ag::Tensor total_loss(const LossWeights& w, const ag::Tensor& intra, const ag::Tensor& missing,
                      const ag::Tensor& cross);
double total_loss(const LossWeights& w, double intra, double missing, double cross);

// Frame-network tokens per sample and modality; the frame network is frozen
// during PhysioME training so these are computed once.
struct TokenCache {
    std::vector<std::vector<ag::Matrix>> tokens;  // [sample][modality], empty when unavailable
    std::vector<std::vector<bool>> available;
    std::vector<int> labels;
    std::vector<std::string> subjects;

    std::size_t size() const { return tokens.size(); }
    bool complete(std::size_t row) const;
};

TokenCache build_token_cache(const PhysioME& model, const Dataset& data, const FrameSpec& frames);

struct StepLosses {
    ag::Tensor intra;
    ag::Tensor missing;
    ag::Tensor cross;
    ag::Tensor total;
};

// Forward pass of the training objective over `rows` of the cache.
StepLosses physiome_forward(const PhysioME& model, const TokenCache& cache, std::span<const std::size_t> rows,
                            const DropSamplePlan& plan, const nn::Mode& mode = {});

// Sets every modality's memory bank to the mean encoder output over `rows`.
void initialize_memory(PhysioME& model, const TokenCache& cache, std::span<const std::size_t> rows);

struct TrainEpoch {
    int epoch = 0;
    double intra = 0.0;
    double missing = 0.0;
    double cross = 0.0;
    double total = 0.0;
    double wall_seconds = 0.0;
};

struct StepRecord {
    std::uint64_t step = 0;
    double intra = 0.0;
    double missing = 0.0;
    double cross = 0.0;
    double total = 0.0;
};

// Sequential trainer over the fully available rows of a token cache.
class PhysioMETrainer {
public:
    PhysioMETrainer(PhysioME& model, const TokenCache& cache);

    StepRecord step();
    TrainEpoch run_epoch(int epoch);
    std::vector<TrainEpoch> train(const std::function<void(const TrainEpoch&)>& on_epoch = {});

    std::size_t rows() const { return rows_.size(); }
    std::uint64_t steps() const { return batch_counter_; }

private:
    std::vector<std::size_t> next_batch();

    PhysioME& model_;
    const TokenCache& cache_;
    optim::AdamW optimizer_;
    std::vector<std::size_t> rows_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::uint64_t batch_counter_ = 0;
    std::mt19937_64 order_rng_;
    std::mt19937_64 dropout_rng_;
};

}  // namespace physiome
