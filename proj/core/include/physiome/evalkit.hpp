#pragma once

#include "physiome/inference.hpp"
#include "physiome/optim.hpp"
#include "physiome/training.hpp"

#include <span>
#include <string>
#include <vector>

namespace physiome {

double accuracy(std::span<const int> preds, std::span<const int> labels);
// Rank-based Mann-Whitney AUC with averaged tie ranks. labels are 0/1.
double auc(std::span<const double> scores, std::span<const int> labels);
// Macro one-vs-rest AUC over the columns of a probability matrix. With two
// classes this is the binary AUC of column 1. Classes absent from `labels`
// are skipped.
double macro_auc(const ag::Matrix& probabilities, std::span<const int> labels);

struct Fold {
    std::vector<std::string> pretrain;
    std::vector<std::string> train;
    std::vector<std::string> test;
};

struct FoldPlan {
    std::vector<Fold> folds;
    std::uint64_t seed = 0;
};

// Subjects are sorted, shuffled by seed and dealt into k test groups; the
// remaining subjects of each fold are split pretrain:train by
// pretrain_fraction (rounded, each side keeps at least one subject).
FoldPlan make_folds(std::span<const std::string> subjects, std::uint64_t seed, int k = 5,
                    double pretrain_fraction = 0.7);
// Throws std::logic_error describing the first leak found.
void check_fold_integrity(const FoldPlan& plan, std::span<const std::string> subjects);

struct ProbeConfig {
    int epochs = 20;
    int batch_size = 512;
    optim::AdamWConfig optimizer{1e-5, 0.9, 0.999, 1e-8, 0.01};
    std::uint64_t seed = 1;
};

// Affine softmax classifier over z-scored features.
class LinearProbe {
public:
    LinearProbe() = default;

    void fit(const ag::Matrix& features, std::span<const int> labels, int n_classes, const ProbeConfig& cfg);
    ag::Matrix predict_proba(const ag::Matrix& features) const;
    std::vector<int> predict(const ag::Matrix& features) const;

    int classes() const { return static_cast<int>(weight_.cols()); }
    const ag::Matrix& weight() const { return weight_; }
    const ag::Matrix& bias() const { return bias_; }
    const ag::Matrix& mean() const { return mean_; }
    const ag::Matrix& scale() const { return scale_; }
    void set_state(ag::Matrix weight, ag::Matrix bias, ag::Matrix mean, ag::Matrix scale);

private:
    ag::Matrix standardize(const ag::Matrix& features) const;

    ag::Matrix weight_;
    ag::Matrix bias_;
    ag::Matrix mean_;
    ag::Matrix scale_;
};

// Class-token representations (rows) for the given cache rows. Rows whose
// observed modalities are unavailable raise. Honors PHYSIOME_NUM_THREADS.
ag::Matrix extract_features(const PhysioME& model, const TokenCache& cache, std::span<const std::size_t> rows,
                            const ScenarioMask& scenario, RestorationStrategy strategy);

struct Metrics {
    double acc = 0.0;
    double auc = 0.0;
};

Metrics evaluate_probe(const LinearProbe& probe, const ag::Matrix& features, std::span<const int> labels);

// Strict linear evaluation: the probe is fit on full-modality train features
// and scored on the test rows under `scenario`.
struct LinearEvalResult {
    Metrics metrics;
    LinearProbe probe;
};
LinearEvalResult linear_eval(const PhysioME& model, const TokenCache& cache, std::span<const std::size_t> train_rows,
                             std::span<const std::size_t> test_rows, const ScenarioMask& scenario,
                             RestorationStrategy strategy, int n_classes, const ProbeConfig& cfg);

struct SweepRow {
    ScenarioMask scenario;
    double acc = 0.0;
    double auc = 0.0;
    double delta_acc = 0.0;
    double delta_auc = 0.0;
};

struct SweepReport {
    std::vector<std::string> modality_names;
    std::vector<SweepRow> rows;  // full scenario first when present
    double mav_acc = 0.0;
    double mav_auc = 0.0;
    double mav_delta_acc = 0.0;
    double mav_delta_auc = 0.0;
    int folds = 0;
    std::string strategy;
    bool has_full = false;  // deltas are only meaningful with the full row
};

// One trained model per fold with the rows it is evaluated on.
struct FoldEvaluation {
    const PhysioME* model = nullptr;
    const TokenCache* cache = nullptr;
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> test_rows;
};

// Metrics averaged over folds per scenario; deltas are relative to the full
// scenario. MAV of metrics covers every row, MAV of deltas the non-full rows
// (absolute values).
SweepReport run_sweep(std::span<const FoldEvaluation> folds, std::span<const ScenarioMask> scenarios,
                      RestorationStrategy strategy, int n_classes, const ProbeConfig& cfg,
                      std::vector<std::string> modality_names = {});
// Recomputes the MAV fields from the rows.
void finalize_sweep(SweepReport& report);

// Worker count from PHYSIOME_NUM_THREADS (default 1, clamped to >= 1).
int configured_threads();

}  // namespace physiome
