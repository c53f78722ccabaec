#pragma once

#include "physiome/checkpoint.hpp"
#include "physiome/config.hpp"
#include "physiome/dp_neuronet.hpp"
#include "physiome/evalkit.hpp"
#include "physiome/training.hpp"

#include <functional>
#include <string>
#include <vector>

namespace physiome {

using Logger = std::function<void(const std::string&)>;

// Dataset shape, sample rate, window length and labels against the config.
void check_dataset(const RunConfig& cfg, const Dataset& data);
FoldPlan plan_folds(const RunConfig& cfg, const Dataset& data);
std::string fold_prefix(int fold);

// Throws ConfigError when `current` disagrees with the configuration that
// produced `parent` in any section the parent stage already fixed.
void check_stage_config(const RunConfig& parent, const RunConfig& current, Stage parent_stage);

std::string combine_hashes(const std::vector<std::string>& parts);
std::string bundle_hash(const CheckpointBundle& bundle);

struct BackboneHistory {
    int fold = 0;
    int modality = 0;
    std::vector<PretrainEpoch> epochs;
};

// One DP-NeuroNet per active fold and modality, trained on the fold's
// pretrain subjects.
CheckpointBundle pretrain_backbones(const RunConfig& cfg, const Dataset& data, const std::string& data_hash,
                                    std::vector<BackboneHistory>* history = nullptr, const Logger& log = {});
std::vector<NeuroNet> restore_backbones(const CheckpointBundle& bundle, const RunConfig& cfg, int fold);

struct PhysioMEHistory {
    int fold = 0;
    std::vector<TrainEpoch> epochs;
};

CheckpointBundle pretrain_physiome(const RunConfig& cfg, const Dataset& data, const std::string& data_hash,
                                   const CheckpointBundle& backbones, std::vector<PhysioMEHistory>* history = nullptr,
                                   const Logger& log = {});
PhysioME restore_physiome(const CheckpointBundle& bundle, const RunConfig& cfg, int fold);
// Folds stored in a physiome or linear_head bundle.
std::vector<int> stored_folds(const CheckpointBundle& bundle);

struct FoldMetrics {
    int fold = 0;
    Metrics metrics;
};

struct LinearEvalOutput {
    CheckpointBundle head;  // physiome tensors plus fold<k>/head/*
    std::vector<FoldMetrics> folds;
    Metrics mean;
};

LinearEvalOutput linear_eval_stage(const RunConfig& cfg, const Dataset& data, const std::string& data_hash,
                                   const CheckpointBundle& physiome, const ScenarioMask& scenario,
                                   RestorationStrategy strategy, const Logger& log = {});

SweepReport sweep_stage(const RunConfig& cfg, const Dataset& data, const CheckpointBundle& physiome,
                        const std::vector<ScenarioMask>& scenarios, RestorationStrategy strategy,
                        const Logger& log = {});

struct Prediction {
    std::size_t row = 0;
    int label = -1;
    int predicted = 0;
    std::vector<double> probabilities;
};

// Applies the stored probe of `fold` to every row whose observed modalities
// are available.
std::vector<Prediction> infer_stage(const RunConfig& cfg, const Dataset& data, const CheckpointBundle& head, int fold,
                                    const ScenarioMask& scenario, RestorationStrategy strategy);

// Strategy compatibility with the strategy the model was trained under.
void check_strategy(const PhysioMEConfig& model_cfg, RestorationStrategy strategy);

}  // namespace physiome
