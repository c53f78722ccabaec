#pragma once

#include "physiome/dp_neuronet.hpp"
#include "physiome/evalkit.hpp"
#include "physiome/model.hpp"
#include "physiome/signal.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace physiome {

struct EvaluationConfig {
    int folds = 5;
    double pretrain_fraction = 0.7;
    std::vector<int> run_folds;  // empty = every fold
    RestorationStrategy strategy = RestorationStrategy::kRestorationDecoder;

    std::vector<int> active_folds() const;
};

// Complete record of one run. `seed` drives the fold plan and every training
// stage; `data.seed` only drives synthetic generation.
struct RunConfig {
    std::string preset = "synthetic";
    std::uint64_t seed = 1;
    std::string output_dir = "runs/synthetic";
    std::vector<std::string> modality_names;

    SyntheticConfig data;
    DPNeuroNetConfig dp;
    PhysioMEConfig physiome;
    ProbeConfig probe;
    EvaluationConfig evaluation;

    int modalities() const { return data.modalities; }
    // Pushes `seed` into the per-stage configs.
    void propagate_seed();
    void validate() const;
};

std::vector<std::string> preset_names();
// "synthetic", "sleep" or "vital"; unknown names raise ConfigError.
RunConfig preset_config(const std::string& name);

// Canonical JSON with sorted keys.
std::string to_json(const RunConfig& cfg);
// Strict: unknown or mistyped keys raise ConfigError. Missing keys keep the
// value of the named preset (or "synthetic").
RunConfig from_json(const std::string& text);

// TOML subset: [section] / [a.b] headers, key = value with strings, numbers,
// booleans, single-line arrays and inline tables; '#' comments. A top-level
// `preset` key selects the base before the remaining keys are applied.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Applies "section.key=value" (value parsed as a TOML scalar or array).
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace physiome
