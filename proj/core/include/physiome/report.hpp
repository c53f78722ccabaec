#pragma once

#include "physiome/evalkit.hpp"
#include "physiome/pipeline.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace physiome::report {

// fold,modality,epoch,recon1,recon2,ntxent,total
std::string backbone_losses_csv(const std::vector<BackboneHistory>& history);
// fold,epoch,l_intra,l_missing,l_cross,total
std::string physiome_losses_csv(const std::vector<PhysioMEHistory>& history);
// fold,epoch,wall_seconds. Kept apart so loss files stay reproducible.
std::string physiome_timing_csv(const std::vector<PhysioMEHistory>& history);

// One row per scenario (bit columns per modality, acc, auc, delta_acc,
// delta_auc), then a MAV row whose delta columns hold the mean absolute
// deltas.
std::string sweep_csv(const SweepReport& report);
SweepReport parse_sweep_csv(const std::string& text);
std::string sweep_markdown(const SweepReport& report);

std::string linear_eval_csv(const std::vector<FoldMetrics>& folds, const Metrics& mean, const ScenarioMask& scenario);
std::string predictions_csv(const std::vector<Prediction>& predictions);

struct Series {
    std::string name;
    std::vector<double> values;
};

// Line chart over epochs 1..n.
std::string line_plot_svg(const std::string& title, const std::vector<Series>& series);
// Grouped bars: ACC and AUC per scenario.
std::string sweep_bars_svg(const SweepReport& report);

// Mean per epoch over folds (and modalities) of each loss column.
std::vector<Series> backbone_series(const std::string& csv_text);
std::vector<Series> physiome_series(const std::string& csv_text);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// Renders every report found in `in_dir` into `out_dir`; returns the files
// written.
std::vector<std::filesystem::path> render_directory(const std::filesystem::path& in_dir,
                                                    const std::filesystem::path& out_dir);

}  // namespace physiome::report
