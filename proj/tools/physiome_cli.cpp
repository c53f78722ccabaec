// physiome: command-line front end for the pretraining, evaluation and
// reporting stages. Every failure prints one "ERROR <code>: ..." line to
// stderr and exits with that code.

#include "physiome/checkpoint.hpp"
#include "physiome/config.hpp"
#include "physiome/container.hpp"
#include "physiome/error.hpp"
#include "physiome/pipeline.hpp"
#include "physiome/report.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace physiome;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config_path, "TOML config file (preset = \"...\" then overrides)");
    cmd->add_option("--set", a.overrides, "Override one key, e.g. --set physiome.epochs=3");
    cmd->add_option("--seed", a.seed, "Run seed");
    cmd->add_flag("-q,--quiet", a.quiet, "Suppress progress lines");
}

Logger logger(const CommonArgs& a) {
    if (a.quiet) return {};
    return [](const std::string& line) { std::cerr << line << "\n"; };
}

RunConfig base_config(const CommonArgs& a) {
    RunConfig cfg = a.config_path.empty() ? preset_config("synthetic") : load_config(a.config_path);
    for (const auto& o : a.overrides) apply_override(cfg, o);
    if (a.seed) {
        cfg.seed = *a.seed;
        cfg.propagate_seed();
    }
    cfg.validate();
    return cfg;
}

// Config for a stage that consumes `parent`: the parent's snapshot unless a
// config file is given, in which case the two must agree on fixed sections.
RunConfig stage_config(const CommonArgs& a, const CheckpointBundle& parent) {
    const RunConfig stored = from_json(parent.config_json);
    RunConfig cfg = a.config_path.empty() ? stored : load_config(a.config_path);
    for (const auto& o : a.overrides) apply_override(cfg, o);
    if (a.seed) {
        cfg.seed = *a.seed;
        cfg.propagate_seed();
    }
    cfg.validate();
    check_stage_config(stored, cfg, parent.stage);
    return cfg;
}

Dataset load_data(const std::string& path, std::string* hash) {
    Dataset ds = container::read_container(path);
    *hash = container::file_hash(path);
    return ds;
}

fs::path sibling_dir(const std::string& out) {
    const fs::path p(out);
    return p.has_parent_path() ? p.parent_path() : fs::path(".");
}

void write_snapshot(const fs::path& dir, const RunConfig& cfg, const std::string& name) {
    report::write_text(dir / name, to_json(cfg) + "\n");
}

RestorationStrategy resolve_strategy(const std::string& flag, const RunConfig& cfg) {
    if (!flag.empty()) return parse_restoration_strategy(flag);
    if (cfg.physiome.training_strategy == RestorationStrategy::kMemoryToken) return RestorationStrategy::kMemoryToken;
    return cfg.evaluation.strategy;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PhysioME multimodal pretraining and missing-modality evaluation"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string out, data_path, ckpt_path, modalities, strategy, in_dir;
    int fold = 0;

    auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic multimodal dataset container");
    add_common(gen, common);
    gen->add_option("--out", out, "Output container path")->required();

    auto* pre_b = app.add_subcommand("pretrain-backbone", "DP-NeuroNet pretraining per fold and modality");
    add_common(pre_b, common);
    pre_b->add_option("--data", data_path, "Dataset container")->required();
    pre_b->add_option("--out", out, "Output checkpoint")->required();

    auto* pre_p = app.add_subcommand("pretrain-physiome", "PhysioME training on a dp_neuronet checkpoint");
    add_common(pre_p, common);
    pre_p->add_option("--data", data_path, "Dataset container")->required();
    pre_p->add_option("--checkpoint", ckpt_path, "dp_neuronet checkpoint")->required();
    pre_p->add_option("--out", out, "Output checkpoint")->required();

    auto* lin = app.add_subcommand("linear-eval", "Fit the linear probe and score one scenario");
    add_common(lin, common);
    lin->add_option("--data", data_path, "Dataset container")->required();
    lin->add_option("--checkpoint", ckpt_path, "physiome checkpoint")->required();
    lin->add_option("--out", out, "Output linear_head checkpoint")->required();
    lin->add_option("--modalities", modalities, "Observed modality bits, e.g. 101 (default: all)");
    lin->add_option("--strategy", strategy, "masked_token | memory_token | restoration_decoder");

    auto* sweep = app.add_subcommand("sweep", "Evaluate every missing-modality scenario");
    add_common(sweep, common);
    sweep->add_option("--data", data_path, "Dataset container")->required();
    sweep->add_option("--checkpoint", ckpt_path, "physiome checkpoint")->required();
    sweep->add_option("--out", out, "Output directory")->required();
    sweep->add_option("--modalities", modalities, "Restrict to one scenario, e.g. 101");
    sweep->add_option("--strategy", strategy, "masked_token | memory_token | restoration_decoder");

    auto* rep = app.add_subcommand("report", "Render loss curves, sweep tables and bar plots");
    add_common(rep, common);
    rep->add_option("--in", in_dir, "Directory holding the CSV outputs")->required();
    rep->add_option("--out", out, "Output directory (default: --in)");

    auto* inf = app.add_subcommand("infer", "Predict labels with a linear_head checkpoint");
    add_common(inf, common);
    inf->add_option("--data", data_path, "Dataset container")->required();
    inf->add_option("--checkpoint", ckpt_path, "linear_head checkpoint")->required();
    inf->add_option("--out", out, "Predictions CSV")->required();
    inf->add_option("--modalities", modalities, "Observed modality bits (default: all)");
    inf->add_option("--strategy", strategy, "masked_token | memory_token | restoration_decoder");
    inf->add_option("--fold", fold, "Fold whose probe to use");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        for (auto& c : msg) {
            if (c == '\n') c = ' ';
        }
        std::cerr << "ERROR " << static_cast<int>(ExitCode::kUsage) << ": " << msg << "\n";
        return static_cast<int>(ExitCode::kUsage);
    }

    try {
        const Logger log = logger(common);
        if (gen->parsed()) {
            RunConfig cfg = base_config(common);
            if (common.seed) cfg.data.seed = *common.seed;
            const Dataset ds = generate_synthetic_dataset(cfg.data);
            container::write_container(out, ds);
            write_snapshot(sibling_dir(out), cfg, fs::path(out).filename().string() + ".config.json");
            std::cout << "wrote " << out << " (" << ds.size() << " samples, hash " << container::file_hash(out)
                      << ")\n";
        } else if (pre_b->parsed()) {
            const RunConfig cfg = base_config(common);
            std::string hash;
            const Dataset ds = load_data(data_path, &hash);
            std::vector<BackboneHistory> history;
            const CheckpointBundle bundle = pretrain_backbones(cfg, ds, hash, &history, log);
            save_checkpoint(out, bundle);
            report::write_text(sibling_dir(out) / "backbone_losses.csv", report::backbone_losses_csv(history));
            std::cout << "wrote " << out << "\n";
        } else if (pre_p->parsed()) {
            const CheckpointBundle parent = load_checkpoint(ckpt_path);
            require_stage(parent, Stage::kDpNeuroNet);
            const RunConfig cfg = stage_config(common, parent);
            std::string hash;
            const Dataset ds = load_data(data_path, &hash);
            std::vector<PhysioMEHistory> history;
            const CheckpointBundle bundle = pretrain_physiome(cfg, ds, hash, parent, &history, log);
            save_checkpoint(out, bundle);
            report::write_text(sibling_dir(out) / "physiome_losses.csv", report::physiome_losses_csv(history));
            report::write_text(sibling_dir(out) / "physiome_timing.csv", report::physiome_timing_csv(history));
            std::cout << "wrote " << out << "\n";
        } else if (lin->parsed()) {
            const CheckpointBundle parent = load_checkpoint(ckpt_path);
            require_stage(parent, Stage::kPhysioME);
            const RunConfig cfg = stage_config(common, parent);
            const ScenarioMask scenario =
                modalities.empty() ? ScenarioMask::full(cfg.modalities()) : ScenarioMask::parse(modalities);
            std::string hash;
            const Dataset ds = load_data(data_path, &hash);
            const auto res = linear_eval_stage(cfg, ds, hash, parent, scenario, resolve_strategy(strategy, cfg), log);
            save_checkpoint(out, res.head);
            report::write_text(sibling_dir(out) / "linear_eval.csv",
                               report::linear_eval_csv(res.folds, res.mean, scenario));
            std::cout << "scenario " << scenario.to_string() << " acc " << res.mean.acc << " auc " << res.mean.auc
                      << "\n";
        } else if (sweep->parsed()) {
            const CheckpointBundle parent = load_checkpoint(ckpt_path);
            require_stage(parent, Stage::kPhysioME);
            const RunConfig cfg = stage_config(common, parent);
            std::vector<ScenarioMask> scenarios;
            if (modalities.empty()) {
                scenarios = all_scenarios(cfg.modalities());
            } else {
                scenarios.push_back(ScenarioMask::parse(modalities));
            }
            const RestorationStrategy st = resolve_strategy(strategy, cfg);
            std::string hash;
            const Dataset ds = load_data(data_path, &hash);
            const SweepReport r = sweep_stage(cfg, ds, parent, scenarios, st, log);
            const fs::path dir(out);
            const std::string stem = "sweep_" + to_string(st);
            report::write_text(dir / (stem + ".csv"), report::sweep_csv(r));
            report::write_text(dir / (stem + ".md"), report::sweep_markdown(r));
            write_snapshot(dir, cfg, stem + ".config.json");
            std::cout << report::sweep_markdown(r);
        } else if (rep->parsed()) {
            const auto written = report::render_directory(in_dir, out.empty() ? in_dir : out);
            for (const auto& p : written) std::cout << "wrote " << p.string() << "\n";
        } else if (inf->parsed()) {
            const CheckpointBundle parent = load_checkpoint(ckpt_path);
            require_stage(parent, Stage::kLinearHead);
            const RunConfig cfg = stage_config(common, parent);
            const ScenarioMask scenario =
                modalities.empty() ? ScenarioMask::full(cfg.modalities()) : ScenarioMask::parse(modalities);
            std::string hash;
            const Dataset ds = load_data(data_path, &hash);
            const auto preds = infer_stage(cfg, ds, parent, fold, scenario, resolve_strategy(strategy, cfg));
            report::write_text(out, report::predictions_csv(preds));
            std::cout << "wrote " << preds.size() << " predictions to " << out << "\n";
        }
    } catch (const Error& e) {
        std::cerr << "ERROR " << static_cast<int>(e.code()) << ": " << e.what() << "\n";
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        std::cerr << "ERROR " << static_cast<int>(ExitCode::kFailure) << ": " << e.what() << "\n";
        return static_cast<int>(ExitCode::kFailure);
    }
    return 0;
}
