#include "physiome/pipeline.hpp"

#include "physiome/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <set>

namespace physiome {

using ag::Matrix;
using ag::Tensor;
using nlohmann::json;

void check_dataset(const RunConfig& cfg, const Dataset& data) {
    data.validate();
    if (data.modalities != cfg.modalities()) {
        throw ConfigError("dataset has " + std::to_string(data.modalities) + " modalities, config expects " +
                          std::to_string(cfg.modalities()));
    }
    const auto expected_len = static_cast<std::size_t>(std::llround(cfg.dp.net.window_sec * cfg.dp.net.sample_rate_hz));
    for (int m = 0; m < data.modalities; ++m) {
        if (data.column_sample_rate(m) != cfg.dp.net.sample_rate_hz) {
            throw ConfigError("modality " + std::to_string(m) + " is sampled at " +
                              std::to_string(data.column_sample_rate(m)) + " Hz, config expects " +
                              std::to_string(cfg.dp.net.sample_rate_hz));
        }
        if (data.column_length(m) != expected_len) {
            throw ConfigError("modality " + std::to_string(m) + " windows hold " +
                              std::to_string(data.column_length(m)) + " samples, config expects " +
                              std::to_string(expected_len));
        }
    }
    for (const auto& l : data.labels) {
        if (l && (*l < 0 || *l >= cfg.data.n_classes)) {
            throw ConfigError("label " + std::to_string(*l) + " outside [0, " + std::to_string(cfg.data.n_classes) + ")");
        }
    }
}

FoldPlan plan_folds(const RunConfig& cfg, const Dataset& data) {
    const auto subjects = data.unique_subjects();
    if (static_cast<int>(subjects.size()) < cfg.evaluation.folds) {
        throw ConfigError("need at least " + std::to_string(cfg.evaluation.folds) + " subjects, dataset has " +
                          std::to_string(subjects.size()));
    }
    return make_folds(subjects, cfg.seed, cfg.evaluation.folds, cfg.evaluation.pretrain_fraction);
}

std::string fold_prefix(int fold) { return "fold" + std::to_string(fold) + "/"; }

void check_stage_config(const RunConfig& parent, const RunConfig& current, Stage parent_stage) {
    const json a = json::parse(to_json(parent));
    const json b = json::parse(to_json(current));
    std::vector<std::string> fixed{"seed", "modality_names", "neuronet", "dp_neuronet"};
    if (parent_stage != Stage::kDpNeuroNet) fixed.push_back("physiome");
    if (parent_stage == Stage::kLinearHead) fixed.push_back("probe");
    for (const auto& key : fixed) {
        if (a.at(key) != b.at(key)) {
            throw ConfigError("config section '" + key + "' differs from the one stored in the " +
                              to_string(parent_stage) + " checkpoint");
        }
    }
    for (const char* key : {"folds", "pretrain_fraction"}) {
        if (a.at("evaluation").at(key) != b.at("evaluation").at(key)) {
            throw ConfigError(std::string("config key 'evaluation.") + key + "' differs from the checkpoint");
        }
    }
    if (a.at("data").at("n_classes") != b.at("data").at("n_classes")) {
        throw ConfigError("config key 'data.n_classes' differs from the checkpoint");
    }
}

std::string combine_hashes(const std::vector<std::string>& parts) {
    std::string joined;
    for (const auto& p : parts) joined += p + ";";
    return container::fnv1a_hex(std::span(reinterpret_cast<const std::uint8_t*>(joined.data()), joined.size()));
}

std::string bundle_hash(const CheckpointBundle& bundle) {
    const auto file = bundle.to_container();
    std::string acc;
    for (const auto& t : file.tensors) {
        acc += t.name;
        acc += container::fnv1a_hex(t.payload);
    }
    return container::fnv1a_hex(std::span(reinterpret_cast<const std::uint8_t*>(acc.data()), acc.size()));
}

namespace {

void say(const Logger& log, const std::string& line) {
    if (log) log(line);
}

std::vector<std::size_t> complete_rows(const Dataset& data, std::span<const std::size_t> rows, bool labeled) {
    std::vector<std::size_t> out;
    for (std::size_t r : rows) {
        bool ok = !labeled || data.labels[r].has_value();
        for (int m = 0; m < data.modalities && ok; ++m) ok = data.available(r, m);
        if (ok) out.push_back(r);
    }
    return out;
}

void load_into(const CheckpointBundle& bundle, const std::string& name, Tensor& t) {
    const Matrix value = bundle.matrix(name);
    if (value.rows() != t.rows() || value.cols() != t.cols()) {
        throw FormatError("checkpoint tensor '" + name + "' has shape " + std::to_string(value.rows()) + "x" +
                          std::to_string(value.cols()) + ", model expects " + std::to_string(t.rows()) + "x" +
                          std::to_string(t.cols()));
    }
    t.mutable_value() = value;
}

void check_folds_present(const CheckpointBundle& bundle, const RunConfig& cfg) {
    const auto present = stored_folds(bundle);
    for (int k : cfg.evaluation.active_folds()) {
        if (std::find(present.begin(), present.end(), k) == present.end()) {
            throw ConfigError("checkpoint holds no weights for fold " + std::to_string(k));
        }
    }
}

struct FoldData {
    PhysioME model;
    TokenCache cache;
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> test_rows;
};

FoldData prepare_fold(const RunConfig& cfg, const Dataset& data, const CheckpointBundle& bundle, const Fold& fold,
                      int k) {
    FoldData fd;
    fd.model = restore_physiome(bundle, cfg, k);
    fd.cache = build_token_cache(fd.model, data, cfg.dp.net.frames);
    fd.train_rows = complete_rows(data, data.rows_for_subjects(fold.train), true);
    fd.test_rows = complete_rows(data, data.rows_for_subjects(fold.test), true);
    if (fd.train_rows.empty() || fd.test_rows.empty()) {
        throw ConfigError("fold " + std::to_string(k) + " has no labeled complete train or test rows");
    }
    return fd;
}

}  // namespace

void check_strategy(const PhysioMEConfig& model_cfg, RestorationStrategy strategy) {
    if (strategy == RestorationStrategy::kMemoryToken && model_cfg.training_strategy != RestorationStrategy::kMemoryToken) {
        throw ConfigError("memory_token evaluation needs a model trained with training_strategy memory_token");
    }
    if (strategy == RestorationStrategy::kRestorationDecoder &&
        model_cfg.training_strategy != RestorationStrategy::kRestorationDecoder) {
        throw ConfigError("restoration_decoder evaluation needs a model trained with restoration_decoder");
    }
}

CheckpointBundle pretrain_backbones(const RunConfig& cfg, const Dataset& data, const std::string& data_hash,
                                    std::vector<BackboneHistory>* history, const Logger& log) {
    cfg.validate();
    check_dataset(cfg, data);
    const FoldPlan plan = plan_folds(cfg, data);
    CheckpointBundle bundle;
    bundle.stage = Stage::kDpNeuroNet;
    bundle.config_json = to_json(cfg);
    bundle.input_hash = combine_hashes({data_hash});
    bundle.modalities = static_cast<std::uint32_t>(cfg.modalities());
    for (int k : cfg.evaluation.active_folds()) {
        const Dataset pre = data.select(data.rows_for_subjects(plan.folds[static_cast<std::size_t>(k)].pretrain));
        for (int m = 0; m < cfg.modalities(); ++m) {
            DPNeuroNetConfig dc = cfg.dp;
            dc.seed = cfg.seed + 7919ull * static_cast<std::uint64_t>(k);
            std::vector<PretrainEpoch> epochs;
            NeuroNet net = pretrain_dp_neuronet(pre, m, dc, &epochs, [&](const PretrainEpoch& e) {
                say(log, "fold " + std::to_string(k) + " modality " + std::to_string(m) + " epoch " +
                             std::to_string(e.epoch) + " total " + std::to_string(e.total));
            });
            net.visit(fold_prefix(k) + "neuronet/" + std::to_string(m),
                      [&](const std::string& name, Tensor& t) { bundle.put(name, t.value()); });
            if (history != nullptr) history->push_back({k, m, std::move(epochs)});
        }
    }
    return bundle;
}

std::vector<NeuroNet> restore_backbones(const CheckpointBundle& bundle, const RunConfig& cfg, int fold) {
    if (bundle.stage != Stage::kDpNeuroNet) require_stage(bundle, Stage::kDpNeuroNet);
    std::vector<NeuroNet> nets;
    for (int m = 0; m < cfg.modalities(); ++m) {
        NeuroNet net(cfg.dp.net, 0);
        net.visit(fold_prefix(fold) + "neuronet/" + std::to_string(m),
                  [&](const std::string& name, Tensor& t) { load_into(bundle, name, t); });
        nets.push_back(std::move(net));
    }
    return nets;
}

CheckpointBundle pretrain_physiome(const RunConfig& cfg, const Dataset& data, const std::string& data_hash,
                                   const CheckpointBundle& backbones, std::vector<PhysioMEHistory>* history,
                                   const Logger& log) {
    require_stage(backbones, Stage::kDpNeuroNet);
    cfg.validate();
    check_dataset(cfg, data);
    const FoldPlan plan = plan_folds(cfg, data);
    CheckpointBundle bundle;
    bundle.stage = Stage::kPhysioME;
    bundle.config_json = to_json(cfg);
    bundle.input_hash = combine_hashes({data_hash, bundle_hash(backbones)});
    bundle.modalities = static_cast<std::uint32_t>(cfg.modalities());
    for (int k : cfg.evaluation.active_folds()) {
        PhysioMEConfig pc = cfg.physiome;
        pc.seed = cfg.seed + 7919ull * static_cast<std::uint64_t>(k);
        PhysioME model(pc, restore_backbones(backbones, cfg, k), pc.seed);
        const auto rows = data.rows_for_subjects(plan.folds[static_cast<std::size_t>(k)].pretrain);
        const Dataset pre = data.select(rows);
        const TokenCache cache = build_token_cache(model, pre, cfg.dp.net.frames);
        PhysioMETrainer trainer(model, cache);
        auto epochs = trainer.train([&](const TrainEpoch& e) {
            say(log, "fold " + std::to_string(k) + " epoch " + std::to_string(e.epoch) + " intra " +
                         std::to_string(e.intra) + " missing " + std::to_string(e.missing) + " cross " +
                         std::to_string(e.cross));
        });
        model.visit([&](const std::string& name, Tensor& t) { bundle.put(fold_prefix(k) + name, t.value()); });
        if (history != nullptr) history->push_back({k, std::move(epochs)});
    }
    return bundle;
}

PhysioME restore_physiome(const CheckpointBundle& bundle, const RunConfig& cfg, int fold) {
    if (bundle.stage == Stage::kDpNeuroNet) require_stage(bundle, Stage::kPhysioME);
    std::vector<NeuroNet> nets;
    for (int m = 0; m < cfg.modalities(); ++m) nets.emplace_back(cfg.dp.net, 0);
    PhysioME model(cfg.physiome, std::move(nets), 0);
    model.visit([&](const std::string& name, Tensor& t) { load_into(bundle, fold_prefix(fold) + name, t); });
    return model;
}

std::vector<int> stored_folds(const CheckpointBundle& bundle) {
    std::set<int> folds;
    for (const auto& t : bundle.tensors) {
        if (t.name.rfind("fold", 0) != 0) continue;
        const auto slash = t.name.find('/');
        if (slash == std::string::npos) continue;
        try {
            folds.insert(std::stoi(t.name.substr(4, slash - 4)));
        } catch (const std::exception&) {
        }
    }
    return {folds.begin(), folds.end()};
}

LinearEvalOutput linear_eval_stage(const RunConfig& cfg, const Dataset& data, const std::string& data_hash,
                                   const CheckpointBundle& physiome, const ScenarioMask& scenario,
                                   RestorationStrategy strategy, const Logger& log) {
    require_stage(physiome, Stage::kPhysioME);
    cfg.validate();
    check_dataset(cfg, data);
    check_strategy(cfg.physiome, strategy);
    scenario.validate();
    if (scenario.modalities() != cfg.modalities()) throw ConfigError("scenario does not match the modality count");
    check_folds_present(physiome, cfg);
    const FoldPlan plan = plan_folds(cfg, data);

    LinearEvalOutput out;
    out.head.stage = Stage::kLinearHead;
    out.head.config_json = to_json(cfg);
    out.head.input_hash = combine_hashes({data_hash, bundle_hash(physiome)});
    out.head.modalities = physiome.modalities;
    out.head.tensors = physiome.tensors;
    const auto active = cfg.evaluation.active_folds();
    for (int k : active) {
        FoldData fd = prepare_fold(cfg, data, physiome, plan.folds[static_cast<std::size_t>(k)], k);
        ProbeConfig pc = cfg.probe;
        const auto res = linear_eval(fd.model, fd.cache, fd.train_rows, fd.test_rows, scenario, strategy,
                                     cfg.data.n_classes, pc);
        const std::string hp = fold_prefix(k) + "head/";
        out.head.put(hp + "weight", res.probe.weight());
        out.head.put(hp + "bias", res.probe.bias());
        out.head.put(hp + "mean", res.probe.mean());
        out.head.put(hp + "scale", res.probe.scale());
        out.folds.push_back({k, res.metrics});
        out.mean.acc += res.metrics.acc / static_cast<double>(active.size());
        out.mean.auc += res.metrics.auc / static_cast<double>(active.size());
        say(log, "fold " + std::to_string(k) + " acc " + std::to_string(res.metrics.acc) + " auc " +
                     std::to_string(res.metrics.auc));
    }
    return out;
}

SweepReport sweep_stage(const RunConfig& cfg, const Dataset& data, const CheckpointBundle& physiome,
                        const std::vector<ScenarioMask>& scenarios, RestorationStrategy strategy, const Logger& log) {
    require_stage(physiome, Stage::kPhysioME);
    cfg.validate();
    check_dataset(cfg, data);
    check_strategy(cfg.physiome, strategy);
    check_folds_present(physiome, cfg);
    const FoldPlan plan = plan_folds(cfg, data);
    std::vector<FoldData> prepared;
    for (int k : cfg.evaluation.active_folds()) {
        prepared.push_back(prepare_fold(cfg, data, physiome, plan.folds[static_cast<std::size_t>(k)], k));
        say(log, "fold " + std::to_string(k) + " ready");
    }
    std::vector<FoldEvaluation> evals;
    for (const auto& fd : prepared) evals.push_back({&fd.model, &fd.cache, fd.train_rows, fd.test_rows});
    return run_sweep(evals, scenarios, strategy, cfg.data.n_classes, cfg.probe, cfg.modality_names);
}

std::vector<Prediction> infer_stage(const RunConfig& cfg, const Dataset& data, const CheckpointBundle& head, int fold,
                                    const ScenarioMask& scenario, RestorationStrategy strategy) {
    require_stage(head, Stage::kLinearHead);
    check_dataset(cfg, data);
    check_strategy(cfg.physiome, strategy);
    scenario.validate();
    if (scenario.modalities() != cfg.modalities()) throw ConfigError("scenario does not match the modality count");
    const std::string hp = fold_prefix(fold) + "head/";
    if (!head.has(hp + "weight")) throw ConfigError("checkpoint holds no probe for fold " + std::to_string(fold));
    const PhysioME model = restore_physiome(head, cfg, fold);
    LinearProbe probe;
    probe.set_state(head.matrix(hp + "weight"), head.matrix(hp + "bias"), head.matrix(hp + "mean"),
                    head.matrix(hp + "scale"));
    const TokenCache cache = build_token_cache(model, data, cfg.dp.net.frames);
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < data.size(); ++r) {
        bool ok = true;
        for (int m : scenario.observed_modalities()) ok = ok && data.available(r, m);
        if (ok) rows.push_back(r);
    }
    std::vector<Prediction> out;
    if (rows.empty()) return out;
    const Matrix proba = probe.predict_proba(extract_features(model, cache, rows, scenario, strategy));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        Prediction p;
        p.row = rows[i];
        p.label = data.labels[rows[i]].value_or(-1);
        const auto ri = static_cast<ag::Index>(i);
        Eigen::Index best = 0;
        proba.row(ri).maxCoeff(&best);
        p.predicted = static_cast<int>(best);
        p.probabilities.assign(proba.row(ri).data(), proba.row(ri).data() + proba.cols());
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace physiome
