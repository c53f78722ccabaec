// Acceptance run: one PASS/FAIL line per criterion. Criteria can be selected
// by number on the command line; with no arguments all of them run. Exit
// status is nonzero when any selected criterion fails.

#include "physiome/checkpoint.hpp"
#include "physiome/config.hpp"
#include "physiome/container.hpp"
#include "physiome/evalkit.hpp"
#include "physiome/inference.hpp"
#include "physiome/pipeline.hpp"
#include "physiome/report.hpp"

#include "support.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>

using namespace physiome;
using ag::Index;
using ag::Matrix;
using ag::Tensor;
using namespace testsupport;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Rig {
    Dataset data;
    std::vector<NeuroNet> originals;
    PhysioME model;
    TokenCache cache;
};

Rig make_rig(PhysioMEConfig cfg, std::vector<NeuroNet> nets, int samples = 24) {
    Rig r;
    r.data = generate_synthetic_dataset(tiny_data_config(samples, 3));
    r.originals = nets;
    r.model = PhysioME(cfg, std::move(nets), 5);
    r.cache = build_token_cache(r.model, r.data, tiny_net_config().frames);
    return r;
}

Rig make_rig(PhysioMEConfig cfg = tiny_physiome_config(), int samples = 24) {
    return make_rig(cfg, tiny_backbones(3), samples);
}

std::vector<std::size_t> first_rows(std::size_t n) {
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    return rows;
}

DropSamplePlan plan_with(std::vector<bool> dropped, Index n, Index h) {
    std::mt19937_64 rng(1);
    DropSamplePlan p;
    p.dropped = std::move(dropped);
    p.sampled.resize(p.dropped.size());
    for (std::size_t m = 0; m < p.dropped.size(); ++m) {
        if (!p.dropped[m]) p.sampled[m] = sample_indices(static_cast<std::size_t>(n), static_cast<std::size_t>(h), rng);
    }
    return p;
}

bool all_zero_grad(const Tensor& t) { return !t.has_grad() || t.grad().isZero(0.0); }

bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

// ------------------------------------------------------------------ 1

Outcome loss_oracles() {
    std::mt19937_64 rng(2024);
    double worst = 0;
    int instances = 0;
    auto track = [&](double got, double want) {
        worst = std::max(worst, want == 0.0 ? std::abs(got) : rel_diff(got, want));
        ++instances;
    };
    for (int trial = 0; trial < 100; ++trial) {
        const Index n = std::uniform_int_distribution<Index>(1, 8)(rng);
        const Index d = std::uniform_int_distribution<Index>(2, 16)(rng);
        const Index b = std::uniform_int_distribution<Index>(1, 4)(rng);
        const int m = std::uniform_int_distribution<int>(1, 3)(rng);
        const Index h = std::uniform_int_distribution<Index>(1, n)(rng);
        const double tau = std::uniform_real_distribution<double>(0.05, 1.0)(rng);

        // Contrastive pair loss in both backbone forms.
        const Matrix z1 = random_matrix(b, d, rng), z2 = random_matrix(b, d, rng);
        const double nx = nt_xent_oracle(rows_of(z1), rows_of(z2), tau);
        track(nt_xent(Tensor(z1), Tensor(z2), tau).item(), nx);
        track(dp_nt_xent(Tensor(z1), Tensor(z2), tau).item(), nx);

        // Masked frame reconstruction.
        const Matrix r = random_matrix(n, d, rng), z = random_matrix(n, d, rng);
        const auto k = std::uniform_int_distribution<std::size_t>(1, static_cast<std::size_t>(n))(rng);
        const auto idx = sample_indices(static_cast<std::size_t>(n), k, rng);
        const double r1 = inter_recon_loss(Tensor(r), Tensor(z), idx).item();
        track(r1, masked_mse_oracle(r, z, idx));
        const double r2 = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
        const double balance = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
        track(neuronet_total_loss(r1, r2, nx, balance), 0.5 * (masked_mse_oracle(r, z, idx) + r2) + balance * nx);

        // Multimodal objectives.
        const auto plan = random_plan(m, n, h, rng);
        std::vector<Matrix> dm, em, gm, cm;
        std::vector<Tensor> dt, et, gt, ct;
        for (int j = 0; j < m; ++j) {
            dm.push_back(random_matrix(n, d, rng));
            em.push_back(random_matrix(n, d, rng));
            gm.push_back(random_matrix(n, d, rng));
            cm.push_back(random_matrix(b, d, rng));
            dt.emplace_back(dm.back());
            et.emplace_back(em.back());
            gt.emplace_back(gm.back());
            ct.emplace_back(cm.back());
        }
        const Matrix om = random_matrix(b, d, rng);
        const double intra = intra_recon_loss(dt, et, plan).item();
        const double missing = missing_recon_loss(gt, et, plan).item();
        const double cross = cross_contra_loss(ct, Tensor(om), tau).item();
        const double io = intra_oracle(dm, em, plan), mo = missing_oracle(gm, em, plan), co = cross_oracle(cm, om, tau);
        track(intra, io);
        track(missing, mo);
        track(cross, co);
        const LossWeights w{std::uniform_real_distribution<double>(0, 2)(rng),
                            std::uniform_real_distribution<double>(0, 2)(rng),
                            std::uniform_real_distribution<double>(0, 2)(rng)};
        track(total_loss(w, Tensor::scalar(intra), Tensor::scalar(missing), Tensor::scalar(cross)).item(),
              w.alpha * io + w.beta * mo + w.gamma * co);
    }
    return {worst < 1e-6, std::to_string(instances) + " oracle comparisons, worst relative error " + fmt("%.2e", worst)};
}

// ------------------------------------------------------------------ 2

Outcome gradient_checks() {
    NeuroNetConfig ncfg = tiny_net_config();
    NeuroNet net(ncfg, 11);
    std::vector<Matrix> frames;
    std::mt19937_64 frng(1);
    for (int i = 0; i < 3; ++i) {
        frames.push_back(random_matrix(static_cast<Index>(ncfg.token_count()), static_cast<Index>(ncfg.frame_length()), frng));
    }
    auto nparams = nn::named_parameters(net, "net");
    fill_zero_tensors(nparams, 5);
    const auto g1 = finite_difference_check(
        nparams,
        [&] {
            std::mt19937_64 rng(77);
            return neuronet_batch_loss(net, frames, rng).total;
        },
        6);

    PhysioMEConfig cfg = tiny_physiome_config();
    cfg.restoration_gradient = true;
    cfg.intra_target_gradient = true;
    Rig r = make_rig(cfg, 12);
    auto params = r.model.trainable_parameters();
    fill_zero_tensors(params, 8);
    const auto plan = plan_with({false, true, false}, r.model.token_count(), 4);
    const auto rows = first_rows(3);
    const auto g2 = finite_difference_check(
        params, [&] { return physiome_forward(r.model, r.cache, rows, plan).total; }, 3);
    const bool ok = g1.max_rel < 1e-3 && g2.max_rel < 1e-3;
    return {ok, "backbone total " + fmt("%.2e", g1.max_rel) + " over " + std::to_string(g1.checked) +
                    " entries, multimodal total " + fmt("%.2e", g2.max_rel) + " over " + std::to_string(g2.checked) +
                    " entries" + (ok ? "" : "; worst " + g1.worst + " / " + g2.worst)};
}

// ------------------------------------------------------------------ 3

Outcome stop_gradient() {
    auto probe = [](bool flag, std::size_t* zero, std::size_t* total) {
        PhysioMEConfig cfg = tiny_physiome_config();
        cfg.restoration_gradient = flag;
        cfg.beta = 1.0;
        Rig r = make_rig(cfg);
        fill_zero_tensors(r.model.trainable_parameters(), 3);
        const auto plan = plan_with({false, true, false}, r.model.token_count(), 4);
        auto params = r.model.trainable_parameters();
        for (auto p : params) p.second.zero_grad();
        physiome_forward(r.model, r.cache, first_rows(4), plan).missing.backward();
        *zero = 0;
        *total = 0;
        for (const auto& [name, t] : params) {
            if (!starts_with(name, "physiome/mm_enc/") && !starts_with(name, "physiome/modality_enc/")) continue;
            ++*total;
            *zero += all_zero_grad(t) ? 1 : 0;
        }
    };
    std::size_t zero_off = 0, total_off = 0, zero_on = 0, total_on = 0;
    probe(false, &zero_off, &total_off);
    probe(true, &zero_on, &total_on);
    const bool ok = total_off > 0 && zero_off == total_off && zero_on < total_on;
    return {ok, "stopped: " + std::to_string(zero_off) + "/" + std::to_string(total_off) +
                    " encoder tensors with exactly zero gradient; opened: " + std::to_string(total_on - zero_on) +
                    " tensors nonzero"};
}

// ------------------------------------------------------------------ 4

Outcome lora_identity() {
    // Backbones go through a short DP-NeuroNet pretraining first so the
    // check runs on trained, not freshly initialized, weights.
    const Dataset pre = generate_synthetic_dataset(tiny_data_config(16, 3));
    DPNeuroNetConfig dc;
    dc.net = tiny_net_config();
    dc.epochs = 1;
    dc.batch_size = 8;
    std::vector<NeuroNet> nets;
    for (int m = 0; m < 3; ++m) nets.push_back(pretrain_dp_neuronet(pre, m, dc));
    Rig r = make_rig(tiny_physiome_config(), nets);
    std::size_t checked = 0, identical = 0;
    for (int m = 0; m < 3; ++m) {
        for (std::size_t b = 0; b < r.cache.size(); ++b) {
            const Matrix& tokens = r.cache.tokens[b][static_cast<std::size_t>(m)];
            const Matrix adapted = r.model.encode_modality(m, tokens).value();
            const Matrix frozen = r.originals[static_cast<std::size_t>(m)].encode_all(Tensor(tokens)).value();
            ++checked;
            identical += bit_equal(adapted, frozen.bottomRows(frozen.rows() - 1)) ? 1 : 0;
        }
    }
    std::vector<Matrix> before;
    r.model.visit_frozen([&](const std::string&, Tensor& t) { before.push_back(t.value()); });
    PhysioMETrainer trainer(r.model, r.cache);
    for (int i = 0; i < 100; ++i) trainer.step();
    std::vector<Matrix> after;
    r.model.visit_frozen([&](const std::string&, Tensor& t) { after.push_back(t.value()); });
    const bool hash_ok = hash_tensors(before) == hash_tensors(after);
    return {identical == checked && hash_ok, std::to_string(identical) + "/" + std::to_string(checked) +
                                                 " encoder outputs bit-identical; frozen hash after 100 steps " +
                                                 (hash_ok ? "unchanged" : "CHANGED")};
}

// ------------------------------------------------------------------ 5, 7

struct SyntheticRun {
    RunConfig cfg;
    Dataset data;
    std::string hash;
    CheckpointBundle physiome;
};

std::string single_line(const std::string& s) {
    std::string out = s;
    for (auto& c : out) {
        if (c == '\n') c = ' ';
    }
    return out;
}

Outcome end_to_end(SyntheticRun* keep) {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = preset_config("synthetic");
    cfg.validate();
    const Dataset data = generate_synthetic_dataset(cfg.data);
    const auto dir = fs::temp_directory_path() / "physiome_acceptance";
    fs::create_directories(dir);
    container::write_container(dir / "synthetic.phy", data);
    const std::string hash = container::file_hash(dir / "synthetic.phy");
    const CheckpointBundle backbones = pretrain_backbones(cfg, data, hash);
    const CheckpointBundle physiome = pretrain_physiome(cfg, data, hash, backbones);
    const auto eval = linear_eval_stage(cfg, data, hash, physiome, ScenarioMask::full(cfg.modalities()),
                                        cfg.evaluation.strategy);
    const double minutes = seconds_since(t0) / 60.0;
    int max_dim = std::max({cfg.dp.net.encoder_dim, cfg.dp.net.decoder_dim, cfg.physiome.mm_dim,
                            cfg.physiome.decoder_dim, cfg.physiome.restoration_dim});
    for (int h : cfg.dp.net.projection_hidden) max_dim = std::max(max_dim, h);
    for (int h : cfg.physiome.projection_hidden) max_dim = std::max(max_dim, h);
    std::string per_fold;
    for (const auto& f : eval.folds) per_fold += " " + fmt("%.3f", f.metrics.acc);
    const bool ok = eval.mean.acc >= 0.90 && eval.mean.auc >= 0.95 && minutes < 30.0 && max_dim <= 128 &&
                    cfg.modalities() == 3 && cfg.data.n_classes == 4;
    *keep = {cfg, data, hash, physiome};
    return {ok, std::to_string(data.size()) + " samples, " + std::to_string(eval.folds.size()) + " folds, ACC " +
                    fmt("%.4f", eval.mean.acc) + " (folds" + per_fold + "), AUC " + fmt("%.4f", eval.mean.auc) +
                    ", pipeline " + fmt("%.1f", minutes) + " min, widest layer " + std::to_string(max_dim)};
}

Outcome sweep_structure(const SyntheticRun& run) {
    const auto scenarios = all_scenarios(run.cfg.modalities());
    const SweepReport rep = sweep_stage(run.cfg, run.data, run.physiome, scenarios, run.cfg.evaluation.strategy);
    const std::string csv = report::sweep_csv(rep);
    const std::string md = report::sweep_markdown(rep);
    const CsvMav m = recompute_mav_from_csv(csv);
    std::vector<std::string> problems;
    if (rep.rows.size() != 7u || m.rows != 7) problems.push_back("row count " + std::to_string(rep.rows.size()));
    if (rep.rows.empty() || !rep.rows[0].scenario.is_full() || rep.rows[0].delta_acc != 0.0 ||
        rep.rows[0].delta_auc != 0.0) {
        problems.push_back("full row deltas not (0, 0)");
    }
    double mav_err = 1.0;
    if (m.emitted.size() == 4u) {
        mav_err = std::max({std::abs(m.emitted[0] - m.acc), std::abs(m.emitted[1] - m.auc),
                            std::abs(m.emitted[2] - m.dacc), std::abs(m.emitted[3] - m.dauc)});
    }
    if (!(mav_err <= 1e-9)) problems.push_back("MAV mismatch " + fmt("%.2e", mav_err));
    // Layout: one table row per scenario plus the MAV footer; deltas in
    // parentheses on every non-full row and on the footer.
    std::vector<std::string> lines;
    std::istringstream in(md);
    for (std::string l; std::getline(in, l);) {
        if (!l.empty() && l[0] == '|') lines.push_back(l);
    }
    bool layout = lines.size() == 2 + rep.rows.size() + 1;
    for (std::size_t i = 0; layout && i < rep.rows.size(); ++i) {
        const bool has_paren = lines[2 + i].find(" (") != std::string::npos;
        layout = has_paren == !rep.rows[i].scenario.is_full();
    }
    layout = layout && lines.back().find("MAV") != std::string::npos && lines.back().find(" (") != std::string::npos;
    if (!layout) problems.push_back("markdown layout");
    std::string summary;
    for (const auto& row : rep.rows) summary += " " + row.scenario.to_string() + "=" + fmt("%.3f", row.acc);
    std::string joined;
    for (const auto& p : problems) joined += "; " + p;
    return {problems.empty(), std::to_string(rep.rows.size()) + " rows," + summary + ", MAV ACC " +
                                  fmt("%.3f", rep.mav_acc) + ", MAV |dACC| " + fmt("%.3f", rep.mav_delta_acc) +
                                  ", MAV recompute error " + fmt("%.1e", mav_err) + joined};
}

// ------------------------------------------------------------------ 6

double single_modality_acc(const SweepReport& rep) {
    double total = 0;
    int n = 0;
    for (const auto& row : rep.rows) {
        if (row.scenario.observed_modalities().size() != 1u) continue;
        total += row.acc;
        ++n;
    }
    return total / n;
}

Outcome strategy_ordering() {
    const RunConfig base = preset_config("synthetic");
    const Dataset data = generate_synthetic_dataset(base.data);
    std::vector<ScenarioMask> singles;
    for (const auto& s : all_scenarios(base.modalities())) {
        if (s.observed_modalities().size() == 1u) singles.push_back(s);
    }
    double restoration = 0, memory = 0, masked = 0;
    std::string per_seed;
    const int seeds = 3;
    for (int seed = 1; seed <= seeds; ++seed) {
        RunConfig cfg = base;
        cfg.seed = static_cast<std::uint64_t>(seed);
        cfg.propagate_seed();
        cfg.evaluation.run_folds = {0};
        const CheckpointBundle backbones = pretrain_backbones(cfg, data, "acceptance");

        RunConfig rest_cfg = cfg;
        rest_cfg.physiome.training_strategy = RestorationStrategy::kRestorationDecoder;
        const CheckpointBundle rest_model = pretrain_physiome(rest_cfg, data, "acceptance", backbones);
        const double r = single_modality_acc(
            sweep_stage(rest_cfg, data, rest_model, singles, RestorationStrategy::kRestorationDecoder));
        const double k = single_modality_acc(
            sweep_stage(rest_cfg, data, rest_model, singles, RestorationStrategy::kMaskedToken));

        RunConfig mem_cfg = cfg;
        mem_cfg.physiome.training_strategy = RestorationStrategy::kMemoryToken;
        mem_cfg.evaluation.strategy = RestorationStrategy::kMemoryToken;
        const CheckpointBundle mem_model = pretrain_physiome(mem_cfg, data, "acceptance", backbones);
        const double mm = single_modality_acc(
            sweep_stage(mem_cfg, data, mem_model, singles, RestorationStrategy::kMemoryToken));

        restoration += r / seeds;
        memory += mm / seeds;
        masked += k / seeds;
        per_seed += " seed" + std::to_string(seed) + "=(" + fmt("%.3f", r) + "," + fmt("%.3f", mm) + "," +
                    fmt("%.3f", k) + ")";
    }
    const bool ok = restoration - memory >= 0.01 && memory - masked >= 0.01;
    return {ok, "single-modality ACC restoration " + fmt("%.4f", restoration) + ", memory " + fmt("%.4f", memory) +
                    ", masked " + fmt("%.4f", masked) + ";" + per_seed};
}

// ------------------------------------------------------------------ 8

Outcome metric_oracles() {
    std::mt19937_64 rng(808);
    double worst = 0;
    int auc_instances = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = std::uniform_int_distribution<int>(2, 120)(rng);
        std::uniform_int_distribution<int> level(0, trial % 3 == 0 ? 4 : 100000);
        std::vector<double> s(static_cast<std::size_t>(n));
        std::vector<int> y(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            s[static_cast<std::size_t>(i)] = level(rng) * 0.01;
            y[static_cast<std::size_t>(i)] = static_cast<int>(rng() & 1u);
        }
        y[0] = 0;
        y[1] = 1;
        double wins = 0, pairs = 0;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (y[static_cast<std::size_t>(i)] != 1 || y[static_cast<std::size_t>(j)] != 0) continue;
                pairs += 1;
                const double a = s[static_cast<std::size_t>(i)], b = s[static_cast<std::size_t>(j)];
                wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
            }
        }
        worst = std::max(worst, std::abs(auc(s, y) - wins / pairs));
        ++auc_instances;
    }
    int acc_mismatch = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = std::uniform_int_distribution<int>(1, 100)(rng);
        std::vector<int> p, y;
        int tp_tn = 0;
        for (int i = 0; i < n; ++i) {
            p.push_back(std::uniform_int_distribution<int>(0, 3)(rng));
            y.push_back(std::uniform_int_distribution<int>(0, 3)(rng));
            tp_tn += p.back() == y.back();
        }
        acc_mismatch += accuracy(p, y) != static_cast<double>(tp_tn) / n;
    }
    return {worst <= 1e-12 && acc_mismatch == 0,
            std::to_string(auc_instances) + " AUC instances with ties, worst |diff| " + fmt("%.1e", worst) +
                "; accuracy mismatches " + std::to_string(acc_mismatch) + "/200"};
}

// ------------------------------------------------------------------ 9

Outcome fold_integrity() {
    std::mt19937_64 rng(909);
    int leaks = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = std::uniform_int_distribution<int>(5, 60)(rng);
        std::vector<std::string> ids;
        for (int i = 0; i < n; ++i) ids.push_back("s" + std::to_string(rng() % 100000) + "_" + std::to_string(i));
        const FoldPlan plan = make_folds(ids, rng());
        std::map<std::string, int> tested;
        bool clean = plan.folds.size() == 5u;
        for (const Fold& f : plan.folds) {
            std::map<std::string, int> role;
            for (const auto& s : f.pretrain) role[s] |= 1;
            for (const auto& s : f.train) role[s] |= 2;
            for (const auto& s : f.test) {
                role[s] |= 4;
                ++tested[s];
            }
            std::size_t count = f.pretrain.size() + f.train.size() + f.test.size();
            clean = clean && count == ids.size() && role.size() == ids.size();
            for (const auto& [s, bits] : role) clean = clean && (bits == 1 || bits == 2 || bits == 4);
        }
        clean = clean && tested.size() == ids.size();
        for (const auto& [s, c] : tested) clean = clean && c == 1;
        leaks += clean ? 0 : 1;
    }
    return {leaks == 0, "1000 random plans, " + std::to_string(leaks) + " with leakage"};
}

// ------------------------------------------------------------------ 10

struct StageBytes {
    std::string data, backbone, physiome, head, sweep_csv, sweep_md, losses;
};

StageBytes run_all_stages() {
    RunConfig cfg = preset_config("synthetic");
    cfg.data.n_samples = 400;
    cfg.dp.epochs = 1;
    cfg.physiome.epochs = 1;
    cfg.probe.epochs = 5;
    cfg.evaluation.run_folds = {0, 3};
    cfg.seed = 17;
    cfg.propagate_seed();
    cfg.validate();
    const auto dir = fs::temp_directory_path() / "physiome_acceptance_det";
    fs::create_directories(dir);
    const Dataset data = generate_synthetic_dataset(cfg.data);
    container::write_container(dir / "d.phy", data);
    StageBytes out;
    out.data = report::read_text(dir / "d.phy");
    const std::string hash = container::file_hash(dir / "d.phy");
    std::vector<BackboneHistory> bh;
    const CheckpointBundle b = pretrain_backbones(cfg, data, hash, &bh);
    save_checkpoint(dir / "b.ckpt", b);
    out.backbone = report::read_text(dir / "b.ckpt");
    std::vector<PhysioMEHistory> ph;
    const CheckpointBundle p = pretrain_physiome(cfg, data, hash, b, &ph);
    save_checkpoint(dir / "p.ckpt", p);
    out.physiome = report::read_text(dir / "p.ckpt");
    const auto lin = linear_eval_stage(cfg, data, hash, p, ScenarioMask::parse("101"), cfg.evaluation.strategy);
    save_checkpoint(dir / "l.ckpt", lin.head);
    out.head = report::read_text(dir / "l.ckpt") + report::linear_eval_csv(lin.folds, lin.mean, ScenarioMask::parse("101"));
    const SweepReport rep = sweep_stage(cfg, data, p, all_scenarios(3), cfg.evaluation.strategy);
    out.sweep_csv = report::sweep_csv(rep);
    out.sweep_md = report::sweep_markdown(rep) + report::sweep_bars_svg(rep);
    out.losses = report::backbone_losses_csv(bh) + report::physiome_losses_csv(ph);
    return out;
}

Outcome determinism() {
    const StageBytes a = run_all_stages();
    const StageBytes b = run_all_stages();
    std::vector<std::string> differing;
    auto cmp = [&](const std::string& name, const std::string& x, const std::string& y) {
        if (x != y || x.empty()) differing.push_back(name);
    };
    cmp("dataset", a.data, b.data);
    cmp("dp_neuronet checkpoint", a.backbone, b.backbone);
    cmp("physiome checkpoint", a.physiome, b.physiome);
    cmp("linear_head checkpoint", a.head, b.head);
    cmp("sweep csv", a.sweep_csv, b.sweep_csv);
    cmp("sweep markdown/plot", a.sweep_md, b.sweep_md);
    cmp("loss reports", a.losses, b.losses);
    std::string joined;
    for (const auto& d : differing) joined += " " + d;
    return {differing.empty(), differing.empty() ? "7 artifacts bit-identical across two runs (" +
                                                       std::to_string(a.backbone.size() + a.physiome.size()) +
                                                       " checkpoint bytes)"
                                                 : "differs:" + joined};
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
    auto wanted = [&](int k) { return selected.empty() || std::find(selected.begin(), selected.end(), k) != selected.end(); };

    int failures = 0;
    auto report_line = [&](int k, const std::string& name, const std::function<Outcome()>& fn) {
        if (!wanted(k)) return;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + single_line(e.what())};
        }
        failures += o.pass ? 0 : 1;
        std::printf("%s  criterion %2d  %-28s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", k, name.c_str(),
                    o.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
    };

    report_line(1, "loss oracles", loss_oracles);
    report_line(2, "finite-difference gradients", gradient_checks);
    report_line(3, "stop-gradient exactness", stop_gradient);
    report_line(4, "LoRA identity", lora_identity);
    report_line(8, "metric oracles", metric_oracles);
    report_line(9, "fold integrity", fold_integrity);
    SyntheticRun run;
    bool have_run = false;
    report_line(5, "desk-scale end-to-end", [&] {
        Outcome o = end_to_end(&run);
        have_run = true;
        return o;
    });
    report_line(7, "sweep structure", [&] {
        if (!have_run) {
            // Criterion 7 alone: build the same synthetic checkpoint first.
            end_to_end(&run);
            have_run = true;
        }
        return sweep_structure(run);
    });
    report_line(10, "determinism", determinism);
    report_line(6, "restoration strategy order", strategy_ordering);
    return failures == 0 ? 0 : 1;
}
