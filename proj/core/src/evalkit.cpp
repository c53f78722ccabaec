#include "physiome/evalkit.hpp"

#include "physiome/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <thread>

namespace physiome {

using ag::Index;
using ag::Matrix;
using ag::Tensor;

double accuracy(std::span<const int> preds, std::span<const int> labels) {
    if (preds.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
    if (preds.empty()) throw std::invalid_argument("accuracy: empty input");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i] ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auc: length mismatch");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Tied scores share the mean of the ranks they span (1-based).
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
        i = j + 1;
    }
    double pos_rank_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("auc: labels must be 0 or 1");
        if (labels[i] == 1) {
            pos_rank_sum += rank[i];
            ++pos;
        }
    }
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) throw std::invalid_argument("auc: both classes must be present");
    const double p = static_cast<double>(pos);
    return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

double macro_auc(const Matrix& probabilities, std::span<const int> labels) {
    if (static_cast<std::size_t>(probabilities.rows()) != labels.size()) {
        throw std::invalid_argument("macro_auc: length mismatch");
    }
    double sum = 0.0;
    int used = 0;
    std::vector<double> scores(labels.size());
    std::vector<int> binary(labels.size());
    for (Index c = 0; c < probabilities.cols(); ++c) {
        std::size_t pos = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            scores[i] = probabilities(static_cast<Index>(i), c);
            binary[i] = labels[i] == c ? 1 : 0;
            pos += static_cast<std::size_t>(binary[i]);
        }
        if (pos == 0 || pos == labels.size()) continue;
        sum += auc(scores, binary);
        ++used;
    }
    if (used == 0) throw std::invalid_argument("macro_auc: labels contain a single class");
    return sum / used;
}

FoldPlan make_folds(std::span<const std::string> subjects, std::uint64_t seed, int k, double pretrain_fraction) {
    std::vector<std::string> ids(subjects.begin(), subjects.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (k < 2) throw ConfigError("fold count must be >= 2");
    if (static_cast<int>(ids.size()) < k) {
        throw ConfigError("need at least " + std::to_string(k) + " subjects for " + std::to_string(k) +
                          "-fold cross-validation, got " + std::to_string(ids.size()));
    }
    if (!(pretrain_fraction > 0.0 && pretrain_fraction < 1.0)) throw ConfigError("pretrain_fraction must be in (0, 1)");
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);

    FoldPlan plan;
    plan.seed = seed;
    const std::size_t n = ids.size();
    const auto kk = static_cast<std::size_t>(k);
    std::size_t start = 0;
    for (std::size_t f = 0; f < kk; ++f) {
        const std::size_t size = n / kk + (f < n % kk ? 1 : 0);
        Fold fold;
        std::vector<std::string> rest;
        for (std::size_t i = 0; i < n; ++i) {
            if (i >= start && i < start + size) {
                fold.test.push_back(ids[i]);
            } else {
                rest.push_back(ids[i]);
            }
        }
        start += size;
        if (rest.size() < 2) throw ConfigError("too few non-test subjects to form pretrain and train sets");
        auto n_pre = static_cast<std::size_t>(std::llround(pretrain_fraction * static_cast<double>(rest.size())));
        n_pre = std::clamp<std::size_t>(n_pre, 1, rest.size() - 1);
        fold.pretrain.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_pre));
        fold.train.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_pre), rest.end());
        plan.folds.push_back(std::move(fold));
    }
    return plan;
}

void check_fold_integrity(const FoldPlan& plan, std::span<const std::string> subjects) {
    const std::set<std::string> all(subjects.begin(), subjects.end());
    std::set<std::string> tested;
    for (std::size_t f = 0; f < plan.folds.size(); ++f) {
        const Fold& fold = plan.folds[f];
        std::set<std::string> seen;
        for (const auto* role : {&fold.pretrain, &fold.train, &fold.test}) {
            for (const auto& s : *role) {
                if (!seen.insert(s).second) {
                    throw std::logic_error("fold " + std::to_string(f) + ": subject " + s + " appears in two roles");
                }
            }
        }
        if (seen != all) throw std::logic_error("fold " + std::to_string(f) + " does not cover every subject");
        for (const auto& s : fold.test) {
            if (!tested.insert(s).second) throw std::logic_error("subject " + s + " is tested in two folds");
        }
    }
    if (tested != all) throw std::logic_error("test sets do not cover every subject");
}

void LinearProbe::fit(const Matrix& features, std::span<const int> labels, int n_classes, const ProbeConfig& cfg) {
    if (features.rows() == 0 || static_cast<std::size_t>(features.rows()) != labels.size()) {
        throw std::invalid_argument("probe: features and labels must be nonempty and aligned");
    }
    if (n_classes < 2) throw ConfigError("probe needs at least two classes");
    for (int y : labels) {
        if (y < 0 || y >= n_classes) throw std::invalid_argument("probe: label out of range");
    }
    const Index d = features.cols();
    mean_ = features.colwise().mean();
    scale_ = ((features.rowwise() - mean_.row(0)).array().square().colwise().mean().sqrt()).matrix();
    for (Index j = 0; j < d; ++j) {
        if (!(scale_(0, j) > 1e-12)) scale_(0, j) = 1.0;
    }
    const Matrix x = standardize(features);

    Tensor w = nn::make_param(Matrix::Zero(d, n_classes));
    Tensor b = nn::make_param(Matrix::Zero(1, n_classes));
    optim::AdamW opt({{"probe/weight", w}, {"probe/bias", b}}, cfg.optimizer);
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch = static_cast<std::size_t>(std::max(1, cfg.batch_size));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            std::vector<Index> rows;
            std::vector<Index> y;
            for (std::size_t i = start; i < end; ++i) {
                rows.push_back(static_cast<Index>(order[i]));
                y.push_back(labels[order[i]]);
            }
            const Tensor xb = ag::gather_rows(Tensor(x), rows);
            const Tensor logits = ag::add_row(ag::matmul(xb, w), b);
            const Tensor nll = ag::sub(ag::logsumexp_rows(logits), ag::pick(logits, y));
            const Tensor loss = ag::scale(ag::sum_all(nll), 1.0 / static_cast<double>(rows.size()));
            opt.zero_grad();
            loss.backward();
            opt.step();
        }
    }
    weight_ = w.value();
    bias_ = b.value();
}

void LinearProbe::set_state(Matrix weight, Matrix bias, Matrix mean, Matrix scale) {
    weight_ = std::move(weight);
    bias_ = std::move(bias);
    mean_ = std::move(mean);
    scale_ = std::move(scale);
}

Matrix LinearProbe::standardize(const Matrix& features) const {
    if (features.cols() != mean_.cols()) throw std::invalid_argument("probe: feature width mismatch");
    return ((features.rowwise() - mean_.row(0)).array().rowwise() / scale_.row(0).array()).matrix();
}

Matrix LinearProbe::predict_proba(const Matrix& features) const {
    Matrix logits = (standardize(features) * weight_).rowwise() + bias_.row(0);
    for (Index r = 0; r < logits.rows(); ++r) {
        const double m = logits.row(r).maxCoeff();
        logits.row(r) = (logits.row(r).array() - m).exp().matrix();
        logits.row(r) /= logits.row(r).sum();
    }
    return logits;
}

std::vector<int> LinearProbe::predict(const Matrix& features) const {
    const Matrix p = predict_proba(features);
    std::vector<int> out(static_cast<std::size_t>(p.rows()));
    for (Index r = 0; r < p.rows(); ++r) {
        Index best = 0;
        p.row(r).maxCoeff(&best);
        out[static_cast<std::size_t>(r)] = static_cast<int>(best);
    }
    return out;
}

int configured_threads() {
    const char* env = std::getenv("PHYSIOME_NUM_THREADS");
    if (env == nullptr || *env == '\0') return 1;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw ConfigError(std::string("PHYSIOME_NUM_THREADS must be a positive integer, got '") + env + "'");
    return static_cast<int>(std::min<long>(v, 256));
}

Matrix extract_features(const PhysioME& model, const TokenCache& cache, std::span<const std::size_t> rows,
                        const ScenarioMask& scenario, RestorationStrategy strategy) {
    const Index d = model.config().mm_dim;
    Matrix out(static_cast<Index>(rows.size()), d);
    for (std::size_t row : rows) {
        if (row >= cache.size()) throw std::out_of_range("feature row out of range");
        for (int m : scenario.observed_modalities()) {
            if (!cache.available[row][static_cast<std::size_t>(m)]) {
                throw std::invalid_argument("row " + std::to_string(row) + " lacks observed modality " + std::to_string(m));
            }
        }
    }
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const FusionResult r = infer_fusion(model, cache.tokens[rows[i]], scenario, strategy);
            out.row(static_cast<Index>(i)) = r.representation.value().row(0);
        }
    };
    const auto threads = std::min<std::size_t>(static_cast<std::size_t>(configured_threads()), rows.size());
    if (threads <= 1) {
        work(0, rows.size());
        return out;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (rows.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(rows.size(), begin + chunk);
        if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
    return out;
}

Metrics evaluate_probe(const LinearProbe& probe, const Matrix& features, std::span<const int> labels) {
    Metrics out;
    const auto preds = probe.predict(features);
    out.acc = accuracy(preds, labels);
    out.auc = macro_auc(probe.predict_proba(features), labels);
    return out;
}

namespace {

std::vector<int> labels_of(const TokenCache& cache, std::span<const std::size_t> rows) {
    std::vector<int> out;
    for (std::size_t r : rows) {
        if (cache.labels[r] < 0) throw std::invalid_argument("row " + std::to_string(r) + " has no label");
        out.push_back(cache.labels[r]);
    }
    return out;
}

}  // namespace

LinearEvalResult linear_eval(const PhysioME& model, const TokenCache& cache, std::span<const std::size_t> train_rows,
                             std::span<const std::size_t> test_rows, const ScenarioMask& scenario,
                             RestorationStrategy strategy, int n_classes, const ProbeConfig& cfg) {
    LinearEvalResult out;
    const ScenarioMask full = ScenarioMask::full(model.modalities());
    out.probe.fit(extract_features(model, cache, train_rows, full, strategy), labels_of(cache, train_rows), n_classes,
                  cfg);
    out.metrics = evaluate_probe(out.probe, extract_features(model, cache, test_rows, scenario, strategy),
                                 labels_of(cache, test_rows));
    return out;
}

void finalize_sweep(SweepReport& report) {
    report.mav_acc = report.mav_auc = report.mav_delta_acc = report.mav_delta_auc = 0.0;
    if (report.rows.empty()) return;
    std::size_t non_full = 0;
    for (const auto& r : report.rows) {
        report.mav_acc += r.acc;
        report.mav_auc += r.auc;
        if (!r.scenario.is_full()) {
            report.mav_delta_acc += std::abs(r.delta_acc);
            report.mav_delta_auc += std::abs(r.delta_auc);
            ++non_full;
        }
    }
    const auto n = static_cast<double>(report.rows.size());
    report.mav_acc /= n;
    report.mav_auc /= n;
    if (non_full > 0) {
        report.mav_delta_acc /= static_cast<double>(non_full);
        report.mav_delta_auc /= static_cast<double>(non_full);
    }
}

SweepReport run_sweep(std::span<const FoldEvaluation> folds, std::span<const ScenarioMask> scenarios,
                      RestorationStrategy strategy, int n_classes, const ProbeConfig& cfg,
                      std::vector<std::string> modality_names) {
    if (folds.empty()) throw std::invalid_argument("run_sweep needs at least one fold");
    if (scenarios.empty()) throw std::invalid_argument("run_sweep needs at least one scenario");
    const int mc = folds.front().model->modalities();
    if (modality_names.empty()) {
        for (int m = 0; m < mc; ++m) modality_names.push_back("m" + std::to_string(m));
    }
    SweepReport report;
    report.modality_names = std::move(modality_names);
    report.folds = static_cast<int>(folds.size());
    report.strategy = to_string(strategy);
    for (const auto& s : scenarios) {
        if (s.modalities() != mc) throw ConfigError("scenario " + s.to_string() + " does not match the model");
        report.rows.push_back({s, 0.0, 0.0, 0.0, 0.0});
    }
    const ScenarioMask full = ScenarioMask::full(mc);
    Metrics full_metrics;
    bool full_requested = false;
    for (const auto& s : scenarios) full_requested = full_requested || s.is_full();
    for (const auto& fold : folds) {
        LinearProbe probe;
        probe.fit(extract_features(*fold.model, *fold.cache, fold.train_rows, full, strategy),
                  labels_of(*fold.cache, fold.train_rows), n_classes, cfg);
        const auto test_labels = labels_of(*fold.cache, fold.test_rows);
        for (auto& row : report.rows) {
            const Metrics m = evaluate_probe(
                probe, extract_features(*fold.model, *fold.cache, fold.test_rows, row.scenario, strategy), test_labels);
            row.acc += m.acc;
            row.auc += m.auc;
        }
    }
    const double inv = 1.0 / static_cast<double>(folds.size());
    for (auto& row : report.rows) {
        row.acc *= inv;
        row.auc *= inv;
        if (row.scenario.is_full()) full_metrics = {row.acc, row.auc};
    }
    report.has_full = full_requested;
    if (full_requested) {
        for (auto& row : report.rows) {
            row.delta_acc = row.scenario.is_full() ? 0.0 : row.acc - full_metrics.acc;
            row.delta_auc = row.scenario.is_full() ? 0.0 : row.auc - full_metrics.auc;
        }
    }
    finalize_sweep(report);
    return report;
}

}  // namespace physiome
