#include "physiome/training.hpp"

#include "physiome/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace physiome {

using ag::Index;
using ag::Matrix;
using ag::Tensor;

std::vector<int> DropSamplePlan::kept() const {
    std::vector<int> out;
    for (int m = 0; m < modalities(); ++m) {
        if (!dropped[static_cast<std::size_t>(m)]) out.push_back(m);
    }
    return out;
}

std::vector<int> DropSamplePlan::dropped_modalities() const {
    std::vector<int> out;
    for (int m = 0; m < modalities(); ++m) {
        if (dropped[static_cast<std::size_t>(m)]) out.push_back(m);
    }
    return out;
}

DropSamplePlan make_plan(int modalities, std::size_t n, double ratio, double drop_prob, std::mt19937_64& rng) {
    if (modalities < 1) throw std::invalid_argument("make_plan needs at least one modality");
    if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw std::invalid_argument("drop_prob must be in [0, 1)");
    DropSamplePlan plan;
    const auto mc = static_cast<std::size_t>(modalities);
    std::bernoulli_distribution drop(drop_prob);
    do {
        plan.dropped.assign(mc, false);
        for (std::size_t m = 0; m < mc; ++m) plan.dropped[m] = drop(rng);
    } while (std::all_of(plan.dropped.begin(), plan.dropped.end(), [](bool d) { return d; }));
    plan.sampled.assign(mc, {});
    const std::size_t keep = visible_count(n, ratio);
    for (std::size_t m = 0; m < mc; ++m) {
        if (!plan.dropped[m]) plan.sampled[m] = sample_indices(n, keep, rng);
    }
    return plan;
}

DropSamplePlan plan_for_batch(std::uint64_t seed, std::uint64_t batch_index, int modalities, std::size_t n,
                              double ratio, double drop_prob) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(batch_index), static_cast<std::uint32_t>(batch_index >> 32), 0x706c616eu};
    std::mt19937_64 rng(seq);
    return make_plan(modalities, n, ratio, drop_prob, rng);
}

Tensor intra_recon_loss(std::span<const Tensor> d, std::span<const Tensor> e, const DropSamplePlan& plan) {
    const auto kept = plan.kept();
    if (kept.empty()) throw std::invalid_argument("intra_recon_loss: no kept modality");
    std::vector<Tensor> terms;
    for (int m : kept) {
        const auto mi = static_cast<std::size_t>(m);
        const auto n = static_cast<std::size_t>(e[mi].rows());
        const auto unsampled = complement_indices(n, plan.sampled[mi]);
        if (unsampled.empty()) continue;
        terms.push_back(inter_recon_loss(d[mi], e[mi], unsampled));
    }
    if (terms.empty()) return Tensor::scalar(0.0);
    return ag::scale(ag::sum_tensors(terms), 1.0 / static_cast<double>(terms.size()));
}

Tensor missing_recon_loss(std::span<const Tensor> g, std::span<const Tensor> e, const DropSamplePlan& plan) {
    const auto dropped = plan.dropped_modalities();
    if (dropped.empty()) return Tensor::scalar(0.0);
    std::vector<Tensor> terms;
    for (int m : dropped) {
        const auto mi = static_cast<std::size_t>(m);
        std::vector<Index> all(static_cast<std::size_t>(e[mi].rows()));
        std::iota(all.begin(), all.end(), Index{0});
        terms.push_back(inter_recon_loss(g[mi], e[mi], all));
    }
    return ag::scale(ag::sum_tensors(terms), 1.0 / static_cast<double>(terms.size()));
}

Tensor cross_contra_loss(std::span<const Tensor> em, const Tensor& om, double temperature) {
    if (em.empty()) throw std::invalid_argument("cross_contra_loss needs at least one modality");
    std::vector<Tensor> terms;
    for (const auto& t : em) terms.push_back(nt_xent(t, om, temperature));
    return ag::scale(ag::sum_tensors(terms), 1.0 / static_cast<double>(terms.size()));
}

Tensor total_loss(const LossWeights& w, const Tensor& intra, const Tensor& missing, const Tensor& cross) {
    const Tensor parts[] = {ag::scale(intra, w.alpha), ag::scale(missing, w.beta), ag::scale(cross, w.gamma)};
    return ag::sum_tensors(parts);
}

double total_loss(const LossWeights& w, double intra, double missing, double cross) {
    return w.alpha * intra + w.beta * missing + w.gamma * cross;
}

bool TokenCache::complete(std::size_t row) const {
    return std::all_of(available[row].begin(), available[row].end(), [](bool a) { return a; });
}

TokenCache build_token_cache(const PhysioME& model, const Dataset& data, const FrameSpec& frames) {
    if (data.modalities != model.modalities()) {
        throw ConfigError("dataset has " + std::to_string(data.modalities) + " modalities, model expects " +
                          std::to_string(model.modalities()));
    }
    TokenCache cache;
    const auto mc = static_cast<std::size_t>(data.modalities);
    cache.tokens.resize(data.size(), std::vector<Matrix>(mc));
    cache.available.resize(data.size(), std::vector<bool>(mc, false));
    for (std::size_t b = 0; b < data.size(); ++b) {
        for (int m = 0; m < data.modalities; ++m) {
            if (!data.available(b, m)) continue;
            const auto mi = static_cast<std::size_t>(m);
            cache.tokens[b][mi] = model.frame_tokens(m, segment_frames(data.windows[b][mi], frames));
            if (cache.tokens[b][mi].rows() != model.token_count()) {
                throw ConfigError("window produces " + std::to_string(cache.tokens[b][mi].rows()) +
                                  " frames, backbone expects " + std::to_string(model.token_count()));
            }
            cache.available[b][mi] = true;
        }
        cache.labels.push_back(data.labels[b].value_or(-1));
        cache.subjects.push_back(data.subject_ids[b]);
    }
    return cache;
}

StepLosses physiome_forward(const PhysioME& model, const TokenCache& cache, std::span<const std::size_t> rows,
                            const DropSamplePlan& plan, const nn::Mode& mode) {
    if (rows.empty()) throw std::invalid_argument("physiome_forward on an empty batch");
    const int mc = model.modalities();
    if (plan.modalities() != mc) throw std::invalid_argument("plan modality count does not match the model");
    const auto& cfg = model.config();
    const bool memory = cfg.training_strategy == RestorationStrategy::kMemoryToken;
    const auto kept = plan.kept();
    const auto dropped = plan.dropped_modalities();

    std::vector<Tensor> intra_terms, missing_terms, om_rows;
    std::vector<std::vector<Tensor>> em_rows(static_cast<std::size_t>(mc));
    for (std::size_t row : rows) {
        if (!cache.complete(row)) throw std::invalid_argument("training rows must have every modality available");
        std::vector<Tensor> e(static_cast<std::size_t>(mc));
        for (int m = 0; m < mc; ++m) {
            e[static_cast<std::size_t>(m)] = model.encode_modality(m, cache.tokens[row][static_cast<std::size_t>(m)], mode);
        }
        std::vector<ModalityRun> runs;
        for (int m = 0; m < mc; ++m) {
            const auto mi = static_cast<std::size_t>(m);
            if (plan.dropped[mi]) {
                runs.push_back({m, memory ? model.memory_run(m, mode) : model.mask_run(m), true});
            } else {
                runs.push_back({m, ag::gather_rows(model.project_tokens(e[mi], m, mode), plan.sampled[mi]), false});
            }
        }
        const FusedSequence fused = model.multimodal_encode(runs, mode);

        std::vector<Tensor> d(static_cast<std::size_t>(mc));
        for (int m : kept) {
            d[static_cast<std::size_t>(m)] = model.decode_modality(m, fused.run(m), plan.sampled[static_cast<std::size_t>(m)], mode);
        }
        std::vector<Tensor> intra_target(static_cast<std::size_t>(mc));
        for (int m : kept) {
            const auto mi = static_cast<std::size_t>(m);
            intra_target[mi] = cfg.intra_target_gradient ? e[mi] : ag::detach(e[mi]);
        }
        intra_terms.push_back(intra_recon_loss(d, intra_target, plan));

        if (!dropped.empty()) {
            std::vector<Tensor> g(static_cast<std::size_t>(mc));
            std::vector<Tensor> target(static_cast<std::size_t>(mc));
            for (int m : dropped) {
                const auto mi = static_cast<std::size_t>(m);
                target[mi] = cfg.restoration_gradient ? e[mi] : ag::detach(e[mi]);
                if (memory) {
                    g[mi] = model.memory_tokens(m);
                } else if (cfg.restoration_gradient) {
                    g[mi] = model.restore_modality(m, fused.run(m), fused.output, mode);
                } else {
                    g[mi] = model.restore_modality(m, ag::detach(fused.run(m)), ag::detach(fused.output), mode);
                }
            }
            missing_terms.push_back(missing_recon_loss(g, target, plan));
        }

        for (int m = 0; m < mc; ++m) {
            em_rows[static_cast<std::size_t>(m)].push_back(model.contrast_modality(m, e[static_cast<std::size_t>(m)], mode));
        }
        om_rows.push_back(model.contrast_fused(fused.output, mode));
    }
    const double inv_b = 1.0 / static_cast<double>(rows.size());
    StepLosses out;
    out.intra = ag::scale(ag::sum_tensors(intra_terms), inv_b);
    out.missing = missing_terms.empty() ? Tensor::scalar(0.0) : ag::scale(ag::sum_tensors(missing_terms), inv_b);
    std::vector<Tensor> em;
    for (const auto& r : em_rows) em.push_back(ag::concat_rows(r));
    out.cross = cross_contra_loss(em, ag::concat_rows(om_rows), cfg.temperature);
    out.total = total_loss({cfg.alpha, cfg.beta, cfg.gamma}, out.intra, out.missing, out.cross);
    return out;
}

void initialize_memory(PhysioME& model, const TokenCache& cache, std::span<const std::size_t> rows) {
    ag::NoGradGuard guard;
    for (int m = 0; m < model.modalities(); ++m) {
        Matrix sum = Matrix::Zero(model.token_count(), model.encoder_dim());
        for (std::size_t r : rows) sum += model.encode_modality(m, cache.tokens[r][static_cast<std::size_t>(m)]).value();
        model.set_memory_tokens(m, sum / static_cast<double>(rows.size()));
    }
}

PhysioMETrainer::PhysioMETrainer(PhysioME& model, const TokenCache& cache)
    : model_(model),
      cache_(cache),
      optimizer_(model.trainable_parameters(), model.config().optimizer),
      order_rng_(model.config().seed * 6364136223846793005ull + 1442695040888963407ull),
      dropout_rng_(model.config().seed ^ 0xd1b54a32d192ed03ull) {
    for (std::size_t r = 0; r < cache.size(); ++r) {
        if (cache.complete(r)) rows_.push_back(r);
    }
    if (rows_.size() < 2) throw std::invalid_argument("PhysioME training needs at least two complete rows");
    if (model.config().training_strategy == RestorationStrategy::kMemoryToken) initialize_memory(model, cache, rows_);
    order_ = rows_;
    cursor_ = order_.size();
}

std::vector<std::size_t> PhysioMETrainer::next_batch() {
    const auto batch = std::min<std::size_t>(static_cast<std::size_t>(model_.config().batch_size), rows_.size());
    // A short tail batch would weaken the contrastive term; start a new pass.
    if (cursor_ + batch > order_.size()) {
        std::shuffle(order_.begin(), order_.end(), order_rng_);
        cursor_ = 0;
    }
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch));
    cursor_ += batch;
    return out;
}

StepRecord PhysioMETrainer::step() {
    const auto& cfg = model_.config();
    const auto rows = next_batch();
    const DropSamplePlan plan = plan_for_batch(cfg.seed, batch_counter_, model_.modalities(),
                                               static_cast<std::size_t>(model_.token_count()), cfg.mask_ratio,
                                               cfg.drop_prob);
    optimizer_.zero_grad();
    const nn::Mode mode{true, &dropout_rng_};
    const StepLosses l = physiome_forward(model_, cache_, rows, plan, mode);
    StepRecord rec{batch_counter_, l.intra.item(), l.missing.item(), l.cross.item(), l.total.item()};
    if (!std::isfinite(rec.total)) {
        std::ostringstream os;
        os << "non-finite PhysioME loss at step " << batch_counter_ << " (intra=" << rec.intra
           << " missing=" << rec.missing << " cross=" << rec.cross << ")";
        throw NumericError(os.str());
    }
    l.total.backward();
    optimizer_.step();
    ++batch_counter_;
    return rec;
}

TrainEpoch PhysioMETrainer::run_epoch(int epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto batch = std::min<std::size_t>(static_cast<std::size_t>(model_.config().batch_size), rows_.size());
    const std::size_t steps = std::max<std::size_t>(1, rows_.size() / batch);
    TrainEpoch rec;
    rec.epoch = epoch;
    for (std::size_t s = 0; s < steps; ++s) {
        const StepRecord r = step();
        rec.intra += r.intra;
        rec.missing += r.missing;
        rec.cross += r.cross;
        rec.total += r.total;
    }
    const double inv = 1.0 / static_cast<double>(steps);
    rec.intra *= inv;
    rec.missing *= inv;
    rec.cross *= inv;
    rec.total *= inv;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

std::vector<TrainEpoch> PhysioMETrainer::train(const std::function<void(const TrainEpoch&)>& on_epoch) {
    std::vector<TrainEpoch> history;
    for (int epoch = 1; epoch <= model_.config().epochs; ++epoch) {
        history.push_back(run_epoch(epoch));
        if (on_epoch) on_epoch(history.back());
    }
    return history;
}

}  // namespace physiome
