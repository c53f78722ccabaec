#include "physiome/dp_neuronet.hpp"

#include "physiome/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace physiome {

using ag::Matrix;
using ag::Tensor;

std::string to_string(AugmentKind kind) {
    switch (kind) {
        case AugmentKind::kAmplitudeScale: return "amplitude_scale";
        case AugmentKind::kGaussianJitter: return "gaussian_jitter";
        case AugmentKind::kTimeMask: return "time_mask";
        case AugmentKind::kTimeShift: return "time_shift";
    }
    return "unknown";
}

AugmentKind parse_augment_kind(const std::string& name) {
    if (name == "amplitude_scale") return AugmentKind::kAmplitudeScale;
    if (name == "gaussian_jitter") return AugmentKind::kGaussianJitter;
    if (name == "time_mask") return AugmentKind::kTimeMask;
    if (name == "time_shift") return AugmentKind::kTimeShift;
    throw ConfigError("unknown augmentation '" + name + "'");
}

AugmentationPipeline AugmentationPipeline::default_first_path() {
    return AugmentationPipeline({{AugmentKind::kAmplitudeScale, 0.8, 1.2}, {AugmentKind::kGaussianJitter, 0.01, 0.0}});
}

AugmentationPipeline AugmentationPipeline::default_second_path() {
    return AugmentationPipeline({{AugmentKind::kTimeShift, 0.10, 0.0}, {AugmentKind::kTimeMask, 0.15, 0.0}});
}

std::vector<double> AugmentationPipeline::apply(std::span<const double> x, std::mt19937_64& rng) const {
    std::vector<double> y(x.begin(), x.end());
    const std::size_t n = y.size();
    for (const auto& step : steps_) {
        switch (step.kind) {
            case AugmentKind::kAmplitudeScale: {
                std::uniform_real_distribution<double> d(step.low, step.high);
                const double s = d(rng);
                for (double& v : y) v *= s;
                break;
            }
            case AugmentKind::kGaussianJitter: {
                std::normal_distribution<double> d(0.0, step.low);
                for (double& v : y) v += d(rng);
                break;
            }
            case AugmentKind::kTimeMask: {
                const auto max_len = static_cast<std::size_t>(std::floor(step.low * static_cast<double>(n)));
                std::uniform_int_distribution<std::size_t> len_d(0, max_len);
                const std::size_t len = len_d(rng);
                std::uniform_int_distribution<std::size_t> start_d(0, n - len);
                const std::size_t start = start_d(rng);
                std::fill(y.begin() + static_cast<std::ptrdiff_t>(start),
                          y.begin() + static_cast<std::ptrdiff_t>(start + len), 0.0);
                break;
            }
            case AugmentKind::kTimeShift: {
                const auto max_shift = static_cast<long long>(std::floor(step.low * static_cast<double>(n)));
                std::uniform_int_distribution<long long> d(-max_shift, max_shift);
                const long long shift = d(rng);
                const auto k = static_cast<std::size_t>(((shift % static_cast<long long>(n)) + static_cast<long long>(n)) %
                                                        static_cast<long long>(n));
                std::rotate(y.begin(), y.begin() + static_cast<std::ptrdiff_t>((n - k) % n), y.end());
                break;
            }
        }
    }
    return y;
}

std::vector<double> to_double(std::span<const float> samples) { return {samples.begin(), samples.end()}; }

DualPathRngs::DualPathRngs(std::uint64_t seed)
    : first_augment(seed * 4 + 1), second_augment(seed * 4 + 2), first_mask(seed * 4 + 3), second_mask(seed * 4 + 4) {}

namespace {

Matrix frames_for(std::span<const double> x, const SignalWindow& like, const FrameSpec& spec) {
    SignalWindow w;
    w.sample_rate_hz = like.sample_rate_hz;
    w.samples.assign(x.begin(), x.end());
    return segment_frames(w, spec);
}

}  // namespace

DualPathOutput dp_forward(const NeuroNet& net, const DPNeuroNetConfig& cfg, std::span<const SignalWindow> windows,
                          DualPathRngs& rngs) {
    if (windows.empty()) throw std::invalid_argument("dp_forward on an empty batch");
    const double ratio = net.config().mask_ratio;
    const double inv_b = 1.0 / static_cast<double>(windows.size());
    struct PathState {
        std::vector<Tensor> z, recon, za, zb;
    } paths[2];
    for (const auto& w : windows) {
        const auto raw = to_double(w.samples);
        for (int k = 0; k < 2; ++k) {
            const auto& pipe = k == 0 ? cfg.first_path : cfg.second_path;
            auto& aug_rng = k == 0 ? rngs.first_augment : rngs.second_augment;
            auto& mask_rng = k == 0 ? rngs.first_mask : rngs.second_mask;
            const auto x = pipe.apply(raw, aug_rng);
            const Tensor tokens = net.frame_encode(frames_for(x, w, net.config().frames));
            const MaskedPrediction a = net.masked_predict(tokens, ratio, mask_rng);
            const MaskedPrediction b = net.masked_predict(tokens, ratio, mask_rng);
            auto& p = paths[k];
            p.recon.push_back(ag::scale(ag::add(inter_recon_loss(a.reconstruction, tokens, a.masked),
                                                inter_recon_loss(b.reconstruction, tokens, b.masked)),
                                        0.5));
            p.za.push_back(net.project(NeuroNet::pool(a.latent)));
            p.zb.push_back(net.project(NeuroNet::pool(b.latent)));
            p.z.push_back(net.project(NeuroNet::pool(net.encode_all(tokens))));
        }
    }
    const double tau = net.config().temperature;
    DualPathOutput out;
    out.z1 = ag::concat_rows(paths[0].z);
    out.z2 = ag::concat_rows(paths[1].z);
    out.recon1 = ag::scale(ag::sum_tensors(paths[0].recon), inv_b);
    out.recon2 = ag::scale(ag::sum_tensors(paths[1].recon), inv_b);
    out.internal1 = nt_xent(ag::concat_rows(paths[0].za), ag::concat_rows(paths[0].zb), tau);
    out.internal2 = nt_xent(ag::concat_rows(paths[1].za), ag::concat_rows(paths[1].zb), tau);
    return out;
}

Tensor dp_nt_xent(const Tensor& z1, const Tensor& z2, double temperature) { return nt_xent(z1, z2, temperature); }

DualPathLosses dp_losses(const DualPathOutput& out, const DPNeuroNetConfig& cfg) {
    DualPathLosses l;
    l.recon1 = out.recon1;
    l.recon2 = out.recon2;
    l.internal = ag::scale(ag::add(out.internal1, out.internal2), 0.5);
    l.ntxent = dp_nt_xent(out.z1, out.z2, cfg.net.temperature);
    Tensor total = ag::scale(ag::add(l.recon1, l.recon2), 0.5);
    if (cfg.internal_contrastive) total = ag::add(total, ag::scale(l.internal, cfg.net.balance));
    l.total = ag::add(total, ag::scale(l.ntxent, cfg.dual_path_weight));
    return l;
}

NeuroNet pretrain_dp_neuronet(const Dataset& data, int modality, const DPNeuroNetConfig& cfg,
                              std::vector<PretrainEpoch>* history, const PretrainCallback& on_epoch) {
    if (modality < 0 || modality >= data.modalities) throw std::invalid_argument("modality column out of range");
    if (cfg.batch_size < 1 || cfg.epochs < 0) throw ConfigError("batch size must be >= 1 and epochs >= 0");
    std::vector<SignalWindow> column;
    for (std::size_t b = 0; b < data.size(); ++b) {
        if (data.available(b, modality)) column.push_back(data.windows[b][static_cast<std::size_t>(modality)]);
    }
    if (column.empty()) throw std::invalid_argument("no available windows for modality " + std::to_string(modality));

    const std::uint64_t seed = cfg.seed * 1000003ull + static_cast<std::uint64_t>(modality);
    NeuroNet net(cfg.net, seed);
    optim::AdamW opt(nn::named_parameters(net, "neuronet"), cfg.optimizer);
    DualPathRngs rngs(seed);
    std::mt19937_64 order_rng(seed ^ 0x9e3779b97f4a7c15ull);

    std::vector<std::size_t> order(column.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        PretrainEpoch rec;
        rec.epoch = epoch;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            // NT-Xent needs at least two samples to have negatives.
            if (end - start < 2 && batches > 0) break;
            std::vector<SignalWindow> windows;
            for (std::size_t i = start; i < end; ++i) windows.push_back(column[order[i]]);
            opt.zero_grad();
            const DualPathLosses l = dp_losses(dp_forward(net, cfg, windows, rngs), cfg);
            const double total = l.total.item();
            if (!std::isfinite(total)) {
                std::ostringstream os;
                os << "non-finite DP-NeuroNet loss at epoch " << epoch << " batch " << batches << " (recon1="
                   << l.recon1.item() << " recon2=" << l.recon2.item() << " ntxent=" << l.ntxent.item() << ")";
                throw NumericError(os.str());
            }
            l.total.backward();
            opt.step();
            rec.recon1 += l.recon1.item();
            rec.recon2 += l.recon2.item();
            rec.ntxent += l.ntxent.item();
            rec.total += total;
            ++batches;
        }
        const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(batches, 1));
        rec.recon1 *= inv;
        rec.recon2 *= inv;
        rec.ntxent *= inv;
        rec.total *= inv;
        if (history) history->push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return net;
}

}  // namespace physiome
