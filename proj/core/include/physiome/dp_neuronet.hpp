#pragma once

#include "physiome/neuronet.hpp"
#include "physiome/optim.hpp"
#include "physiome/signal.hpp"

#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace physiome {

enum class AugmentKind { kAmplitudeScale, kGaussianJitter, kTimeMask, kTimeShift };

struct Augmentation {
    AugmentKind kind = AugmentKind::kAmplitudeScale;
    // amplitude_scale: [low, high]; gaussian_jitter: std in `low`;
    // time_mask / time_shift: max fraction of the window in `low`.
    double low = 1.0;
    double high = 1.0;
};

std::string to_string(AugmentKind kind);
AugmentKind parse_augment_kind(const std::string& name);

// Ordered transforms, each parameterized per call from the caller's rng.
class AugmentationPipeline {
public:
    AugmentationPipeline() = default;
    explicit AugmentationPipeline(std::vector<Augmentation> steps) : steps_(std::move(steps)) {}

    // amplitude_scale(0.8-1.2) + gaussian_jitter(0.01)
    static AugmentationPipeline default_first_path();
    // time_shift(<=10%) + time_mask(<=15%)
    static AugmentationPipeline default_second_path();

    std::vector<double> apply(std::span<const double> x, std::mt19937_64& rng) const;
    const std::vector<Augmentation>& steps() const { return steps_; }
    bool empty() const { return steps_.empty(); }

private:
    std::vector<Augmentation> steps_;
};

struct DPNeuroNetConfig {
    NeuroNetConfig net;
    AugmentationPipeline first_path = AugmentationPipeline::default_first_path();
    AugmentationPipeline second_path = AugmentationPipeline::default_second_path();
    // Keep NeuroNet's own two-view contrastive term next to the cross-path one.
    bool internal_contrastive = true;
    double dual_path_weight = 1.0;
    int epochs = 50;
    int batch_size = 128;
    optim::AdamWConfig optimizer{1e-5, 0.9, 0.999, 1e-8, 0.01};
    std::uint64_t seed = 1;
};

struct DualPathOutput {
    ag::Tensor z1;      // B x D_proj
    ag::Tensor z2;      // B x D_proj
    ag::Tensor recon1;  // path-1 masked prediction loss (mean of two masks)
    ag::Tensor recon2;
    ag::Tensor internal1;  // path-1 NeuroNet two-view NT-Xent
    ag::Tensor internal2;
};

struct DualPathRngs {
    std::mt19937_64 first_augment;
    std::mt19937_64 second_augment;
    std::mt19937_64 first_mask;
    std::mt19937_64 second_mask;

    explicit DualPathRngs(std::uint64_t seed);
};

// Both paths run through the same NeuroNet instance; z_k is the projected
// mean of the full-sequence encoder output (class token excluded).
DualPathOutput dp_forward(const NeuroNet& net, const DPNeuroNetConfig& cfg, std::span<const SignalWindow> windows,
                          DualPathRngs& rngs);

// (1/2B) sum_b [l(z1_b, z2_b) + l(z2_b, z1_b)].
ag::Tensor dp_nt_xent(const ag::Tensor& z1, const ag::Tensor& z2, double temperature);

struct DualPathLosses {
    ag::Tensor recon1;
    ag::Tensor recon2;
    ag::Tensor internal;  // mean of the per-path NeuroNet contrastive terms
    ag::Tensor ntxent;    // cross-path term
    ag::Tensor total;
};

DualPathLosses dp_losses(const DualPathOutput& out, const DPNeuroNetConfig& cfg);

struct PretrainEpoch {
    int epoch = 0;
    double recon1 = 0.0;
    double recon2 = 0.0;
    double ntxent = 0.0;
    double total = 0.0;
};

using PretrainCallback = std::function<void(const PretrainEpoch&)>;

// Trains one NeuroNet on the available windows of modality column `modality`.
// Throws NumericError naming the batch index when the loss is not finite.
NeuroNet pretrain_dp_neuronet(const Dataset& data, int modality, const DPNeuroNetConfig& cfg,
                              std::vector<PretrainEpoch>* history = nullptr, const PretrainCallback& on_epoch = {});

std::vector<double> to_double(std::span<const float> samples);

}  // namespace physiome
