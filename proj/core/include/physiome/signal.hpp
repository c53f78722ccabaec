#pragma once

#include "physiome/autograd.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace physiome {

// One fixed-length single-modality epoch. Samples are stored as float so the
// on-disk container round-trips bit-exactly.
struct SignalWindow {
    std::vector<float> samples;
    double sample_rate_hz = 0.0;
    int modality_id = 0;
    std::string subject_id;
    std::optional<int> label;

    double duration_sec() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
    void validate(int modalities) const;
    bool operator==(const SignalWindow&) const = default;
};

struct FrameSpec {
    double frame_size_sec = 4.0;
    double overlap_step_sec = 1.0;

    void validate() const;
    // Frame length and hop in samples; throws when either is not an integer.
    std::pair<std::size_t, std::size_t> in_samples(double sample_rate_hz) const;
    // Number of frames produced for a window of `length` samples.
    std::size_t frame_count(std::size_t length, double sample_rate_hz) const;
};

// B x M grid of windows. Unavailable cells keep their metadata but hold no
// samples.
struct ModalityBatch {
    int modalities = 0;
    std::vector<std::vector<SignalWindow>> windows;  // [sample][modality]
    std::vector<std::uint8_t> availability;           // row-major B x M
    std::vector<std::string> subject_ids;             // per sample
    std::vector<std::optional<int>> labels;           // per sample

    std::size_t size() const { return windows.size(); }
    bool available(std::size_t b, int m) const { return availability[b * static_cast<std::size_t>(modalities) + m] != 0; }

    void push_back(std::vector<SignalWindow> row, std::vector<std::uint8_t> row_availability);
    ModalityBatch select(std::span<const std::size_t> rows) const;
    std::vector<std::string> unique_subjects() const;
    std::vector<std::size_t> rows_for_subjects(std::span<const std::string> subjects) const;
    // Sample rate and window length of column m, taken from the first
    // available window.
    double column_sample_rate(int m) const;
    std::size_t column_length(int m) const;

    void validate() const;
    bool operator==(const ModalityBatch&) const = default;
};

using Dataset = ModalityBatch;

// Splits a window into overlapping frames; row i covers samples
// [i*step, i*step + frame). Trailing samples past the last full frame are
// dropped.
ag::Matrix segment_frames(const SignalWindow& window, const FrameSpec& spec);

enum class MixingMode { kIndependent, kShared };

struct SyntheticConfig {
    int n_subjects = 20;
    int n_classes = 4;
    int modalities = 3;
    int latent_dim = 4;
    int n_samples = 2000;
    double noise_std = 0.5;
    double window_sec = 6.0;
    double sample_rate_hz = 20.0;
    // Relative per-sample frequency perturbation of every latent component.
    double frequency_jitter = 0.03;
    MixingMode mixing = MixingMode::kIndependent;
    std::uint64_t seed = 7;

    void validate() const;
};

// Class-conditioned sinusoid mixtures: a shared latent trajectory of
// latent_dim sinusoids (class-specific frequencies and amplitudes, random
// per-sample phases) is projected into each modality through a fixed linear
// map and corrupted with Gaussian noise. Labels are balanced and shuffled;
// subjects are assigned round-robin.
Dataset generate_synthetic_dataset(const SyntheticConfig& cfg);

// Zero-phase Butterworth band-pass (forward-backward cascaded biquads).
// low_hz == 0 skips the high-pass stage; high_hz == Nyquist skips the low-pass.
SignalWindow bandpass_filter(const SignalWindow& window, double low_hz, double high_hz, int order = 6);
std::vector<double> bandpass(std::span<const double> x, double sample_rate_hz, double low_hz, double high_hz,
                             int order = 6);

}  // namespace physiome
