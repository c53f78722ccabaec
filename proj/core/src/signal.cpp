#include "physiome/signal.hpp"

#include "physiome/error.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

namespace physiome {

namespace {

std::size_t exact_samples(double seconds, double rate, const char* what) {
    const double n = seconds * rate;
    const double rounded = std::round(n);
    if (std::abs(n - rounded) > 1e-9 * std::max(1.0, std::abs(n)) || rounded < 1.0) {
        throw ConfigError(std::string(what) + " of " + std::to_string(seconds) + " s is not a whole number of samples at " +
                          std::to_string(rate) + " Hz");
    }
    return static_cast<std::size_t>(rounded);
}

}  // namespace

void SignalWindow::validate(int modalities) const {
    if (samples.empty()) throw std::invalid_argument("signal window has no samples");
    if (!(sample_rate_hz > 0.0)) throw std::invalid_argument("sample rate must be positive");
    if (modality_id < 0 || modality_id >= modalities) throw std::invalid_argument("modality id out of range");
    for (float s : samples) {
        if (!std::isfinite(s)) throw std::invalid_argument("signal window contains a non-finite sample");
    }
}

void FrameSpec::validate() const {
    if (!(overlap_step_sec > 0.0) || !(frame_size_sec >= overlap_step_sec)) {
        throw ConfigError("frame spec requires frame_size_sec >= overlap_step_sec > 0");
    }
}

std::pair<std::size_t, std::size_t> FrameSpec::in_samples(double sample_rate_hz) const {
    validate();
    return {exact_samples(frame_size_sec, sample_rate_hz, "frame size"),
            exact_samples(overlap_step_sec, sample_rate_hz, "overlap step")};
}

std::size_t FrameSpec::frame_count(std::size_t length, double sample_rate_hz) const {
    const auto [frame, step] = in_samples(sample_rate_hz);
    if (frame > length) throw std::invalid_argument("window shorter than frame");
    return (length - frame) / step + 1;
}

ag::Matrix segment_frames(const SignalWindow& window, const FrameSpec& spec) {
    const auto [frame, step] = spec.in_samples(window.sample_rate_hz);
    const std::size_t length = window.samples.size();
    if (frame > length) throw std::invalid_argument("window shorter than frame");
    const std::size_t n = (length - frame) / step + 1;
    ag::Matrix out(static_cast<ag::Index>(n), static_cast<ag::Index>(frame));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < frame; ++j) {
            out(static_cast<ag::Index>(i), static_cast<ag::Index>(j)) = window.samples[i * step + j];
        }
    }
    return out;
}

void ModalityBatch::push_back(std::vector<SignalWindow> row, std::vector<std::uint8_t> row_availability) {
    if (static_cast<int>(row.size()) != modalities || static_cast<int>(row_availability.size()) != modalities) {
        throw std::invalid_argument("row does not match the modality count");
    }
    subject_ids.push_back(row.front().subject_id);
    labels.push_back(row.front().label);
    windows.push_back(std::move(row));
    availability.insert(availability.end(), row_availability.begin(), row_availability.end());
}

ModalityBatch ModalityBatch::select(std::span<const std::size_t> rows) const {
    ModalityBatch out;
    out.modalities = modalities;
    for (std::size_t r : rows) {
        if (r >= size()) throw std::out_of_range("batch row out of range");
        out.windows.push_back(windows[r]);
        out.subject_ids.push_back(subject_ids[r]);
        out.labels.push_back(labels[r]);
        const auto first = availability.begin() + static_cast<std::ptrdiff_t>(r * static_cast<std::size_t>(modalities));
        out.availability.insert(out.availability.end(), first, first + modalities);
    }
    return out;
}

std::vector<std::string> ModalityBatch::unique_subjects() const {
    std::set<std::string> s(subject_ids.begin(), subject_ids.end());
    return {s.begin(), s.end()};
}

std::vector<std::size_t> ModalityBatch::rows_for_subjects(std::span<const std::string> subjects) const {
    std::set<std::string> wanted(subjects.begin(), subjects.end());
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < size(); ++i) {
        if (wanted.contains(subject_ids[i])) rows.push_back(i);
    }
    return rows;
}

double ModalityBatch::column_sample_rate(int m) const {
    for (const auto& row : windows) {
        if (row[static_cast<std::size_t>(m)].sample_rate_hz > 0.0) return row[static_cast<std::size_t>(m)].sample_rate_hz;
    }
    return 0.0;
}

std::size_t ModalityBatch::column_length(int m) const {
    for (std::size_t b = 0; b < size(); ++b) {
        if (available(b, m)) return windows[b][static_cast<std::size_t>(m)].samples.size();
    }
    return 0;
}

void ModalityBatch::validate() const {
    if (modalities <= 0) throw std::invalid_argument("batch needs at least one modality");
    if (availability.size() != size() * static_cast<std::size_t>(modalities) || subject_ids.size() != size() ||
        labels.size() != size()) {
        throw std::invalid_argument("batch metadata size mismatch");
    }
    for (int m = 0; m < modalities; ++m) {
        const std::size_t length = column_length(m);
        const double rate = column_sample_rate(m);
        for (std::size_t b = 0; b < size(); ++b) {
            const auto& w = windows[b][static_cast<std::size_t>(m)];
            if (w.modality_id != m) throw std::invalid_argument("window modality id does not match its column");
            if (!available(b, m)) continue;
            w.validate(modalities);
            if (w.samples.size() != length || w.sample_rate_hz != rate) {
                throw std::invalid_argument("windows in a column must share length and sample rate");
            }
        }
    }
    for (std::size_t b = 0; b < size(); ++b) {
        bool any = false;
        for (int m = 0; m < modalities; ++m) any = any || available(b, m);
        if (!any) throw std::invalid_argument("every sample needs at least one available modality");
    }
}

void SyntheticConfig::validate() const {
    if (n_subjects < 1 || n_classes < 1 || modalities < 1 || latent_dim < 1 || n_samples < 0) {
        throw ConfigError("synthetic config counts must be >= 1");
    }
    if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
    if (!(sample_rate_hz > 0.0) || !(window_sec > 0.0)) throw ConfigError("window and sample rate must be positive");
    if (!(frequency_jitter >= 0.0 && frequency_jitter < 0.5)) throw ConfigError("frequency_jitter must be in [0, 0.5)");
    exact_samples(window_sec, sample_rate_hz, "window");
}

Dataset generate_synthetic_dataset(const SyntheticConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const auto length = exact_samples(cfg.window_sec, cfg.sample_rate_hz, "window");
    const auto classes = static_cast<std::size_t>(cfg.n_classes);
    const auto latent = static_cast<std::size_t>(cfg.latent_dim);
    const auto mods = static_cast<std::size_t>(cfg.modalities);

    // Class signatures: frequency and amplitude of each latent component.
    const double f_lo = 0.5;
    const double f_hi = 0.35 * cfg.sample_rate_hz;
    std::vector<std::vector<double>> freq(classes, std::vector<double>(latent));
    std::vector<std::vector<double>> amp(classes, std::vector<double>(latent));
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t k = 0; k < latent; ++k) {
            freq[c][k] = f_lo + (f_hi - f_lo) * unit(rng);
            amp[c][k] = 0.5 + unit(rng);
        }
    }

    std::vector<std::vector<double>> mixing(mods, std::vector<double>(latent));
    const double mix_scale = 1.0 / std::sqrt(static_cast<double>(latent));
    for (std::size_t m = 0; m < mods; ++m) {
        for (std::size_t k = 0; k < latent; ++k) {
            mixing[m][k] = (cfg.mixing == MixingMode::kShared && m > 0) ? mixing[0][k] : gauss(rng) * mix_scale;
        }
    }

    std::vector<int> labels(static_cast<std::size_t>(cfg.n_samples));
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % classes);
    std::shuffle(labels.begin(), labels.end(), rng);

    Dataset ds;
    ds.modalities = cfg.modalities;
    std::vector<double> trajectory(latent * length);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto c = static_cast<std::size_t>(labels[i]);
        for (std::size_t k = 0; k < latent; ++k) {
            const double phase = 2.0 * std::numbers::pi * unit(rng);
            const double f = freq[c][k] * (1.0 + cfg.frequency_jitter * (2.0 * unit(rng) - 1.0));
            const double a = amp[c][k] * (0.8 + 0.4 * unit(rng));
            for (std::size_t t = 0; t < length; ++t) {
                const double time = static_cast<double>(t) / cfg.sample_rate_hz;
                trajectory[k * length + t] = a * std::sin(2.0 * std::numbers::pi * f * time + phase);
            }
        }
        const std::string subject = "S" + std::to_string(i % static_cast<std::size_t>(cfg.n_subjects));
        std::vector<SignalWindow> row(mods);
        for (std::size_t m = 0; m < mods; ++m) {
            auto& w = row[m];
            w.sample_rate_hz = cfg.sample_rate_hz;
            w.modality_id = static_cast<int>(m);
            w.subject_id = subject;
            w.label = labels[i];
            w.samples.resize(length);
            for (std::size_t t = 0; t < length; ++t) {
                double v = 0.0;
                for (std::size_t k = 0; k < latent; ++k) v += mixing[m][k] * trajectory[k * length + t];
                if (cfg.noise_std > 0.0) v += cfg.noise_std * gauss(rng);
                w.samples[t] = static_cast<float>(v);
            }
        }
        ds.push_back(std::move(row), std::vector<std::uint8_t>(mods, 1));
    }
    return ds;
}

namespace {

struct Biquad {
    double b0, b1, b2, a1, a2;
};

// Butterworth sections via the bilinear transform with frequency prewarping.
std::vector<Biquad> butterworth_sections(int order, double cutoff_hz, double rate, bool highpass) {
    const double k = 2.0 * rate;
    const double wc = k * std::tan(std::numbers::pi * cutoff_hz / rate);
    std::vector<Biquad> sections;
    for (int i = 0; i < order / 2; ++i) {
        const std::complex<double> pole =
            wc * std::exp(std::complex<double>(0.0, std::numbers::pi * (2.0 * i + order + 1.0) / (2.0 * order)));
        const double re = pole.real();
        const double mag2 = std::norm(pole);
        const double a0 = k * k - 2.0 * re * k + mag2;
        Biquad s{};
        s.a1 = (-2.0 * k * k + 2.0 * mag2) / a0;
        s.a2 = (k * k + 2.0 * re * k + mag2) / a0;
        if (highpass) {
            s.b0 = k * k / a0;
            s.b1 = -2.0 * k * k / a0;
            s.b2 = k * k / a0;
        } else {
            s.b0 = wc * wc / a0;
            s.b1 = 2.0 * wc * wc / a0;
            s.b2 = wc * wc / a0;
        }
        sections.push_back(s);
    }
    return sections;
}

// Transposed direct form II with steady-state initial conditions scaled to
// the first input sample.
void filter_forward(const std::vector<Biquad>& sections, std::vector<double>& x) {
    if (x.empty()) return;
    double level = x.front();
    for (const auto& s : sections) {
        const double gain = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
        const double y0 = gain * level;
        double z2 = (s.b2 - s.a2 * gain) * level;
        double z1 = (s.b1 - s.a1 * gain) * level + z2;
        for (double& v : x) {
            const double in = v;
            const double out = s.b0 * in + z1;
            z1 = s.b1 * in - s.a1 * out + z2;
            z2 = s.b2 * in - s.a2 * out;
            v = out;
        }
        level = y0;
    }
}

}  // namespace

std::vector<double> bandpass(std::span<const double> x, double sample_rate_hz, double low_hz, double high_hz, int order) {
    const double nyquist = sample_rate_hz / 2.0;
    if (!(low_hz >= 0.0 && low_hz < high_hz && high_hz <= nyquist)) {
        throw std::invalid_argument("invalid band: need 0 <= low < high <= sample_rate/2");
    }
    if (order < 2 || order % 2 != 0) throw std::invalid_argument("filter order must be a positive even number");
    std::vector<Biquad> sections;
    if (high_hz < nyquist) {
        auto lp = butterworth_sections(order, high_hz, sample_rate_hz, false);
        sections.insert(sections.end(), lp.begin(), lp.end());
    }
    if (low_hz > 0.0) {
        auto hp = butterworth_sections(order, low_hz, sample_rate_hz, true);
        sections.insert(sections.end(), hp.begin(), hp.end());
    }
    std::vector<double> out(x.begin(), x.end());
    if (sections.empty() || out.size() < 2) return out;

    // Odd reflection padding at both ends.
    const std::size_t n = out.size();
    const std::size_t pad = std::min<std::size_t>(3 * (2 * sections.size() + 1), n - 1);
    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * out.front() - out[i]);
    ext.insert(ext.end(), out.begin(), out.end());
    for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * out.back() - out[n - 1 - i]);

    filter_forward(sections, ext);
    std::reverse(ext.begin(), ext.end());
    filter_forward(sections, ext);
    std::reverse(ext.begin(), ext.end());
    std::copy(ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n),
              out.begin());
    return out;
}

SignalWindow bandpass_filter(const SignalWindow& window, double low_hz, double high_hz, int order) {
    std::vector<double> x(window.samples.begin(), window.samples.end());
    const auto y = bandpass(x, window.sample_rate_hz, low_hz, high_hz, order);
    SignalWindow out = window;
    for (std::size_t i = 0; i < y.size(); ++i) out.samples[i] = static_cast<float>(y[i]);
    return out;
}

}  // namespace physiome
