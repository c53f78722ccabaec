#include "physiome/container.hpp"
#include "physiome/error.hpp"
#include "physiome/signal.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

using namespace physiome;
namespace fs = std::filesystem;

namespace {

SignalWindow make_window(std::size_t length, double fs, int modality = 0) {
    SignalWindow w;
    w.samples.resize(length);
    for (std::size_t i = 0; i < length; ++i) w.samples[i] = static_cast<float>(i);
    w.sample_rate_hz = fs;
    w.modality_id = modality;
    w.subject_id = "s0";
    return w;
}

fs::path temp_file(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "physiome_tests";
    fs::create_directories(dir);
    return dir / name;
}

// Power of the DFT bins inside [lo, hi] Hz, via a direct O(n^2) transform.
double band_power(const std::vector<double>& x, double fs, double lo, double hi) {
    const std::size_t n = x.size();
    double total = 0;
    for (std::size_t k = 0; k <= n / 2; ++k) {
        const double f = fs * static_cast<double>(k) / static_cast<double>(n);
        if (f < lo || f > hi) continue;
        std::complex<double> acc = 0;
        for (std::size_t t = 0; t < n; ++t) {
            acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(n));
        }
        total += std::norm(acc) * ((k == 0 || 2 * k == n) ? 1.0 : 2.0);
    }
    return total / static_cast<double>(n * n);
}

double rms(const std::vector<double>& x) {
    double s = 0;
    for (double v : x) s += v * v;
    return std::sqrt(s / static_cast<double>(x.size()));
}

std::vector<double> sine(double freq, double fs, std::size_t n) {
    std::vector<double> x(n);
    for (std::size_t t = 0; t < n; ++t) x[t] = std::sin(2 * std::numbers::pi * freq * static_cast<double>(t) / fs);
    return x;
}

}  // namespace

TEST(SegmentFrames, SleepWindowGives27Frames) {
    const auto frames = segment_frames(make_window(3000, 100.0), FrameSpec{4.0, 1.0});
    EXPECT_EQ(frames.rows(), 27);
    EXPECT_EQ(frames.cols(), 400);
}

TEST(SegmentFrames, WindowEqualToFrameIsOneFrame) {
    const auto w = make_window(300, 100.0);
    const auto frames = segment_frames(w, FrameSpec{3.0, 1.0});
    ASSERT_EQ(frames.rows(), 1);
    for (int i = 0; i < 300; ++i) EXPECT_EQ(frames(0, i), w.samples[static_cast<std::size_t>(i)]);
}

TEST(SegmentFrames, TrailingSamplesAreDropped) {
    const auto frames = segment_frames(make_window(1000, 100.0), FrameSpec{3.0, 3.0});
    ASSERT_EQ(frames.rows(), 3);
    EXPECT_EQ(frames(2, 299), 899.0);
}

TEST(SegmentFrames, CountMatchesBruteForceEnumeration) {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> len(1, 200);
    for (int trial = 0; trial < 300; ++trial) {
        const int f = len(rng);
        const int s = std::uniform_int_distribution<int>(1, f)(rng);
        const int l = std::uniform_int_distribution<int>(f, f + 300)(rng);
        std::size_t starts = 0;
        for (int start = 0; start + f <= l; start += s) ++starts;
        const FrameSpec spec{static_cast<double>(f), static_cast<double>(s)};
        EXPECT_EQ(spec.frame_count(static_cast<std::size_t>(l), 1.0), starts) << l << " " << f << " " << s;
        const auto frames = segment_frames(make_window(static_cast<std::size_t>(l), 1.0), spec);
        ASSERT_EQ(static_cast<std::size_t>(frames.rows()), starts);
        const auto last = static_cast<Eigen::Index>(starts - 1);
        EXPECT_EQ(frames(last, 0), static_cast<double>(last * s));
    }
}

TEST(SegmentFrames, ShortWindowRaises) {
    EXPECT_THROW(segment_frames(make_window(100, 100.0), FrameSpec{4.0, 1.0}), std::invalid_argument);
}

TEST(Synthetic, SharedMixingWithoutNoiseGivesEqualModalities) {
    SyntheticConfig c;
    c.modalities = 2;
    c.noise_std = 0.0;
    c.n_samples = 20;
    c.mixing = MixingMode::kShared;
    const Dataset ds = generate_synthetic_dataset(c);
    for (std::size_t b = 0; b < ds.size(); ++b) EXPECT_EQ(ds.windows[b][0].samples, ds.windows[b][1].samples);
}

TEST(Synthetic, SameSeedIsBitIdentical) {
    SyntheticConfig c;
    c.n_samples = 50;
    const Dataset a = generate_synthetic_dataset(c);
    const Dataset b = generate_synthetic_dataset(c);
    EXPECT_EQ(a, b);
    const auto ea = container::encode_dataset(a);
    const auto eb = container::encode_dataset(b);
    EXPECT_EQ(ea, eb);
}

TEST(Synthetic, ClassesAreBalancedAndSubjectsRoundRobin) {
    const Dataset ds = generate_synthetic_dataset(SyntheticConfig{});
    ASSERT_EQ(ds.size(), 2000u);
    std::vector<int> hist(4, 0);
    for (const auto& l : ds.labels) ++hist[static_cast<std::size_t>(l.value())];
    EXPECT_EQ(hist, (std::vector<int>{500, 500, 500, 500}));
    EXPECT_EQ(ds.unique_subjects().size(), 20u);
    EXPECT_EQ(ds.windows[0][0].samples.size(), 120u);
}

TEST(Bandpass, RejectsOutOfBandAndKeepsInBand) {
    // 60 Hz at 100 Hz sampling aliases onto the 40 Hz band edge, so the
    // attenuation checks run at 200 Hz.
    const double fs = 200.0;
    const std::size_t n = 800;
    for (double f : {55.0, 60.0, 80.0}) {
        const auto x = sine(f, fs, n);
        const auto y = bandpass(x, fs, 0.0, 40.0);
        EXPECT_LT(rms(y), 0.1 * rms(x)) << f;
        EXPECT_LT(band_power(y, fs, f - 1, f + 1), 0.01 * band_power(x, fs, f - 1, f + 1)) << f;
    }
    for (double f : {5.0, 10.0, 25.0}) {
        const auto x = sine(f, fs, n);
        const auto y = bandpass(x, fs, 0.0, 40.0);
        EXPECT_NEAR(rms(y) / rms(x), 1.0, 0.05) << f;
    }
}

TEST(Bandpass, TenHertzAtHundredHertzSurvives) {
    const auto x = sine(10.0, 100.0, 3000);
    const auto y = bandpass(x, 100.0, 0.0, 40.0);
    EXPECT_NEAR(rms(y) / rms(x), 1.0, 0.05);
}

TEST(Bandpass, ZeroInZeroOutAndLengthPreserved) {
    SignalWindow w = make_window(500, 100.0);
    std::fill(w.samples.begin(), w.samples.end(), 0.0f);
    const SignalWindow y = bandpass_filter(w, 0.5, 40.0);
    EXPECT_EQ(y.samples.size(), w.samples.size());
    for (float v : y.samples) EXPECT_EQ(v, 0.0f);
}

TEST(Bandpass, InvalidBandRaises) {
    std::vector<double> x(100, 1.0);
    EXPECT_THROW(bandpass(x, 100.0, 40.0, 10.0), std::invalid_argument);
    EXPECT_THROW(bandpass(x, 100.0, 0.0, 60.0), std::invalid_argument);
}

TEST(Container, RoundTripIsExact) {
    SyntheticConfig c;
    c.n_samples = 10;
    c.n_subjects = 5;
    Dataset ds = generate_synthetic_dataset(c);
    ds.availability[4] = 0;  // sample 1, modality 1 missing
    ds.windows[1][1].samples.clear();
    ds.labels[3].reset();
    for (auto& w : ds.windows[3]) w.label.reset();
    const auto path = temp_file("roundtrip.phy");
    container::write_container(path, ds);
    EXPECT_EQ(container::read_container(path), ds);
}

TEST(Container, RandomizedRoundTrips) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        SyntheticConfig c;
        c.n_samples = std::uniform_int_distribution<int>(1, 30)(rng);
        c.n_subjects = std::uniform_int_distribution<int>(1, 6)(rng);
        c.modalities = std::uniform_int_distribution<int>(1, 4)(rng);
        c.seed = rng();
        const Dataset ds = generate_synthetic_dataset(c);
        const auto path = temp_file("random.phy");
        container::write_container(path, ds);
        EXPECT_EQ(container::read_container(path), ds);
    }
}

TEST(Container, EmptyDatasetRoundTrips) {
    Dataset ds;
    ds.modalities = 3;
    const auto path = temp_file("empty.phy");
    container::write_container(path, ds);
    const Dataset back = container::read_container(path);
    EXPECT_EQ(back.size(), 0u);
    EXPECT_EQ(back.modalities, 3);
}

TEST(Container, CorruptMagicIsRejected) {
    SyntheticConfig c;
    c.n_samples = 4;
    c.n_subjects = 2;
    const auto path = temp_file("corrupt.phy");
    container::write_container(path, generate_synthetic_dataset(c));
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
    }
    try {
        container::read_container(path);
        FAIL() << "expected a format error";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("not a container file"), std::string::npos);
    }
}

TEST(Container, VersionMismatchNamesBothVersions) {
    SyntheticConfig c;
    c.n_samples = 4;
    c.n_subjects = 2;
    const auto path = temp_file("version.phy");
    container::write_container(path, generate_synthetic_dataset(c));
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(9);
        const char v2[4] = {2, 0, 0, 0};
        f.write(v2, 4);
    }
    try {
        container::read_container(path);
        FAIL() << "expected a format error";
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("found 2"), std::string::npos) << msg;
        EXPECT_NE(msg.find("expected 1"), std::string::npos) << msg;
    }
}

TEST(Container, HeaderLayout) {
    container::ContainerFile f;
    f.modalities = 3;
    f.samples = 7;
    f.add(container::from_i64("x", {2}, std::vector<std::int64_t>{1, -2}));
    const auto path = temp_file("layout.bin");
    container::write_file(path, f);
    std::ifstream in(path, std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ASSERT_GE(bytes.size(), 21u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 9), "PHYSIOME1");
    EXPECT_EQ(bytes[9], 1);
    EXPECT_EQ(bytes[13], 3);
    EXPECT_EQ(bytes[17], 7);
    // name length 1, 'x', dtype 1, rank 1, dim 2, then two i64 values
    EXPECT_EQ(bytes[21], 1);
    EXPECT_EQ(bytes[25], 'x');
    EXPECT_EQ(bytes[26], 1);
    EXPECT_EQ(bytes[27], 1);
    EXPECT_EQ(bytes[28], 2);
    EXPECT_EQ(bytes.size(), 21u + 4 + 1 + 2 + 8 + 16);
    EXPECT_EQ(container::read_file(path), f);
}
