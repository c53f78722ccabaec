#pragma once

#include "physiome/autograd.hpp"
#include "physiome/dp_neuronet.hpp"
#include "physiome/model.hpp"
#include "physiome/neuronet.hpp"
#include "physiome/signal.hpp"
#include "physiome/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace testsupport {

using physiome::ag::Index;
using physiome::ag::Matrix;
using physiome::ag::Tensor;

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

inline std::vector<std::vector<double>> rows_of(const Matrix& m) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(r)].push_back(m(r, c));
    }
    return out;
}

inline double rel_diff(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) / scale;
}

// Scalar-loop NT-Xent: 2B anchors, cosine similarity, temperature tau.
inline double nt_xent_oracle(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                             double tau) {
    std::vector<std::vector<double>> pool = a;
    pool.insert(pool.end(), b.begin(), b.end());
    const std::size_t n = pool.size();
    const std::size_t half = a.size();
    auto cosine = [](const std::vector<double>& x, const std::vector<double>& y) {
        double dot = 0, nx = 0, ny = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            dot += x[i] * y[i];
            nx += x[i] * x[i];
            ny += y[i] * y[i];
        }
        return dot / (std::sqrt(nx) * std::sqrt(ny));
    };
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t pos = i < half ? i + half : i - half;
        double denom = 0;
        for (std::size_t k = 0; k < n; ++k) {
            if (k != i) denom += std::exp(cosine(pool[i], pool[k]) / tau);
        }
        total += -std::log(std::exp(cosine(pool[i], pool[pos]) / tau) / denom);
    }
    return total / static_cast<double>(n);
}

// Mean over `idx` of the squared L2 row distance.
inline double masked_mse_oracle(const Matrix& r, const Matrix& z, const std::vector<Index>& idx) {
    if (idx.empty()) return 0.0;
    double total = 0;
    for (Index i : idx) {
        for (Index c = 0; c < r.cols(); ++c) {
            const double d = r(i, c) - z(i, c);
            total += d * d;
        }
    }
    return total / static_cast<double>(idx.size());
}

// Kept modalities average the masked error over their unsampled positions;
// a kept modality with nothing unsampled is left out of the average.
inline double intra_oracle(const std::vector<Matrix>& d, const std::vector<Matrix>& e,
                           const physiome::DropSamplePlan& plan) {
    double total = 0;
    int used = 0;
    for (std::size_t m = 0; m < plan.dropped.size(); ++m) {
        if (plan.dropped[m]) continue;
        std::vector<Index> rest;
        for (Index i = 0; i < e[m].rows(); ++i) {
            bool sampled = false;
            for (Index s : plan.sampled[m]) sampled = sampled || s == i;
            if (!sampled) rest.push_back(i);
        }
        if (rest.empty()) continue;
        total += masked_mse_oracle(d[m], e[m], rest);
        ++used;
    }
    return used == 0 ? 0.0 : total / used;
}

inline double missing_oracle(const std::vector<Matrix>& g, const std::vector<Matrix>& e,
                             const physiome::DropSamplePlan& plan) {
    double total = 0;
    int used = 0;
    for (std::size_t m = 0; m < plan.dropped.size(); ++m) {
        if (!plan.dropped[m]) continue;
        std::vector<Index> all;
        for (Index i = 0; i < e[m].rows(); ++i) all.push_back(i);
        total += masked_mse_oracle(g[m], e[m], all);
        ++used;
    }
    return used == 0 ? 0.0 : total / used;
}

inline double cross_oracle(const std::vector<Matrix>& em, const Matrix& om, double tau) {
    double total = 0;
    for (const auto& m : em) total += nt_xent_oracle(rows_of(m), rows_of(om), tau);
    return total / static_cast<double>(em.size());
}

// Random plan over M modalities with at least one kept; kept ones sample
// `h` sorted unique indices from [0, n).
inline physiome::DropSamplePlan random_plan(int modalities, Index n, Index h, std::mt19937_64& rng) {
    physiome::DropSamplePlan p;
    p.dropped.assign(static_cast<std::size_t>(modalities), false);
    p.sampled.resize(static_cast<std::size_t>(modalities));
    std::bernoulli_distribution coin(0.5);
    do {
        for (auto&& d : p.dropped) d = coin(rng);
    } while (std::all_of(p.dropped.begin(), p.dropped.end(), [](bool d) { return d; }));
    for (int m = 0; m < modalities; ++m) {
        if (p.dropped[static_cast<std::size_t>(m)]) continue;
        std::vector<Index> all(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
        std::shuffle(all.begin(), all.end(), rng);
        all.resize(static_cast<std::size_t>(h));
        std::sort(all.begin(), all.end());
        p.sampled[static_cast<std::size_t>(m)] = all;
    }
    return p;
}

// Tiny backbone: 20 Hz, 2 s windows, 0.5 s frames every 0.25 s -> N = 7.
inline physiome::NeuroNetConfig tiny_net_config() {
    physiome::NeuroNetConfig c;
    c.frames = {0.5, 0.25};
    c.sample_rate_hz = 20.0;
    c.window_sec = 2.0;
    c.frame_channels = 4;
    c.encoder_dim = 8;
    c.encoder_depth = 1;
    c.encoder_heads = 2;
    c.decoder_dim = 8;
    c.decoder_depth = 1;
    c.decoder_heads = 2;
    c.projection_hidden = {16, 8};
    c.mask_ratio = 0.5;
    return c;
}

inline physiome::PhysioMEConfig tiny_physiome_config() {
    physiome::PhysioMEConfig c;
    c.mm_dim = 8;
    c.mm_depth = 1;
    c.mm_heads = 2;
    c.decoder_dim = 8;
    c.decoder_depth = 1;
    c.decoder_heads = 2;
    c.restoration_dim = 8;
    c.restoration_depth = 1;
    c.restoration_heads = 2;
    c.projection_hidden = {16, 8};
    c.lora_dropout = 0.0;
    c.batch_size = 4;
    c.epochs = 1;
    c.optimizer.learning_rate = 1e-3;
    return c;
}

inline physiome::SyntheticConfig tiny_data_config(int samples = 40, int modalities = 3) {
    physiome::SyntheticConfig c;
    c.n_subjects = 10;
    c.n_classes = 4;
    c.modalities = modalities;
    c.n_samples = samples;
    c.window_sec = 2.0;
    c.sample_rate_hz = 20.0;
    c.seed = 11;
    return c;
}

inline std::vector<physiome::NeuroNet> tiny_backbones(int modalities, std::uint64_t seed = 3) {
    std::vector<physiome::NeuroNet> nets;
    for (int m = 0; m < modalities; ++m) nets.emplace_back(tiny_net_config(), seed + static_cast<std::uint64_t>(m));
    return nets;
}

// Byte-level hash of a set of tensors, in visiting order.
inline std::uint64_t hash_tensors(const std::vector<Matrix>& values) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& m : values) {
        const auto* p = reinterpret_cast<const unsigned char*>(m.data());
        for (std::size_t i = 0; i < static_cast<std::size_t>(m.size()) * sizeof(double); ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    }
    return h;
}

inline bool bit_equal(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

// Zero-initialized biases put ReLU inputs exactly on the kink, where central
// differences see half a slope. Filling every all-zero tensor with small noise
// moves the check point off those kinks.
inline void fill_zero_tensors(const std::vector<std::pair<std::string, Tensor>>& params, std::uint64_t seed,
                              double scale = 0.05) {
    std::mt19937_64 rng(seed);
    for (auto p : params) {
        if (p.second.value().isZero(0.0)) p.second.mutable_value() = random_matrix(p.second.rows(), p.second.cols(), rng, scale);
    }
}

struct GradCheck {
    double max_rel = 0.0;
    std::size_t checked = 0;
    std::string worst;
};

// Central differences on up to `per_tensor` entries of every parameter
// against the analytic gradient of `loss`. Entries where both gradients are
// below `floor` in magnitude are compared in absolute terms instead.
inline GradCheck finite_difference_check(const std::vector<std::pair<std::string, Tensor>>& params,
                                         const std::function<Tensor()>& loss, std::size_t per_tensor,
                                         double h = 1e-6, double floor = 1e-7) {
    for (auto p : params) p.second.zero_grad();
    loss().backward();
    std::vector<Matrix> analytic;
    for (const auto& p : params) analytic.push_back(p.second.grad());
    GradCheck out;
    std::mt19937_64 pick(99);
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor param = params[t].second;
        const Index size = param.value().size();
        std::vector<Index> entries;
        if (static_cast<std::size_t>(size) <= per_tensor) {
            for (Index i = 0; i < size; ++i) entries.push_back(i);
        } else {
            std::uniform_int_distribution<Index> u(0, size - 1);
            for (std::size_t k = 0; k < per_tensor; ++k) entries.push_back(u(pick));
        }
        for (Index i : entries) {
            double& slot = param.mutable_value().data()[i];
            const double orig = slot;
            double plus = 0, minus = 0;
            {
                physiome::ag::NoGradGuard g;
                slot = orig + h;
                plus = loss().item();
                slot = orig - h;
                minus = loss().item();
            }
            slot = orig;
            const double numeric = (plus - minus) / (2 * h);
            const double a = analytic[t].data()[i];
            double err = 0.0;
            if (std::max(std::abs(a), std::abs(numeric)) < floor) {
                err = std::abs(a - numeric) / floor;
                err = err > 1.0 ? err : 0.0;
            } else {
                err = rel_diff(a, numeric);
            }
            ++out.checked;
            if (err > out.max_rel) {
                out.max_rel = err;
                out.worst = params[t].first + "[" + std::to_string(i) + "] analytic " + std::to_string(a) +
                            " numeric " + std::to_string(numeric);
            }
        }
    }
    return out;
}

// Column means of a sweep CSV recomputed from its scenario rows: metrics over
// every row, absolute deltas over the rows that are not all ones. Returns
// {acc, auc, |delta_acc|, |delta_auc|} and the emitted MAV row for comparison.
struct CsvMav {
    double acc = 0, auc = 0, dacc = 0, dauc = 0;
    std::vector<double> emitted;
    int rows = 0;
};

inline CsvMav recompute_mav_from_csv(const std::string& text) {
    CsvMav out;
    std::istringstream in(text);
    std::string line;
    int non_full = 0;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            header = true;
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.emplace_back();
        const std::size_t n = cells.size();
        std::vector<double> tail;
        for (std::size_t i = n - 4; i < n; ++i) tail.push_back(std::stod(cells[i]));
        if (cells[0] == "MAV") {
            out.emitted = tail;
            continue;
        }
        ++out.rows;
        out.acc += tail[0];
        out.auc += tail[1];
        if (cells[0].find('0') != std::string::npos) {
            ++non_full;
            out.dacc += std::abs(tail[2]);
            out.dauc += std::abs(tail[3]);
        }
    }
    if (out.rows > 0) {
        out.acc /= out.rows;
        out.auc /= out.rows;
    }
    if (non_full > 0) {
        out.dacc /= non_full;
        out.dauc /= non_full;
    }
    return out;
}

}  // namespace testsupport
