#include "physiome/inference.hpp"

#include "physiome/error.hpp"

#include <algorithm>

namespace physiome {

using ag::Index;
using ag::Matrix;
using ag::Tensor;

ScenarioMask ScenarioMask::parse(const std::string& bits) {
    ScenarioMask s;
    for (char c : bits) {
        if (c != '0' && c != '1') throw ConfigError("scenario mask must contain only 0 and 1, got '" + bits + "'");
        s.observed.push_back(c == '1');
    }
    s.validate();
    return s;
}

ScenarioMask ScenarioMask::full(int modalities) {
    ScenarioMask s;
    s.observed.assign(static_cast<std::size_t>(modalities), true);
    return s;
}

bool ScenarioMask::is_full() const {
    return std::all_of(observed.begin(), observed.end(), [](bool o) { return o; });
}

std::vector<int> ScenarioMask::observed_modalities() const {
    std::vector<int> out;
    for (int m = 0; m < modalities(); ++m) {
        if (observed[static_cast<std::size_t>(m)]) out.push_back(m);
    }
    return out;
}

std::vector<int> ScenarioMask::missing_modalities() const {
    std::vector<int> out;
    for (int m = 0; m < modalities(); ++m) {
        if (!observed[static_cast<std::size_t>(m)]) out.push_back(m);
    }
    return out;
}

std::string ScenarioMask::to_string() const {
    std::string s;
    for (bool o : observed) s.push_back(o ? '1' : '0');
    return s;
}

void ScenarioMask::validate() const {
    if (observed.empty()) throw ConfigError("scenario mask is empty");
    if (observed_modalities().empty()) throw ConfigError("scenario has no observed modality");
}

std::vector<ScenarioMask> all_scenarios(int modalities) {
    if (modalities < 1 || modalities > 16) throw ConfigError("scenario enumeration needs 1..16 modalities");
    std::vector<ScenarioMask> out;
    const unsigned total = 1u << modalities;
    for (unsigned bits = 1; bits < total; ++bits) {
        ScenarioMask s;
        for (int m = 0; m < modalities; ++m) s.observed.push_back(((bits >> (modalities - 1 - m)) & 1u) != 0);
        out.push_back(std::move(s));
    }
    std::stable_sort(out.begin(), out.end(), [](const ScenarioMask& a, const ScenarioMask& b) {
        const auto ca = a.observed_modalities().size();
        const auto cb = b.observed_modalities().size();
        if (ca != cb) return ca > cb;
        return a.to_string() > b.to_string();
    });
    return out;
}

namespace {

void check_inputs(const PhysioME& model, std::span<const Matrix> frame_tokens, const ScenarioMask& scenario) {
    if (scenario.modalities() != model.modalities()) {
        throw ConfigError("scenario covers " + std::to_string(scenario.modalities()) + " modalities, model has " +
                          std::to_string(model.modalities()));
    }
    if (scenario.observed_modalities().empty()) throw std::invalid_argument("no observed modality");
    if (static_cast<int>(frame_tokens.size()) != model.modalities()) {
        throw std::invalid_argument("one frame-token matrix per modality is required");
    }
}

}  // namespace

FusionResult infer_fusion(const PhysioME& model, std::span<const Matrix> frame_tokens, const ScenarioMask& scenario,
                          RestorationStrategy strategy) {
    check_inputs(model, frame_tokens, scenario);
    ag::NoGradGuard guard;
    const int mc = model.modalities();
    std::vector<Tensor> z(static_cast<std::size_t>(mc));
    for (int m : scenario.observed_modalities()) {
        const auto mi = static_cast<std::size_t>(m);
        z[mi] = model.project_tokens(model.encode_modality(m, frame_tokens[mi]), m);
    }

    FusionResult out;
    out.restored.resize(static_cast<std::size_t>(mc));
    std::vector<ModalityRun> runs;
    for (int m = 0; m < mc; ++m) {
        const auto mi = static_cast<std::size_t>(m);
        if (scenario.observed[mi]) {
            runs.push_back({m, z[mi], false});
        } else if (strategy == RestorationStrategy::kMemoryToken) {
            runs.push_back({m, model.memory_run(m), true});
            out.restored[mi] = model.memory_tokens(m);
        } else {
            runs.push_back({m, model.mask_run(m), true});
        }
    }
    const FusedSequence first = model.multimodal_encode(runs);
    out.first_pass_length = first.output.rows();
    out.ft = first.output;
    if (!scenario.is_full() && strategy == RestorationStrategy::kRestorationDecoder) {
        for (int m : scenario.missing_modalities()) {
            const auto mi = static_cast<std::size_t>(m);
            out.restored[mi] = model.restore_modality(m, first.run(m), first.output);
            runs[mi] = {m, model.project_tokens(out.restored[mi], m), false};
        }
        const FusedSequence second = model.multimodal_encode(runs);
        out.second_pass_length = second.output.rows();
        out.ft = second.output;
        out.restoration_ran = true;
    }
    out.representation = ag::slice_rows(out.ft, 0, 1);
    return out;
}

std::vector<double> restoration_error(const PhysioME& model, std::span<const Matrix> frame_tokens,
                                      const ScenarioMask& scenario, RestorationStrategy strategy) {
    check_inputs(model, frame_tokens, scenario);
    const FusionResult fused = infer_fusion(model, frame_tokens, scenario, strategy);
    ag::NoGradGuard guard;
    std::vector<double> out;
    for (int m : scenario.missing_modalities()) {
        const auto mi = static_cast<std::size_t>(m);
        if (frame_tokens[mi].size() == 0) throw std::invalid_argument("restoration_error needs the held-out modality");
        const Matrix truth = model.encode_modality(m, frame_tokens[mi]).value();
        const Matrix g = fused.restored[mi].defined() ? fused.restored[mi].value() : Matrix::Zero(truth.rows(), truth.cols());
        out.push_back((g - truth).rowwise().squaredNorm().mean());
    }
    return out;
}

}  // namespace physiome
