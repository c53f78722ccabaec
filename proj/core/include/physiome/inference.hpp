#pragma once

#include "physiome/model.hpp"

#include <span>
#include <string>
#include <vector>

namespace physiome {

struct ScenarioMask {
    std::vector<bool> observed;

    // "101" -> modalities {0, 2} observed; character i is modality i.
    static ScenarioMask parse(const std::string& bits);
    static ScenarioMask full(int modalities);

    int modalities() const { return static_cast<int>(observed.size()); }
    bool is_full() const;
    std::vector<int> observed_modalities() const;
    std::vector<int> missing_modalities() const;
    std::string to_string() const;
    void validate() const;
    bool operator==(const ScenarioMask&) const = default;
};

// Every nonempty observed subset, full scenario first, then by decreasing
// number of observed modalities and lexicographically descending bitmask.
std::vector<ScenarioMask> all_scenarios(int modalities);

struct FusionResult {
    ag::Tensor ft;              // final multimodal encoder output, class token first
    ag::Tensor representation;  // 1 x D_mm class token row of ft
    ag::Index first_pass_length = 0;
    ag::Index second_pass_length = 0;  // 0 when no second pass ran
    bool restoration_ran = false;
    std::vector<ag::Tensor> restored;  // per modality, encoder space; undefined unless restored
};

// Missing-modality inference over one sample. `frame_tokens` holds cached
// frame-network tokens per modality; entries for missing modalities are
// ignored. Runs in eval mode without recording a graph.
FusionResult infer_fusion(const PhysioME& model, std::span<const ag::Matrix> frame_tokens,
                          const ScenarioMask& scenario, RestorationStrategy strategy);

// Mean over positions of ||g_i - e_i||^2 per missing modality, where e comes
// from encoding the held-out window. The masked-token strategy carries no
// encoder-space estimate, so its g is the zero sequence.
std::vector<double> restoration_error(const PhysioME& model, std::span<const ag::Matrix> frame_tokens,
                                      const ScenarioMask& scenario, RestorationStrategy strategy);

}  // namespace physiome
