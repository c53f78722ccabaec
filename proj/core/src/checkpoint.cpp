#include "physiome/checkpoint.hpp"

#include "physiome/error.hpp"

namespace physiome {

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::kDpNeuroNet: return "dp_neuronet";
        case Stage::kPhysioME: return "physiome";
        case Stage::kLinearHead: return "linear_head";
    }
    return "unknown";
}

Stage parse_stage(const std::string& name) {
    if (name == "dp_neuronet") return Stage::kDpNeuroNet;
    if (name == "physiome") return Stage::kPhysioME;
    if (name == "linear_head") return Stage::kLinearHead;
    throw FormatError("unknown checkpoint stage '" + name + "'");
}

namespace {
constexpr const char* kStageKey = "meta/stage";
constexpr const char* kConfigKey = "meta/config_json";
constexpr const char* kInputKey = "meta/input_hash";
}  // namespace

void CheckpointBundle::put(const std::string& name, const ag::Matrix& value) {
    if (name.rfind("meta/", 0) == 0) throw std::invalid_argument("tensor names under meta/ are reserved");
    if (has(name)) throw std::invalid_argument("duplicate checkpoint tensor '" + name + "'");
    tensors.push_back(container::from_matrix(name, value));
}

bool CheckpointBundle::has(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return true;
    }
    return false;
}

ag::Matrix CheckpointBundle::matrix(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return container::to_matrix(t);
    }
    throw FormatError("checkpoint has no tensor '" + name + "'");
}

std::vector<std::string> CheckpointBundle::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& t : tensors) {
        if (t.name.rfind(prefix, 0) == 0) out.push_back(t.name);
    }
    return out;
}

container::ContainerFile CheckpointBundle::to_container() const {
    container::ContainerFile file;
    file.modalities = modalities;
    file.samples = 0;
    file.add(container::from_string(kStageKey, to_string(stage)));
    file.add(container::from_string(kConfigKey, config_json));
    file.add(container::from_string(kInputKey, input_hash));
    for (const auto& t : tensors) file.add(t);
    return file;
}

CheckpointBundle CheckpointBundle::from_container(const container::ContainerFile& file) {
    CheckpointBundle b;
    const auto* stage = file.find(kStageKey);
    if (stage == nullptr) throw FormatError("file is not a checkpoint (no meta/stage)");
    b.stage = parse_stage(container::to_string(*stage));
    b.config_json = container::to_string(file.at(kConfigKey));
    b.input_hash = container::to_string(file.at(kInputKey));
    b.modalities = file.modalities;
    for (const auto& t : file.tensors) {
        if (t.name.rfind("meta/", 0) != 0) b.tensors.push_back(t);
    }
    return b;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointBundle& bundle) {
    container::write_file(path, bundle.to_container());
}

CheckpointBundle load_checkpoint(const std::filesystem::path& path) {
    return CheckpointBundle::from_container(container::read_file(path));
}

void require_stage(const CheckpointBundle& bundle, Stage expected) {
    if (bundle.stage != expected) {
        throw StageError("expected checkpoint stage " + to_string(expected) + ", found " + to_string(bundle.stage));
    }
}

}  // namespace physiome
