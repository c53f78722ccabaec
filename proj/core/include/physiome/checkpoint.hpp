#pragma once

#include "physiome/container.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace physiome {

enum class Stage { kDpNeuroNet, kPhysioME, kLinearHead };

std::string to_string(Stage stage);
Stage parse_stage(const std::string& name);

// Named f64 tensors plus the stage tag, the JSON config snapshot and the hash
// of the inputs the stage consumed, stored in one container file under
// meta/stage, meta/config_json and meta/input_hash.
struct CheckpointBundle {
    Stage stage = Stage::kDpNeuroNet;
    std::string config_json;
    std::string input_hash;
    std::uint32_t modalities = 0;
    std::vector<container::NamedTensor> tensors;

    void put(const std::string& name, const ag::Matrix& value);
    bool has(const std::string& name) const;
    ag::Matrix matrix(const std::string& name) const;
    // Tensor names starting with `prefix`, in storage order.
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;

    container::ContainerFile to_container() const;
    static CheckpointBundle from_container(const container::ContainerFile& file);
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointBundle& bundle);
CheckpointBundle load_checkpoint(const std::filesystem::path& path);

// Throws StageError "expected checkpoint stage X, found Y".
void require_stage(const CheckpointBundle& bundle, Stage expected);

}  // namespace physiome
