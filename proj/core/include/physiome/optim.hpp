#pragma once

#include "physiome/autograd.hpp"

#include <string>
#include <utility>
#include <vector>

namespace physiome::optim {

struct AdamWConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled weight decay Adam. Only tensors flagged requires_grad are
// registered; frozen tensors are never touched.
class AdamW {
public:
    AdamW(std::vector<std::pair<std::string, ag::Tensor>> params, AdamWConfig config);

    void zero_grad();
    void step();

    long long steps() const { return step_count_; }
    std::size_t parameter_count() const;
    const AdamWConfig& config() const { return config_; }

private:
    struct Slot {
        std::string name;
        ag::Tensor param;
        ag::Matrix m;
        ag::Matrix v;
    };
    std::vector<Slot> slots_;
    AdamWConfig config_;
    long long step_count_ = 0;
};

}  // namespace physiome::optim
