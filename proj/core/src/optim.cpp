#include "physiome/optim.hpp"

#include <cmath>

namespace physiome::optim {

AdamW::AdamW(std::vector<std::pair<std::string, ag::Tensor>> params, AdamWConfig config) : config_(config) {
    for (auto& [name, t] : params) {
        if (!t.requires_grad()) continue;
        slots_.push_back(Slot{name, t, ag::Matrix::Zero(t.rows(), t.cols()), ag::Matrix::Zero(t.rows(), t.cols())});
    }
}

void AdamW::zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
}

void AdamW::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
    for (auto& s : slots_) {
        if (!s.param.has_grad()) continue;
        const ag::Matrix g = s.param.grad();
        s.m = config_.beta1 * s.m + (1.0 - config_.beta1) * g;
        s.v = config_.beta2 * s.v + (1.0 - config_.beta2) * g.cwiseProduct(g);
        ag::Matrix& w = s.param.mutable_value();
        w *= (1.0 - config_.learning_rate * config_.weight_decay);
        w.array() -= config_.learning_rate * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + config_.eps);
    }
}

std::size_t AdamW::parameter_count() const {
    std::size_t n = 0;
    for (const auto& s : slots_) n += static_cast<std::size_t>(s.param.rows() * s.param.cols());
    return n;
}

}  // namespace physiome::optim
