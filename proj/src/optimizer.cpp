#include "snp/optimizer.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "snp/errors.hpp"

namespace snp {

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view text) {
    if (text == "adam") return OptimizerKind::adam;
    if (text == "sgd") return OptimizerKind::sgd;
    throw UsageError("unknown optimizer '" + std::string(text) + "' (expected adam or sgd)");
}

std::string_view to_string(Schedule schedule) { return schedule == Schedule::cosine ? "cosine" : "constant"; }

Schedule parse_schedule(std::string_view text) {
    if (text == "cosine") return Schedule::cosine;
    if (text == "constant") return Schedule::constant;
    throw UsageError("unknown schedule '" + std::string(text) + "' (expected cosine or constant)");
}

Optimizer::Optimizer(OptimizerConfig config, Eigen::Index size)
    : config_(config),
      m_(Eigen::VectorXd::Zero(size)),
      v_(Eigen::VectorXd::Zero(size)),
      steps_(static_cast<std::size_t>(size), 0) {}

void Optimizer::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, const Eigen::VectorXd& lr,
                     const std::vector<std::uint8_t>* skip) {
    const Eigen::Index n = params.size();
    if (grad.size() != n || lr.size() != n || m_.size() != n) {
        throw ContractError("optimizer step: size mismatch");
    }
    if (skip && skip->size() != static_cast<std::size_t>(n)) throw ContractError("optimizer step: skip size mismatch");
    const auto& c = config_;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (skip && (*skip)[static_cast<std::size_t>(i)]) continue;
        const double g = grad[i];
        const double rate = lr[i];
        if (c.kind == OptimizerKind::sgd) {
            params[i] -= rate * (g + c.weight_decay * params[i]);
            continue;
        }
        const auto t = ++steps_[static_cast<std::size_t>(i)];
        m_[i] = c.beta1 * m_[i] + (1.0 - c.beta1) * g;
        v_[i] = c.beta2 * v_[i] + (1.0 - c.beta2) * g * g;
        const double mhat = m_[i] / (1.0 - std::pow(c.beta1, static_cast<double>(t)));
        const double vhat = v_[i] / (1.0 - std::pow(c.beta2, static_cast<double>(t)));
        params[i] -= rate * (mhat / (std::sqrt(vhat) + c.epsilon) + c.weight_decay * params[i]);
    }
}

void Optimizer::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr,
                     const std::vector<std::uint8_t>* skip) {
    step(params, grad, Eigen::VectorXd::Constant(params.size(), lr), skip);
}

double schedule_factor(Schedule schedule, long step, long total, double warmup_fraction) {
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) throw UsageError("warmup_fraction must lie in [0, 1)");
    if (schedule == Schedule::constant || total <= 0) return 1.0;
    const double warm = warmup_fraction * static_cast<double>(total);
    const double s = static_cast<double>(step);
    if (s < warm) return s / warm;
    const double span = static_cast<double>(total - 1) - warm;
    if (span <= 0.0) return 1.0;
    const double progress = std::min(1.0, (s - warm) / span);
    return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace snp
