#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace snp {

enum class OptimizerKind { adam, sgd };
enum class Schedule { cosine, constant };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);
std::string_view to_string(Schedule schedule);
Schedule parse_schedule(std::string_view text);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;  // decoupled, scaled by the step's learning rate
};

// First-order optimizer over a flat parameter vector with per-entry learning
// rates. Entries flagged in `skip` are left untouched: no update, no decay and
// no change to their moment estimates or step counts.
class Optimizer {
public:
    Optimizer() = default;
    Optimizer(OptimizerConfig config, Eigen::Index size);

    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, const Eigen::VectorXd& lr,
              const std::vector<std::uint8_t>* skip = nullptr);
    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr,
              const std::vector<std::uint8_t>* skip = nullptr);

    const OptimizerConfig& config() const { return config_; }
    const Eigen::VectorXd& first_moment() const { return m_; }
    const Eigen::VectorXd& second_moment() const { return v_; }

private:
    OptimizerConfig config_;
    Eigen::VectorXd m_, v_;
    std::vector<std::int64_t> steps_;
};

// Multiplier applied to the base learning rates at `step` of `total` updates:
// linear warm-up from 0 over the first warmup_fraction of steps, then cosine
// decay towards 0 at the last step.
double schedule_factor(Schedule schedule, long step, long total, double warmup_fraction);

}  // namespace snp
