#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "snp/model_state.hpp"

namespace snp {

// Arc scores over {root} + tokens: entry (h, d) scores the arc h -> d. Row and
// column 0 are the root; column 0 and the diagonal are ignored by decoding.
using ArcScores = Eigen::MatrixXd;

struct ParserForward {
    Eigen::MatrixXd input;  // r_j, row 0 is the root position
    Eigen::MatrixXd arc_head_pre, arc_head, arc_dep_pre, arc_dep;
    Eigen::MatrixXd tag_head_pre, tag_head, tag_dep_pre, tag_dep;
    ArcScores arc;
};

// S_arc = H_head W_arc H_dep^T + (H_head b_arc) 1^T with ELU feedforwards;
// label scores come from a second biaffine over the tag feedforwards.
ParserForward score(const ModelState& state, const Eigen::MatrixXd& encodings);

// Scores of every label for the arc head -> dep.
Eigen::VectorXd label_scores(const ModelState& state, const ParserForward& fwd, int head, int dep);

// Full label tensor: element l is the (n+1) x (n+1) score matrix of label l.
std::vector<Eigen::MatrixXd> label_score_tensor(const ModelState& state, const ParserForward& fwd);

struct GoldArcs {
    std::vector<int> heads;   // size n+1, entry 0 unused
    std::vector<int> labels;  // size n+1, entry 0 unused
};

struct LossSeed {
    Eigen::MatrixXd d_arc;                // dL/dS_arc
    std::vector<Eigen::VectorXd> d_label; // dL/d label scores at the gold arc, per dependent (0 unused)
};

// Sum over tokens of head cross-entropy (softmax down column d of S_arc) plus
// label cross-entropy at the gold arc.
double parse_loss(const ModelState& state, const ParserForward& fwd, const GoldArcs& gold, LossSeed* seed);

// Backpropagates a loss seed to the classifier parameters and returns dL/dr.
Eigen::MatrixXd score_backward(const ModelState& state, const ParserForward& fwd, const GoldArcs& gold,
                               const LossSeed& seed, Eigen::VectorXd& param_grad);

struct ParseTree {
    std::vector<int> heads;          // per token, 0 = root
    std::vector<std::string> labels; // per token
};

}  // namespace snp
