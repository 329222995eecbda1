#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "snp/model_state.hpp"

namespace snp {

// Per-head multiplicative mask, shape (n_layers, n_heads). Binary for static
// subnetworks; any real value is accepted so gradients can be taken w.r.t. it.
using MaskValues = Eigen::MatrixXd;

MaskValues ones_mask(const EncoderConfig& config);

struct LayerNormCache {
    Eigen::MatrixXd xhat;
    Eigen::VectorXd inv_std;
};

struct HeadCache {
    Eigen::MatrixXd q, k, v;
    Eigen::MatrixXd probs;
    Eigen::MatrixXd out;  // before the mask is applied
};

struct LayerCache {
    Eigen::MatrixXd input;
    std::vector<HeadCache> heads;
    LayerNormCache ln1;
    Eigen::MatrixXd x1;
    Eigen::MatrixXd ff_pre;
    Eigen::MatrixXd ff_act;
    LayerNormCache ln2;
    Eigen::MatrixXd output;  // U_i, one row per position
};

// Everything the backward pass needs. `mixed` holds r_j (one row per position).
struct MaskedForwardRecord {
    std::vector<int> tokens;
    MaskValues mask;
    LayerNormCache embedding_ln;
    std::vector<LayerCache> layers;
    Eigen::VectorXd mix_weights;  // softmax(lambda)
    Eigen::MatrixXd mixed;
    bool cached = false;
};

// Runs the encoder. Each head's output is scaled by its mask value before the
// output projection; `mask == nullptr` means all heads enabled. The layer
// readout is r_j = eta * sum_i softmax(lambda)_i U_ij.
MaskedForwardRecord encode(const ModelState& state, std::span<const int> tokens, const MaskValues* mask,
                           bool cache_for_backward = true);

// Reverse pass from dL/dr. Accumulates into `param_grad` (flat, same layout as
// the state) and, when given, into `mask_grad` (dL/d mask value per head).
void encoder_backward(const ModelState& state, const MaskedForwardRecord& record, const Eigen::MatrixXd& grad_mixed,
                      Eigen::VectorXd& param_grad, Eigen::MatrixXd* mask_grad);

}  // namespace snp
