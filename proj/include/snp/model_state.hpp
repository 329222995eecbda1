#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace snp {

struct EncoderConfig {
    int n_layers = 4;
    int n_heads = 4;
    int d_model = 64;
    int d_ff = 128;
    int vocab_size = 2;
    int max_len = 64;
    std::uint64_t seed = 0;

    int d_head() const { return d_model / n_heads; }
    int total_heads() const { return n_layers * n_heads; }
    void validate() const;
};

// Hidden widths of the arc and label feedforwards (768 / 256 at full scale).
struct ParserConfig {
    int arc_dim = 64;
    int tag_dim = 32;
    int n_labels = 1;

    void validate() const;
};

struct ModelConfig {
    EncoderConfig encoder;
    ParserConfig parser;

    void validate() const {
        encoder.validate();
        parser.validate();
    }
};

enum class ParamGroup { embedding, attention, layer_norm, feedforward, mixing, classifier };

// Encoder-side groups take the encoder learning rate and are frozen during
// gradual unfreezing; mixing weights belong with the task head.
inline bool is_encoder_group(ParamGroup g) {
    return g == ParamGroup::embedding || g == ParamGroup::attention || g == ParamGroup::layer_norm ||
           g == ParamGroup::feedforward;
}

struct ParamSlot {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Eigen::Index offset = 0;
    ParamGroup group = ParamGroup::classifier;
    int layer = -1;  // owning attention head, when the tensor belongs to one
    int head = -1;
    bool prunable = false;  // attention projection weight (unstructured pruning unit)

    Eigen::Index size() const { return rows * cols; }
};

struct HeadSlots {
    int wq, bq, wk, bk, wv, bv, wo;
};

struct LayerSlots {
    std::vector<HeadSlots> heads;
    int bo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;
};

struct EncoderSlots {
    int tok_emb, pos_emb, emb_ln_g, emb_ln_b;
    std::vector<LayerSlots> layers;
    int mix, eta;
};

struct ParserSlots {
    int arc_head_w, arc_head_b, arc_dep_w, arc_dep_b, arc_w, arc_b;
    int tag_head_w, tag_head_b, tag_dep_w, tag_dep_b;
    int tag_u;       // tag_dim x (tag_dim * n_labels), block l is U_l
    int tag_head_v;  // tag_dim x n_labels
    int tag_dep_v;   // tag_dim x n_labels
    int tag_b;       // n_labels x 1
};

// Named tensors packed into one flat vector, column-major per tensor.
class ParamLayout {
public:
    explicit ParamLayout(const ModelConfig& config);

    const std::vector<ParamSlot>& slots() const { return slots_; }
    const ParamSlot& slot(int id) const { return slots_[static_cast<std::size_t>(id)]; }
    Eigen::Index size() const { return size_; }
    const EncoderSlots& encoder() const { return encoder_; }
    const ParserSlots& parser() const { return parser_; }
    int find(const std::string& name) const;  // -1 when absent

private:
    int add(std::string name, Eigen::Index rows, Eigen::Index cols, ParamGroup group, int layer = -1,
            int head = -1, bool prunable = false);

    std::vector<ParamSlot> slots_;
    Eigen::Index size_ = 0;
    EncoderSlots encoder_{};
    ParserSlots parser_{};
};

using MatrixMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;

inline MatrixMap view(Eigen::VectorXd& flat, const ParamSlot& s) {
    return MatrixMap(flat.data() + s.offset, s.rows, s.cols);
}
inline ConstMatrixMap view(const Eigen::VectorXd& flat, const ParamSlot& s) {
    return ConstMatrixMap(flat.data() + s.offset, s.rows, s.cols);
}

// All trainable parameters of encoder, layer mix and biaffine classifier.
struct ModelState {
    ModelConfig config;
    std::shared_ptr<const ParamLayout> layout;
    Eigen::VectorXd values;

    ConstMatrixMap mat(int slot) const { return view(values, layout->slot(slot)); }
    MatrixMap mat(int slot) { return view(values, layout->slot(slot)); }
    Eigen::VectorXd zeros() const { return Eigen::VectorXd::Zero(values.size()); }
    double eta() const { return values[layout->slot(layout->encoder().eta).offset]; }
};

ModelState init_state(const ModelConfig& config);

// Flat-index membership helpers.
std::vector<Eigen::Index> head_param_indices(const ParamLayout& layout, int layer, int head);

}  // namespace snp
