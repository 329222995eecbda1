#include "snp/model_state.hpp"

#include <cmath>

#include "snp/errors.hpp"
#include "snp/random.hpp"

namespace snp {

void EncoderConfig::validate() const {
    if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || vocab_size < 1 || max_len < 1) {
        throw ContractError("encoder config counts must all be >= 1");
    }
    if (d_model % n_heads != 0) {
        throw ContractError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                            std::to_string(n_heads) + ")");
    }
}

void ParserConfig::validate() const {
    if (arc_dim < 1 || tag_dim < 1 || n_labels < 1) throw ContractError("parser widths must be >= 1");
}

ParamLayout::ParamLayout(const ModelConfig& config) {
    config.validate();
    const auto& e = config.encoder;
    const auto& p = config.parser;
    const int d = e.d_model;
    const int dh = e.d_head();

    encoder_.tok_emb = add("encoder.token_embedding", e.vocab_size, d, ParamGroup::embedding);
    encoder_.pos_emb = add("encoder.position_embedding", e.max_len, d, ParamGroup::embedding);
    encoder_.emb_ln_g = add("encoder.embedding_norm.gamma", d, 1, ParamGroup::layer_norm);
    encoder_.emb_ln_b = add("encoder.embedding_norm.beta", d, 1, ParamGroup::layer_norm);
    for (int l = 0; l < e.n_layers; ++l) {
        const std::string pre = "encoder.layer" + std::to_string(l) + ".";
        LayerSlots ls{};
        for (int h = 0; h < e.n_heads; ++h) {
            const std::string hp = pre + "head" + std::to_string(h) + ".";
            HeadSlots hs{};
            hs.wq = add(hp + "query.weight", d, dh, ParamGroup::attention, l, h, true);
            hs.bq = add(hp + "query.bias", dh, 1, ParamGroup::attention, l, h);
            hs.wk = add(hp + "key.weight", d, dh, ParamGroup::attention, l, h, true);
            hs.bk = add(hp + "key.bias", dh, 1, ParamGroup::attention, l, h);
            hs.wv = add(hp + "value.weight", d, dh, ParamGroup::attention, l, h, true);
            hs.bv = add(hp + "value.bias", dh, 1, ParamGroup::attention, l, h);
            hs.wo = add(hp + "output.weight", dh, d, ParamGroup::attention, l, h, true);
            ls.heads.push_back(hs);
        }
        ls.bo = add(pre + "attention_output.bias", d, 1, ParamGroup::attention, l);
        ls.ln1_g = add(pre + "attention_norm.gamma", d, 1, ParamGroup::layer_norm, l);
        ls.ln1_b = add(pre + "attention_norm.beta", d, 1, ParamGroup::layer_norm, l);
        ls.w1 = add(pre + "ffn.in.weight", d, e.d_ff, ParamGroup::feedforward, l);
        ls.b1 = add(pre + "ffn.in.bias", e.d_ff, 1, ParamGroup::feedforward, l);
        ls.w2 = add(pre + "ffn.out.weight", e.d_ff, d, ParamGroup::feedforward, l);
        ls.b2 = add(pre + "ffn.out.bias", d, 1, ParamGroup::feedforward, l);
        ls.ln2_g = add(pre + "ffn_norm.gamma", d, 1, ParamGroup::layer_norm, l);
        ls.ln2_b = add(pre + "ffn_norm.beta", d, 1, ParamGroup::layer_norm, l);
        encoder_.layers.push_back(std::move(ls));
    }
    encoder_.mix = add("mix.lambda", e.n_layers, 1, ParamGroup::mixing);
    encoder_.eta = add("mix.eta", 1, 1, ParamGroup::mixing);

    parser_.arc_head_w = add("parser.arc_head.weight", d, p.arc_dim, ParamGroup::classifier);
    parser_.arc_head_b = add("parser.arc_head.bias", p.arc_dim, 1, ParamGroup::classifier);
    parser_.arc_dep_w = add("parser.arc_dep.weight", d, p.arc_dim, ParamGroup::classifier);
    parser_.arc_dep_b = add("parser.arc_dep.bias", p.arc_dim, 1, ParamGroup::classifier);
    parser_.arc_w = add("parser.arc_biaffine.weight", p.arc_dim, p.arc_dim, ParamGroup::classifier);
    parser_.arc_b = add("parser.arc_biaffine.bias", p.arc_dim, 1, ParamGroup::classifier);
    parser_.tag_head_w = add("parser.tag_head.weight", d, p.tag_dim, ParamGroup::classifier);
    parser_.tag_head_b = add("parser.tag_head.bias", p.tag_dim, 1, ParamGroup::classifier);
    parser_.tag_dep_w = add("parser.tag_dep.weight", d, p.tag_dim, ParamGroup::classifier);
    parser_.tag_dep_b = add("parser.tag_dep.bias", p.tag_dim, 1, ParamGroup::classifier);
    parser_.tag_u = add("parser.tag_biaffine.weight", p.tag_dim, p.tag_dim * p.n_labels, ParamGroup::classifier);
    parser_.tag_head_v = add("parser.tag_biaffine.head_linear", p.tag_dim, p.n_labels, ParamGroup::classifier);
    parser_.tag_dep_v = add("parser.tag_biaffine.dep_linear", p.tag_dim, p.n_labels, ParamGroup::classifier);
    parser_.tag_b = add("parser.tag_biaffine.bias", p.n_labels, 1, ParamGroup::classifier);
}

int ParamLayout::add(std::string name, Eigen::Index rows, Eigen::Index cols, ParamGroup group, int layer, int head,
                     bool prunable) {
    ParamSlot s;
    s.name = std::move(name);
    s.rows = rows;
    s.cols = cols;
    s.offset = size_;
    s.group = group;
    s.layer = layer;
    s.head = head;
    s.prunable = prunable;
    size_ += s.size();
    slots_.push_back(std::move(s));
    return static_cast<int>(slots_.size()) - 1;
}

int ParamLayout::find(const std::string& name) const {
    for (std::size_t i = 0; i < slots_.size(); ++i)
        if (slots_[i].name == name) return static_cast<int>(i);
    return -1;
}

ModelState init_state(const ModelConfig& config) {
    ModelState state;
    state.config = config;
    state.layout = std::make_shared<const ParamLayout>(config);
    state.values = Eigen::VectorXd::Zero(state.layout->size());

    auto rng = make_rng(config.encoder.seed, 0x1417);
    auto fill_normal = [&](int slot, double stddev) {
        auto m = state.mat(slot);
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = stddev * normal01(rng);
    };
    auto fan_in = [&](int slot) { return 1.0 / std::sqrt(static_cast<double>(state.layout->slot(slot).rows)); };

    const auto& es = state.layout->encoder();
    fill_normal(es.tok_emb, 0.5);
    fill_normal(es.pos_emb, 0.5);
    state.mat(es.emb_ln_g).setOnes();
    for (const auto& ls : es.layers) {
        for (const auto& hs : ls.heads) {
            fill_normal(hs.wq, fan_in(hs.wq));
            fill_normal(hs.wk, fan_in(hs.wk));
            fill_normal(hs.wv, fan_in(hs.wv));
            fill_normal(hs.wo, fan_in(hs.wo) / std::sqrt(static_cast<double>(config.encoder.n_heads)));
        }
        state.mat(ls.ln1_g).setOnes();
        state.mat(ls.ln2_g).setOnes();
        fill_normal(ls.w1, fan_in(ls.w1));
        fill_normal(ls.w2, fan_in(ls.w2));
    }
    // lambda = 0 gives a uniform layer mix; eta starts at 1.
    state.mat(es.eta)(0, 0) = 1.0;

    const auto& ps = state.layout->parser();
    fill_normal(ps.arc_head_w, fan_in(ps.arc_head_w));
    fill_normal(ps.arc_dep_w, fan_in(ps.arc_dep_w));
    fill_normal(ps.arc_w, fan_in(ps.arc_w));
    fill_normal(ps.tag_head_w, fan_in(ps.tag_head_w));
    fill_normal(ps.tag_dep_w, fan_in(ps.tag_dep_w));
    fill_normal(ps.tag_u, 1.0 / static_cast<double>(config.parser.tag_dim));
    fill_normal(ps.tag_head_v, fan_in(ps.tag_head_v));
    fill_normal(ps.tag_dep_v, fan_in(ps.tag_dep_v));
    return state;
}

std::vector<Eigen::Index> head_param_indices(const ParamLayout& layout, int layer, int head) {
    std::vector<Eigen::Index> out;
    for (const auto& s : layout.slots()) {
        if (s.layer == layer && s.head == head) {
            for (Eigen::Index i = 0; i < s.size(); ++i) out.push_back(s.offset + i);
        }
    }
    return out;
}

}  // namespace snp
