#include "snp/model.hpp"

#include <set>

#include "snp/cle.hpp"
#include "snp/errors.hpp"

namespace snp {

Vocab::Vocab(std::vector<std::string> items, std::string unknown) : items_(std::move(items)) {
    for (std::size_t i = 0; i < items_.size(); ++i) {
        if (!lookup_.emplace(items_[i], static_cast<int>(i)).second) {
            throw ContractError("duplicate vocabulary entry '" + items_[i] + "'");
        }
    }
    const auto it = lookup_.find(unknown);
    if (it == lookup_.end()) throw ContractError("vocabulary lacks its unknown entry '" + unknown + "'");
    unknown_ = it->second;
}

int Vocab::index(const std::string& item) const {
    const auto it = lookup_.find(item);
    return it == lookup_.end() ? unknown_ : it->second;
}

int Vocab::find(const std::string& item) const {
    const auto it = lookup_.find(item);
    return it == lookup_.end() ? -1 : it->second;
}

Vocab build_word_vocab(const std::vector<Treebank>& treebanks) {
    std::vector<std::string> items{kRootToken, kUnknownToken};
    std::set<std::string> seen(items.begin(), items.end());
    for (const auto& tb : treebanks)
        for (const auto& s : tb.sentences)
            for (const auto& t : s.tokens)
                if (seen.insert(t.form).second) items.push_back(t.form);
    return Vocab(std::move(items), kUnknownToken);
}

Vocab build_label_inventory(const std::vector<Treebank>& treebanks) {
    std::vector<std::string> items;
    if (!treebanks.empty()) items = build_label_vocab(treebanks).labels;
    items.emplace_back(kUnknownLabel);
    return Vocab(std::move(items), kUnknownLabel);
}

ParserModel make_parser_model(const EncoderConfig& encoder, int arc_dim, int tag_dim,
                              const std::vector<Treebank>& vocab_treebanks) {
    ParserModel model;
    model.words = build_word_vocab(vocab_treebanks);
    model.labels = build_label_inventory(vocab_treebanks);
    ModelConfig cfg;
    cfg.encoder = encoder;
    cfg.encoder.vocab_size = model.words.size();
    std::size_t longest = 0;
    for (const auto& tb : vocab_treebanks)
        for (const auto& s : tb.sentences) longest = std::max(longest, s.size());
    cfg.encoder.max_len = std::max(cfg.encoder.max_len, static_cast<int>(longest) + 1);
    cfg.parser.arc_dim = arc_dim;
    cfg.parser.tag_dim = tag_dim;
    cfg.parser.n_labels = model.labels.size();
    model.state = init_state(cfg);
    return model;
}

EncodedSentence encode_sentence(const ParserModel& model, const Sentence& sentence) {
    EncodedSentence out;
    const std::size_t n = sentence.size();
    out.ids.reserve(n + 1);
    out.ids.push_back(model.words.index(kRootToken));
    out.gold.heads.assign(n + 1, 0);
    out.gold.labels.assign(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& t = sentence.tokens[i];
        out.ids.push_back(model.words.index(t.form));
        out.gold.heads[i + 1] = t.head;
        out.gold.labels[i + 1] = model.labels.index(t.deprel);
    }
    return out;
}

std::vector<EncodedSentence> encode_treebank(const ParserModel& model, const Treebank& treebank) {
    std::vector<EncodedSentence> out;
    out.reserve(treebank.sentences.size());
    for (const auto& s : treebank.sentences) out.push_back(encode_sentence(model, s));
    return out;
}

double sentence_loss(const ModelState& state, const EncodedSentence& sentence, const MaskValues* mask,
                     Eigen::VectorXd* param_grad, Eigen::MatrixXd* mask_grad) {
    const bool need_grad = param_grad != nullptr || mask_grad != nullptr;
    const auto rec = encode(state, sentence.ids, mask, need_grad);
    const auto fwd = score(state, rec.mixed);
    LossSeed seed;
    const double loss = parse_loss(state, fwd, sentence.gold, need_grad ? &seed : nullptr);
    if (need_grad) {
        Eigen::VectorXd scratch;
        Eigen::VectorXd* grad = param_grad;
        if (!grad) {
            scratch = state.zeros();
            grad = &scratch;
        }
        const Eigen::MatrixXd d_mixed = score_backward(state, fwd, sentence.gold, seed, *grad);
        encoder_backward(state, rec, d_mixed, *grad, mask_grad);
    }
    return loss;
}

BatchGradient batch_gradient(const ModelState& state, std::span<const EncodedSentence* const> batch,
                             const MaskValues* mask) {
    if (batch.empty()) throw UsageError("empty batch");
    BatchGradient out;
    out.params = state.zeros();
    out.mask = Eigen::MatrixXd::Zero(state.config.encoder.n_layers, state.config.encoder.n_heads);
    for (const auto* s : batch) out.loss += sentence_loss(state, *s, mask, &out.params, &out.mask);
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.loss *= inv;
    out.params *= inv;
    out.mask *= inv;
    return out;
}

ParseTree predict(const ParserModel& model, const ModelState& state, const EncodedSentence& sentence,
                  const MaskValues* mask) {
    const auto rec = encode(state, sentence.ids, mask, false);
    const auto fwd = score(state, rec.mixed);
    ParseTree tree;
    tree.heads = decode_cle(fwd.arc, true);
    tree.labels.reserve(tree.heads.size());
    for (std::size_t i = 0; i < tree.heads.size(); ++i) {
        const Eigen::VectorXd s = label_scores(state, fwd, tree.heads[i], static_cast<int>(i) + 1);
        Eigen::Index best = 0;
        s.maxCoeff(&best);
        tree.labels.push_back(model.labels.at(static_cast<int>(best)));
    }
    return tree;
}

ParseTree predict(const ParserModel& model, const EncodedSentence& sentence, const MaskValues* mask) {
    return predict(model, model.state, sentence, mask);
}

AttachmentScores las(const std::vector<ParseTree>& pred, const std::vector<Sentence>& gold) {
    if (pred.size() != gold.size()) {
        throw ContractError("prediction count " + std::to_string(pred.size()) + " does not match gold count " +
                            std::to_string(gold.size()));
    }
    AttachmentScores out;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto& p = pred[i];
        const auto& g = gold[i];
        if (p.heads.size() != g.size() || p.labels.size() != g.size()) {
            throw ContractError("sentence " + std::to_string(i) + ": predicted " + std::to_string(p.heads.size()) +
                                " tokens, gold has " + std::to_string(g.size()));
        }
        for (std::size_t t = 0; t < g.size(); ++t) {
            ++out.tokens;
            if (p.heads[t] == g.tokens[t].head) {
                ++out.correct_heads;
                if (p.labels[t] == g.tokens[t].deprel) ++out.correct_labeled;
            }
        }
    }
    if (out.tokens > 0) {
        out.las = 100.0 * static_cast<double>(out.correct_labeled) / static_cast<double>(out.tokens);
        out.uas = 100.0 * static_cast<double>(out.correct_heads) / static_cast<double>(out.tokens);
    }
    return out;
}

AttachmentScores evaluate(const ParserModel& model, const ModelState& state,
                          const std::vector<EncodedSentence>& data, const std::vector<Sentence>& gold,
                          const MaskValues* mask, std::vector<ParseTree>* predictions) {
    std::vector<ParseTree> pred;
    pred.reserve(data.size());
    for (const auto& s : data) pred.push_back(predict(model, state, s, mask));
    auto scores = las(pred, gold);
    if (predictions) *predictions = std::move(pred);
    return scores;
}

Treebank with_predictions(const Treebank& gold, const std::vector<ParseTree>& pred) {
    if (pred.size() != gold.sentences.size()) throw ContractError("prediction count does not match treebank");
    Treebank out = gold;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        auto& s = out.sentences[i];
        if (pred[i].heads.size() != s.size()) throw ContractError("prediction length does not match sentence");
        for (std::size_t t = 0; t < s.size(); ++t) {
            s.tokens[t].head = pred[i].heads[t];
            s.tokens[t].deprel = pred[i].labels[t];
        }
    }
    return out;
}

}  // namespace snp
