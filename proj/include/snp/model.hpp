#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "snp/biaffine.hpp"
#include "snp/encoder.hpp"
#include "snp/model_state.hpp"
#include "snp/treebank.hpp"

namespace snp {

// String <-> index table with a fixed fallback entry for unknown strings.
class Vocab {
public:
    Vocab() = default;
    Vocab(std::vector<std::string> items, std::string unknown);

    int index(const std::string& item) const;  // falls back to the unknown entry
    int find(const std::string& item) const;   // -1 when absent
    const std::string& at(int i) const { return items_[static_cast<std::size_t>(i)]; }
    int size() const { return static_cast<int>(items_.size()); }
    const std::vector<std::string>& items() const { return items_; }
    int unknown_index() const { return unknown_; }

private:
    std::vector<std::string> items_;
    std::map<std::string, int> lookup_;
    int unknown_ = -1;
};

inline constexpr const char* kRootToken = "<root>";
inline constexpr const char* kUnknownToken = "<unk>";
inline constexpr const char* kUnknownLabel = "<unk>";

// Word vocabulary covers every form in `treebanks` (plus root and unknown);
// the label inventory covers every relation, with `<unk>` last.
Vocab build_word_vocab(const std::vector<Treebank>& treebanks);
Vocab build_label_inventory(const std::vector<Treebank>& treebanks);

// The parser: parameters plus the tables that map text to indices.
struct ParserModel {
    ModelState state;
    Vocab words;
    Vocab labels;
    LabelVocab training_labels;  // label counts seen during training, for rarity accounting
};

ParserModel make_parser_model(const EncoderConfig& encoder, int arc_dim, int tag_dim,
                              const std::vector<Treebank>& vocab_treebanks);

// Sentence with the root prepended: ids[0] is <root>, heads/labels[0] unused.
struct EncodedSentence {
    std::vector<int> ids;
    GoldArcs gold;

    int length() const { return static_cast<int>(ids.size()) - 1; }
};

EncodedSentence encode_sentence(const ParserModel& model, const Sentence& sentence);
std::vector<EncodedSentence> encode_treebank(const ParserModel& model, const Treebank& treebank);

// Loss of one sentence (sum over tokens). Gradients accumulate when buffers are given.
double sentence_loss(const ModelState& state, const EncodedSentence& sentence, const MaskValues* mask,
                     Eigen::VectorXd* param_grad = nullptr, Eigen::MatrixXd* mask_grad = nullptr);

struct BatchGradient {
    double loss = 0.0;              // mean over sentences
    Eigen::VectorXd params;         // d loss / d params
    Eigen::MatrixXd mask;           // d loss / d mask values
};

// Mean-over-batch loss and gradients.
BatchGradient batch_gradient(const ModelState& state, std::span<const EncodedSentence* const> batch,
                             const MaskValues* mask);

ParseTree predict(const ParserModel& model, const EncodedSentence& sentence, const MaskValues* mask);
ParseTree predict(const ParserModel& model, const ModelState& state, const EncodedSentence& sentence,
                  const MaskValues* mask);

struct AttachmentScores {
    double las = 0.0;
    double uas = 0.0;
    std::size_t tokens = 0;
    std::size_t correct_heads = 0;
    std::size_t correct_labeled = 0;
};

AttachmentScores las(const std::vector<ParseTree>& pred, const std::vector<Sentence>& gold);

// Predicts every sentence and scores it.
AttachmentScores evaluate(const ParserModel& model, const ModelState& state,
                          const std::vector<EncodedSentence>& data, const std::vector<Sentence>& gold,
                          const MaskValues* mask, std::vector<ParseTree>* predictions = nullptr);

// Writes predictions into a copy of `gold` (HEAD and DEPREL replaced).
Treebank with_predictions(const Treebank& gold, const std::vector<ParseTree>& pred);

}  // namespace snp
