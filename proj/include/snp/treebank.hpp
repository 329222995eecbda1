#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "snp/random.hpp"

namespace snp {

struct Token {
    int index = 0;       // 1-based
    std::string form;
    int head = 0;        // 0 = root
    std::string deprel;
    // Remaining CoNLL-U columns (LEMMA..FEATS, DEPS, MISC), kept verbatim.
    std::vector<std::string> extra;
};

struct Sentence {
    std::vector<Token> tokens;
    std::string language;
    std::string source_id;

    std::size_t size() const { return tokens.size(); }
    std::vector<int> heads() const;
};

enum class Split { train, dev, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct Treebank {
    std::string language;
    Split split = Split::train;
    std::vector<Sentence> sentences;

    std::size_t token_count() const;
};

// True iff `heads` (1-based tokens, 0 = root) forms a tree rooted at 0.
bool is_tree(const std::vector<int>& heads);
// Number of tokens attached directly to the root.
int root_children(const std::vector<int>& heads);

Treebank parse_conllu(std::string_view text, const std::string& language, Split split);
Treebank read_conllu(const std::string& path, const std::string& language, Split split);
std::string to_conllu(const Treebank& treebank);
void write_conllu(const std::string& path, const Treebank& treebank);

struct LabelVocab {
    std::vector<std::string> labels;
    std::vector<std::int64_t> counts;

    std::size_t size() const { return labels.size(); }
    int index_of(const std::string& label) const;  // -1 when absent
    std::int64_t total() const;
    void add(const std::string& label, std::int64_t count = 1);

private:
    std::map<std::string, int> lookup_;
};

LabelVocab build_label_vocab(const std::vector<Treebank>& treebanks);

enum class Rarity { seen, rare, unseen };
std::string_view to_string(Rarity rarity);

// A label is rare when its share of training instances is strictly below 0.1%.
inline constexpr double kRareLabelShare = 0.001;

std::map<std::string, Rarity> classify_label_rarity(const LabelVocab& vocab,
                                                    const std::set<std::string>& test_labels);

std::vector<Sentence> sample_sentences(const Treebank& treebank, std::size_t n, std::uint64_t seed,
                                       bool without_replacement);

// Index sampler over a fixed population. Without replacement, successive draws
// walk one shuffled permutation and are disjoint until the epoch is exhausted;
// the permutation is then reshuffled.
class EpochSampler {
public:
    EpochSampler(std::size_t population, std::uint64_t seed, bool without_replacement = true);

    std::vector<std::size_t> draw(std::size_t n);
    std::size_t epoch() const { return epoch_; }

private:
    void reshuffle();

    std::size_t population_;
    bool without_replacement_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t epoch_ = 0;
};

}  // namespace snp
