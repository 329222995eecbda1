#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "snp/treebank.hpp"

namespace snp {

enum class WordOrder { SVO, SOV, VSO };
enum class Adposition { pre, post };

std::string_view to_string(WordOrder order);
std::string_view to_string(Adposition adposition);

// Every relation the toy generator knows how to produce.
const std::vector<std::string>& toy_label_universe();

// A synthetic language: clause order, adposition side, lexicon seed and the
// constructions it may use (by relation label). `root` is always produced.
struct ToyGrammarSpec {
    std::string language = "toy";
    WordOrder word_order = WordOrder::SVO;
    Adposition adposition = Adposition::pre;
    std::uint64_t vocab_seed = 1;
    std::vector<std::string> label_inventory = toy_label_universe();
    double noise_rate = 0.0;

    void validate() const;
    bool uses(std::string_view label) const;
};

// Key-value config: `key = value` lines, `#` comments. Keys: language,
// word_order, adposition, vocab_seed, labels (comma-separated), noise_rate.
ToyGrammarSpec parse_toy_spec(std::string_view text);
ToyGrammarSpec read_toy_spec(const std::string& path);

Treebank gen_toy_treebank(const ToyGrammarSpec& spec, std::size_t n_sentences, std::uint64_t seed,
                          Split split = Split::train);

// Generator seed for one split of a language, so languages sharing a grammar
// still get different sentences.
std::uint64_t toy_split_seed(std::string_view language, std::uint64_t seed, Split split);

// Binary indicators: word order (3), adposition side (2), then one entry per
// label in toy_label_universe().
std::vector<double> toy_typology_vector(const ToyGrammarSpec& spec);

}  // namespace snp
