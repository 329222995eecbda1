#include "snp/toy_grammar.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "snp/errors.hpp"
#include "snp/random.hpp"

namespace snp {

namespace {

enum class WordClass { noun, verb, adj, det, adp, adv, aux, count_ };

constexpr std::size_t kLexiconSize[] = {12, 6, 4, 2, 3, 3, 2};

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

// Lexicon drawn from the vocab seed only, so two grammars with different
// seeds share structure but not forms.
class Lexicon {
public:
    explicit Lexicon(std::uint64_t vocab_seed) {
        static constexpr std::string_view onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n",
                                                      "p", "r", "s", "t", "v", "z", "sh", "ch"};
        static constexpr std::string_view vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
        auto rng = make_rng(vocab_seed, 0x1e61);
        std::set<std::string> used;
        for (std::size_t c = 0; c < static_cast<std::size_t>(WordClass::count_); ++c) {
            auto& words = forms_[c];
            while (words.size() < kLexiconSize[c]) {
                const std::size_t syllables = 1 + uniform_index(rng, 3);
                std::string w;
                for (std::size_t s = 0; s < syllables; ++s) {
                    w += onsets[uniform_index(rng, std::size(onsets))];
                    w += vowels[uniform_index(rng, std::size(vowels))];
                }
                if (used.insert(w).second) words.push_back(std::move(w));
            }
        }
    }

    const std::string& form(WordClass c, std::size_t i) const {
        const auto& words = forms_[static_cast<std::size_t>(c)];
        return words[i % words.size()];
    }

private:
    std::vector<std::string> forms_[static_cast<std::size_t>(WordClass::count_)];
};

// Sentence under construction: words are appended in surface order and
// attached afterwards by local index.
struct Builder {
    struct Word {
        WordClass cls;
        std::size_t lex;
        int head = -1;  // local index, -1 = root
        std::string deprel;
    };
    std::vector<Word> words;

    int add(WordClass cls, std::size_t lex) {
        words.push_back({cls, lex, -1, {}});
        return static_cast<int>(words.size()) - 1;
    }
};

// A constituent is a list of local word indices in surface order; its head
// word is stored separately.
struct Phrase {
    std::vector<int> order;
    int head = -1;
};

void append(Phrase& dst, const Phrase& src) { dst.order.insert(dst.order.end(), src.order.begin(), src.order.end()); }

Phrase make_np(Builder& b, Rng& rng, const ToyGrammarSpec& spec, WordOrder order, bool allow_nmod);

Phrase make_pp(Builder& b, Rng& rng, const ToyGrammarSpec& spec, WordOrder order) {
    Phrase np = make_np(b, rng, spec, order, false);
    const int adp = b.add(WordClass::adp, uniform_index(rng, kLexiconSize[4]));
    b.words[adp].head = np.head;
    b.words[adp].deprel = "case";
    Phrase pp;
    pp.head = np.head;
    if (spec.adposition == Adposition::pre) {
        pp.order.push_back(adp);
        append(pp, np);
    } else {
        append(pp, np);
        pp.order.push_back(adp);
    }
    return pp;
}

Phrase make_np(Builder& b, Rng& rng, const ToyGrammarSpec& spec, WordOrder order, bool allow_nmod) {
    const int noun = b.add(WordClass::noun, uniform_index(rng, kLexiconSize[0]));
    const bool has_det = spec.uses("det") && uniform01(rng) < 0.5;
    const bool has_adj = spec.uses("amod") && uniform01(rng) < 0.35;
    const bool has_nmod = allow_nmod && spec.uses("nmod") && spec.uses("case") && uniform01(rng) < 0.15;
    int det = -1, adj = -1;
    if (has_det) {
        det = b.add(WordClass::det, uniform_index(rng, kLexiconSize[3]));
        b.words[det].head = noun;
        b.words[det].deprel = "det";
    }
    if (has_adj) {
        adj = b.add(WordClass::adj, uniform_index(rng, kLexiconSize[2]));
        b.words[adj].head = noun;
        b.words[adj].deprel = "amod";
    }
    Phrase nmod;
    if (has_nmod) {
        nmod = make_pp(b, rng, spec, order);
        b.words[nmod.head].head = noun;
        b.words[nmod.head].deprel = "nmod";
    }
    Phrase np;
    np.head = noun;
    auto push = [&](int w) {
        if (w >= 0) np.order.push_back(w);
    };
    switch (order) {
        case WordOrder::SVO:  // det N adj (nmod)
            push(det);
            push(noun);
            push(adj);
            append(np, nmod);
            break;
        case WordOrder::SOV:  // (nmod) det adj N
            append(np, nmod);
            push(det);
            push(adj);
            push(noun);
            break;
        case WordOrder::VSO:  // N adj det (nmod)
            push(noun);
            push(adj);
            push(det);
            append(np, nmod);
            break;
    }
    return np;
}

}  // namespace

std::string_view to_string(WordOrder order) {
    switch (order) {
        case WordOrder::SVO: return "SVO";
        case WordOrder::SOV: return "SOV";
        case WordOrder::VSO: return "VSO";
    }
    return "SVO";
}

std::string_view to_string(Adposition adposition) { return adposition == Adposition::pre ? "pre" : "post"; }

const std::vector<std::string>& toy_label_universe() {
    static const std::vector<std::string> labels = {"root", "nsubj", "obj", "det",    "amod",
                                                    "case", "obl",   "nmod", "advmod", "aux"};
    return labels;
}

void ToyGrammarSpec::validate() const {
    if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) {
        throw UsageError("noise_rate must lie in [0, 1], got " + std::to_string(noise_rate));
    }
    if (label_inventory.empty()) throw UsageError("toy grammar label inventory is empty");
    const auto& universe = toy_label_universe();
    for (const auto& l : label_inventory) {
        if (std::find(universe.begin(), universe.end(), l) == universe.end()) {
            throw UsageError("toy grammar cannot produce label '" + l + "'");
        }
    }
}

bool ToyGrammarSpec::uses(std::string_view label) const {
    return std::find(label_inventory.begin(), label_inventory.end(), label) != label_inventory.end();
}

ToyGrammarSpec parse_toy_spec(std::string_view text) {
    ToyGrammarSpec spec;
    std::istringstream in{std::string(text)};
    std::string raw;
    long line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw FormatError("expected key = value", line_no);
        const std::string key(trim(line.substr(0, eq)));
        const std::string value(trim(line.substr(eq + 1)));
        try {
            if (key == "language") {
                spec.language = value;
            } else if (key == "word_order") {
                if (value == "SVO") spec.word_order = WordOrder::SVO;
                else if (value == "SOV") spec.word_order = WordOrder::SOV;
                else if (value == "VSO") spec.word_order = WordOrder::VSO;
                else throw FormatError("word_order must be SVO, SOV or VSO", line_no);
            } else if (key == "adposition") {
                if (value == "pre") spec.adposition = Adposition::pre;
                else if (value == "post") spec.adposition = Adposition::post;
                else throw FormatError("adposition must be pre or post", line_no);
            } else if (key == "vocab_seed") {
                spec.vocab_seed = std::stoull(value);
            } else if (key == "labels") {
                spec.label_inventory.clear();
                std::istringstream parts(value);
                std::string item;
                while (std::getline(parts, item, ',')) {
                    auto t = trim(item);
                    if (!t.empty()) spec.label_inventory.emplace_back(t);
                }
            } else if (key == "noise_rate") {
                spec.noise_rate = std::stod(value);
            } else {
                throw FormatError("unknown toy grammar key '" + key + "'", line_no);
            }
        } catch (const std::invalid_argument&) {
            throw FormatError("invalid value for " + key, line_no);
        } catch (const std::out_of_range&) {
            throw FormatError("value out of range for " + key, line_no);
        }
    }
    spec.validate();
    return spec;
}

ToyGrammarSpec read_toy_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open toy grammar file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_toy_spec(buf.str());
}

Treebank gen_toy_treebank(const ToyGrammarSpec& spec, std::size_t n_sentences, std::uint64_t seed, Split split) {
    spec.validate();
    const Lexicon lexicon(spec.vocab_seed);
    auto rng = make_rng(seed, 0x7e5);

    Treebank tb;
    tb.language = spec.language;
    tb.split = split;
    tb.sentences.reserve(n_sentences);

    for (std::size_t s = 0; s < n_sentences; ++s) {
        Builder b;
        WordOrder order = spec.word_order;
        // One draw per sentence regardless of noise_rate keeps the structure
        // stream aligned across grammars.
        const double noise_draw = uniform01(rng);
        const auto alt_order = static_cast<WordOrder>(uniform_index(rng, 3));
        if (noise_draw < spec.noise_rate) order = alt_order;

        const int verb = b.add(WordClass::verb, uniform_index(rng, kLexiconSize[1]));
        b.words[verb].deprel = "root";

        Phrase subj, obj, obl;
        int adv = -1, aux = -1;
        const bool has_subj = spec.uses("nsubj");
        const bool has_obj = spec.uses("obj") && uniform01(rng) < 0.75;
        const bool has_obl = spec.uses("obl") && spec.uses("case") && uniform01(rng) < 0.35;
        const bool has_adv = spec.uses("advmod") && uniform01(rng) < 0.3;
        const bool has_aux = spec.uses("aux") && uniform01(rng) < 0.25;
        if (has_subj) {
            subj = make_np(b, rng, spec, order, false);
            b.words[subj.head].head = verb;
            b.words[subj.head].deprel = "nsubj";
        }
        if (has_obj) {
            obj = make_np(b, rng, spec, order, true);
            b.words[obj.head].head = verb;
            b.words[obj.head].deprel = "obj";
        }
        if (has_obl) {
            obl = make_pp(b, rng, spec, order);
            b.words[obl.head].head = verb;
            b.words[obl.head].deprel = "obl";
        }
        if (has_adv) {
            adv = b.add(WordClass::adv, uniform_index(rng, kLexiconSize[5]));
            b.words[adv].head = verb;
            b.words[adv].deprel = "advmod";
        }
        if (has_aux) {
            aux = b.add(WordClass::aux, uniform_index(rng, kLexiconSize[6]));
            b.words[aux].head = verb;
            b.words[aux].deprel = "aux";
        }

        Phrase clause;
        auto word = [&](int w) {
            if (w >= 0) clause.order.push_back(w);
        };
        switch (order) {
            case WordOrder::SVO:  // S aux V O obl adv
                append(clause, subj);
                word(aux);
                word(verb);
                append(clause, obj);
                append(clause, obl);
                word(adv);
                break;
            case WordOrder::SOV:  // S obl O adv V aux
                append(clause, subj);
                append(clause, obl);
                append(clause, obj);
                word(adv);
                word(verb);
                word(aux);
                break;
            case WordOrder::VSO:  // aux V S O obl adv
                word(aux);
                word(verb);
                append(clause, subj);
                append(clause, obj);
                append(clause, obl);
                word(adv);
                break;
        }

        std::vector<int> position(b.words.size(), 0);
        for (std::size_t i = 0; i < clause.order.size(); ++i) position[clause.order[i]] = static_cast<int>(i) + 1;

        Sentence sent;
        sent.language = spec.language;
        sent.source_id = spec.language + "-" + std::string(to_string(split)) + "-" + std::to_string(s + 1);
        for (std::size_t i = 0; i < clause.order.size(); ++i) {
            const auto& w = b.words[clause.order[i]];
            Token t;
            t.index = static_cast<int>(i) + 1;
            t.form = lexicon.form(w.cls, w.lex);
            t.head = w.head < 0 ? 0 : position[w.head];
            t.deprel = w.deprel;
            sent.tokens.push_back(std::move(t));
        }
        tb.sentences.push_back(std::move(sent));
    }
    return tb;
}

std::uint64_t toy_split_seed(std::string_view language, std::uint64_t seed, Split split) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (const char c : language) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h ^ (seed * 3 + static_cast<std::uint64_t>(split));
}

std::vector<double> toy_typology_vector(const ToyGrammarSpec& spec) {
    std::vector<double> v(5, 0.0);
    v[static_cast<std::size_t>(spec.word_order)] = 1.0;
    v[3 + (spec.adposition == Adposition::pre ? 0 : 1)] = 1.0;
    for (const auto& label : toy_label_universe()) v.push_back(spec.uses(label) || label == "root" ? 1.0 : 0.0);
    return v;
}

}  // namespace snp
