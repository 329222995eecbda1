#include "snp/treebank.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "snp/errors.hpp"

namespace snp {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find('\t', start);
        if (pos == std::string_view::npos) {
            cols.push_back(line.substr(start));
            return cols;
        }
        cols.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

bool parse_int(std::string_view text, int& out) {
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

void finish_sentence(Sentence& sentence, std::size_t ordinal, long first_line, Treebank& out) {
    if (sentence.tokens.empty()) return;
    const int n = static_cast<int>(sentence.tokens.size());
    const std::string name = sentence.source_id.empty()
                                 ? "sentence " + std::to_string(ordinal)
                                 : "sentence " + std::to_string(ordinal) + " (" + sentence.source_id + ")";
    for (const auto& tok : sentence.tokens) {
        if (tok.head < 0 || tok.head > n) {
            throw StructuralError(name + ": token " + std::to_string(tok.index) + " has head " +
                                  std::to_string(tok.head) + " outside [0, " + std::to_string(n) + "]");
        }
        if (tok.head == tok.index) {
            throw StructuralError(name + ": token " + std::to_string(tok.index) + " is its own head");
        }
    }
    const auto heads = sentence.heads();
    if (root_children(heads) != 1) {
        throw StructuralError(name + ": expected exactly one root, found " +
                              std::to_string(root_children(heads)));
    }
    if (!is_tree(heads)) throw StructuralError(name + ": head assignment contains a cycle");
    if (sentence.source_id.empty()) {
        sentence.source_id = out.language + "-" + std::string(to_string(out.split)) + "-" +
                             std::to_string(ordinal) + "@" + std::to_string(first_line);
    }
    out.sentences.push_back(std::move(sentence));
}

}  // namespace

std::vector<int> Sentence::heads() const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(t.head);
    return out;
}

std::string_view to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::dev: return "dev";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "dev") return Split::dev;
    if (text == "test") return Split::test;
    throw UsageError("unknown split '" + std::string(text) + "' (expected train, dev or test)");
}

std::size_t Treebank::token_count() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.size();
    return n;
}

bool is_tree(const std::vector<int>& heads) {
    const int n = static_cast<int>(heads.size());
    std::vector<std::vector<int>> children(n + 1);
    for (int d = 1; d <= n; ++d) {
        const int h = heads[d - 1];
        if (h < 0 || h > n || h == d) return false;
        children[h].push_back(d);
    }
    std::vector<char> seen(n + 1, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int visited = 0;
    while (!stack.empty()) {
        const int node = stack.back();
        stack.pop_back();
        for (int c : children[node]) {
            if (seen[c]) return false;
            seen[c] = 1;
            ++visited;
            stack.push_back(c);
        }
    }
    return visited == n;
}

int root_children(const std::vector<int>& heads) {
    int count = 0;
    for (int h : heads) count += (h == 0);
    return count;
}

Treebank parse_conllu(std::string_view text, const std::string& language, Split split) {
    Treebank out;
    out.language = language;
    out.split = split;

    Sentence current;
    current.language = language;
    long line_no = 0;
    long first_line = 0;
    std::size_t ordinal = 0;
    std::size_t pos = 0;

    auto flush = [&] {
        if (!current.tokens.empty()) {
            ++ordinal;
            finish_sentence(current, ordinal, first_line, out);
        }
        current = Sentence{};
        current.language = language;
    };

    while (pos <= text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

        if (line.empty()) {
            flush();
            if (end == text.size()) break;
            continue;
        }
        if (line.front() == '#') {
            constexpr std::string_view key = "# sent_id = ";
            if (line.substr(0, key.size()) == key) current.source_id = std::string(line.substr(key.size()));
            if (end == text.size()) break;
            continue;
        }

        const auto cols = split_tabs(line);
        if (cols.size() != 10) {
            throw FormatError("expected 10 tab-separated columns, found " + std::to_string(cols.size()),
                              line_no);
        }
        const auto id = cols[0];
        if (id.find('-') != std::string_view::npos || id.find('.') != std::string_view::npos) {
            if (end == text.size()) break;
            continue;
        }
        Token tok;
        if (!parse_int(id, tok.index) || tok.index < 1) {
            throw FormatError("invalid token ID '" + std::string(id) + "'", line_no);
        }
        if (tok.index != static_cast<int>(current.tokens.size()) + 1) {
            throw FormatError("token IDs must be consecutive from 1, got " + std::string(id), line_no);
        }
        if (!parse_int(cols[6], tok.head)) {
            throw FormatError("invalid HEAD '" + std::string(cols[6]) + "'", line_no);
        }
        tok.form = std::string(cols[1]);
        tok.deprel = std::string(cols[7]);
        if (tok.deprel.empty() || tok.deprel == "_") throw FormatError("empty DEPREL", line_no);
        tok.extra = {std::string(cols[2]), std::string(cols[3]), std::string(cols[4]),
                     std::string(cols[5]), std::string(cols[8]), std::string(cols[9])};
        if (current.tokens.empty()) first_line = line_no;
        current.tokens.push_back(std::move(tok));
        if (end == text.size()) break;
    }
    flush();
    return out;
}

Treebank read_conllu(const std::string& path, const std::string& language, Split split) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open treebank file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_conllu(buf.str(), language, split);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    } catch (const StructuralError& e) {
        throw StructuralError(path + ": " + e.what());
    }
}

std::string to_conllu(const Treebank& treebank) {
    std::ostringstream out;
    for (const auto& s : treebank.sentences) {
        out << "# sent_id = " << s.source_id << '\n';
        for (const auto& t : s.tokens) {
            auto extra = [&](std::size_t i) -> const std::string& {
                static const std::string blank = "_";
                return i < t.extra.size() ? t.extra[i] : blank;
            };
            out << t.index << '\t' << t.form << '\t' << extra(0) << '\t' << extra(1) << '\t' << extra(2)
                << '\t' << extra(3) << '\t' << t.head << '\t' << t.deprel << '\t' << extra(4) << '\t'
                << extra(5) << '\n';
        }
        out << '\n';
    }
    return out.str();
}

void write_conllu(const std::string& path, const Treebank& treebank) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    out << to_conllu(treebank);
    if (!out) throw FormatError("write failed: " + path);
}

int LabelVocab::index_of(const std::string& label) const {
    const auto it = lookup_.find(label);
    return it == lookup_.end() ? -1 : it->second;
}

std::int64_t LabelVocab::total() const {
    std::int64_t t = 0;
    for (auto c : counts) t += c;
    return t;
}

void LabelVocab::add(const std::string& label, std::int64_t count) {
    const auto it = lookup_.find(label);
    if (it != lookup_.end()) {
        counts[it->second] += count;
        return;
    }
    lookup_.emplace(label, static_cast<int>(labels.size()));
    labels.push_back(label);
    counts.push_back(count);
}

LabelVocab build_label_vocab(const std::vector<Treebank>& treebanks) {
    if (treebanks.empty()) throw UsageError("build_label_vocab needs at least one treebank");
    LabelVocab vocab;
    for (const auto& tb : treebanks)
        for (const auto& s : tb.sentences)
            for (const auto& t : s.tokens) vocab.add(t.deprel);
    return vocab;
}

std::string_view to_string(Rarity rarity) {
    switch (rarity) {
        case Rarity::seen: return "seen";
        case Rarity::rare: return "rare";
        case Rarity::unseen: return "unseen";
    }
    return "seen";
}

std::map<std::string, Rarity> classify_label_rarity(const LabelVocab& vocab,
                                                    const std::set<std::string>& test_labels) {
    const auto total = vocab.total();
    if (total <= 0) throw UsageError("label vocabulary has no training instances");
    std::map<std::string, Rarity> out;
    for (const auto& label : test_labels) {
        const int idx = vocab.index_of(label);
        if (idx < 0) {
            out[label] = Rarity::unseen;
        } else {
            const double share = static_cast<double>(vocab.counts[idx]) / static_cast<double>(total);
            out[label] = share < kRareLabelShare ? Rarity::rare : Rarity::seen;
        }
    }
    return out;
}

EpochSampler::EpochSampler(std::size_t population, std::uint64_t seed, bool without_replacement)
    : population_(population), without_replacement_(without_replacement), rng_(make_rng(seed, 0x5a4d)) {
    if (population_ == 0) throw UsageError("cannot sample from an empty population");
    order_.resize(population_);
    reshuffle();
}

void EpochSampler::reshuffle() {
    for (std::size_t i = 0; i < population_; ++i) order_[i] = i;
    shuffle(order_, rng_);
    cursor_ = 0;
}

std::vector<std::size_t> EpochSampler::draw(std::size_t n) {
    std::vector<std::size_t> out;
    out.reserve(n);
    if (!without_replacement_) {
        for (std::size_t i = 0; i < n; ++i) out.push_back(uniform_index(rng_, population_));
        return out;
    }
    if (n > population_) {
        throw UsageError("cannot draw " + std::to_string(n) + " items without replacement from " +
                         std::to_string(population_));
    }
    // A batch never straddles an epoch boundary, so it never repeats an item.
    if (cursor_ + n > population_) {
        reshuffle();
        ++epoch_;
    }
    for (std::size_t i = 0; i < n; ++i) out.push_back(order_[cursor_++]);
    return out;
}

std::vector<Sentence> sample_sentences(const Treebank& treebank, std::size_t n, std::uint64_t seed,
                                       bool without_replacement) {
    if (without_replacement && n > treebank.sentences.size()) {
        throw UsageError("requested " + std::to_string(n) + " sentences but treebank has " +
                         std::to_string(treebank.sentences.size()));
    }
    EpochSampler sampler(treebank.sentences.size(), seed, without_replacement);
    std::vector<Sentence> out;
    out.reserve(n);
    for (auto idx : sampler.draw(n)) out.push_back(treebank.sentences[idx]);
    return out;
}

}  // namespace snp
