#include <algorithm>
#include <functional>
#include <set>

#include "doctest.h"
#include "snp/errors.hpp"
#include "snp/language_vectors.hpp"
#include "snp/random.hpp"
#include "snp/toy_grammar.hpp"
#include "snp/treebank.hpp"

using namespace snp;

namespace {

// Independent check: recursive DFS from the root must reach each token once.
bool dfs_visits_all_once(const Sentence& s) {
    const int n = static_cast<int>(s.size());
    std::vector<int> visits(n + 1, 0);
    std::function<void(int, int)> walk = [&](int node, int depth) {
        if (depth > n + 1) return;
        ++visits[node];
        for (const auto& t : s.tokens)
            if (t.head == node) walk(t.index, depth + 1);
    };
    walk(0, 0);
    for (int i = 1; i <= n; ++i)
        if (visits[i] != 1) return false;
    return true;
}

bool same_core(const Treebank& a, const Treebank& b) {
    if (a.sentences.size() != b.sentences.size()) return false;
    for (std::size_t i = 0; i < a.sentences.size(); ++i) {
        const auto& x = a.sentences[i].tokens;
        const auto& y = b.sentences[i].tokens;
        if (x.size() != y.size()) return false;
        for (std::size_t t = 0; t < x.size(); ++t) {
            if (x[t].index != y[t].index || x[t].form != y[t].form || x[t].head != y[t].head ||
                x[t].deprel != y[t].deprel)
                return false;
        }
    }
    return true;
}

const std::string kFixtures = SNP_FIXTURE_DIR;

}  // namespace

TEST_CASE("parse_conllu reads a minimal two-token sentence") {
    const auto tb = parse_conllu("1\tShe\t_\t_\t_\t_\t2\tnsubj\t_\t_\n2\tleft\t_\t_\t_\t_\t0\troot\t_\t_\n", "en",
                                 Split::train);
    REQUIRE(tb.sentences.size() == 1);
    CHECK(tb.sentences[0].size() == 2);
    CHECK(tb.sentences[0].tokens[0].head == 2);
    CHECK(tb.sentences[0].tokens[1].deprel == "root");
    CHECK(tb.sentences[0].language == "en");
}

TEST_CASE("parse_conllu rejects a 9-column token line with its line number") {
    const std::string text = "# c\n1\tShe\t_\t_\t_\t_\t2\tnsubj\t_\n";
    try {
        parse_conllu(text, "en", Split::train);
        FAIL("expected a FormatError");
    } catch (const FormatError& e) {
        CHECK(e.line() == 2);
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("parse_conllu rejects cycles and multiple roots") {
    const std::string cyclic =
        "1\ta\t_\t_\t_\t_\t2\tdep\t_\t_\n2\tb\t_\t_\t_\t_\t1\tdep\t_\t_\n3\tc\t_\t_\t_\t_\t0\troot\t_\t_\n";
    CHECK_THROWS_AS(parse_conllu(cyclic, "x", Split::dev), StructuralError);
    const std::string two_roots = "1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n2\tb\t_\t_\t_\t_\t0\troot\t_\t_\n";
    CHECK_THROWS_AS(parse_conllu(two_roots, "x", Split::dev), StructuralError);
    const std::string self_loop = "1\ta\t_\t_\t_\t_\t1\tdep\t_\t_\n";
    CHECK_THROWS_AS(parse_conllu(self_loop, "x", Split::dev), StructuralError);
}

TEST_CASE("five-sentence fixture skips the multiword range line") {
    const auto tb = read_conllu(kFixtures + "/five_sentences.conllu", "mix", Split::test);
    REQUIRE(tb.sentences.size() == 5);
    const std::vector<std::size_t> hand_counts{3, 3, 4, 1, 6};
    for (std::size_t i = 0; i < 5; ++i) CHECK(tb.sentences[i].size() == hand_counts[i]);
    CHECK(tb.sentences[2].tokens[1].form == "a");
    CHECK(tb.sentences[2].source_id == "s3");
    for (const auto& s : tb.sentences) CHECK(dfs_visits_all_once(s));
}

TEST_CASE("CoNLL-U round trip preserves ID/FORM/HEAD/DEPREL") {
    const auto tb = read_conllu(kFixtures + "/five_sentences.conllu", "mix", Split::test);
    const auto again = parse_conllu(to_conllu(tb), "mix", Split::test);
    CHECK(same_core(tb, again));
    CHECK(to_conllu(again) == to_conllu(tb));
}

TEST_CASE("build_label_vocab") {
    const auto one = parse_conllu("1\tShe\t_\t_\t_\t_\t2\tnsubj\t_\t_\n2\tleft\t_\t_\t_\t_\t0\troot\t_\t_\n", "en",
                                  Split::train);
    const auto v = build_label_vocab({one});
    CHECK(v.labels == std::vector<std::string>{"nsubj", "root"});
    CHECK(v.counts == std::vector<std::int64_t>{1, 1});

    const auto twice = build_label_vocab({one, one});
    CHECK(twice.labels == v.labels);
    CHECK(twice.counts == std::vector<std::int64_t>{2, 2});

    CHECK_THROWS_AS(build_label_vocab({}), UsageError);

    // Tally computed independently (collections.Counter over the fixture).
    const auto hundred = read_conllu(kFixtures + "/hundred_tokens.conllu", "h", Split::train);
    CHECK(hundred.token_count() == 100);
    const auto hv = build_label_vocab({hundred});
    CHECK(hv.labels == std::vector<std::string>{"nsubj", "advmod", "root", "obj", "amod", "det", "case"});
    CHECK(hv.counts == std::vector<std::int64_t>{13, 19, 21, 10, 11, 14, 12});
    CHECK(hv.total() == 100);
    for (std::size_t i = 0; i < hv.size(); ++i) CHECK(hv.index_of(hv.labels[i]) == static_cast<int>(i));
}

TEST_CASE("classify_label_rarity uses a strict 0.1% boundary") {
    LabelVocab v;
    v.add("common", 9981);
    v.add("rare9", 9);
    v.add("edge10", 10);
    REQUIRE(v.total() == 10000);
    const auto r = classify_label_rarity(v, {"common", "rare9", "edge10", "never"});
    CHECK(r.at("common") == Rarity::seen);
    CHECK(r.at("rare9") == Rarity::rare);
    CHECK(r.at("edge10") == Rarity::seen);
    CHECK(r.at("never") == Rarity::unseen);

    LabelVocab empty;
    CHECK_THROWS_AS(classify_label_rarity(empty, {"x"}), UsageError);
}

TEST_CASE("classify_label_rarity partitions its input") {
    auto rng = make_rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        LabelVocab v;
        std::set<std::string> test;
        for (int i = 0; i < 30; ++i) {
            const auto name = "l" + std::to_string(i);
            if (uniform01(rng) < 0.7) v.add(name, static_cast<std::int64_t>(uniform_index(rng, 3000)) + 1);
            if (uniform01(rng) < 0.6) test.insert(name);
        }
        if (v.size() == 0) continue;
        const auto r = classify_label_rarity(v, test);
        CHECK(r.size() == test.size());
        for (const auto& l : test) CHECK(r.count(l) == 1);
    }
}

TEST_CASE("sample_sentences") {
    const auto tb = gen_toy_treebank(ToyGrammarSpec{}, 100, 11);
    const auto all = sample_sentences(tb, 100, 5, true);
    std::vector<std::string> ids, orig;
    for (const auto& s : all) ids.push_back(s.source_id);
    for (const auto& s : tb.sentences) orig.push_back(s.source_id);
    std::sort(ids.begin(), ids.end());
    std::sort(orig.begin(), orig.end());
    CHECK(ids == orig);

    const auto a = sample_sentences(tb, 10, 1, true);
    const auto b = sample_sentences(tb, 10, 1, true);
    const auto c = sample_sentences(tb, 10, 2, true);
    bool same_ab = true, same_ac = true;
    for (std::size_t i = 0; i < 10; ++i) {
        same_ab &= a[i].source_id == b[i].source_id;
        same_ac &= a[i].source_id == c[i].source_id;
    }
    CHECK(same_ab);
    CHECK_FALSE(same_ac);

    CHECK_THROWS_AS(sample_sentences(tb, 101, 1, true), UsageError);
    CHECK(sample_sentences(tb, 150, 1, false).size() == 150);
}

TEST_CASE("EpochSampler draws are disjoint within an epoch") {
    EpochSampler sampler(100, 9);
    std::set<std::size_t> seen;
    for (int i = 0; i < 5; ++i)
        for (auto idx : sampler.draw(20)) CHECK(seen.insert(idx).second);
    CHECK(seen.size() == 100);
    CHECK(sampler.epoch() == 0);
    sampler.draw(20);
    CHECK(sampler.epoch() == 1);
}

TEST_CASE("toy SVO grammar orders subject, verb, object") {
    ToyGrammarSpec spec;
    spec.word_order = WordOrder::SVO;
    const auto tb = gen_toy_treebank(spec, 200, 4);
    int with_obj = 0;
    for (const auto& s : tb.sentences) {
        int subj = -1, verb = -1, obj = -1;
        for (const auto& t : s.tokens) {
            if (t.deprel == "root") verb = t.index;
        }
        for (const auto& t : s.tokens) {
            if (t.head == verb && t.deprel == "nsubj") subj = t.index;
            if (t.head == verb && t.deprel == "obj") obj = t.index;
        }
        REQUIRE(verb > 0);
        REQUIRE(subj > 0);
        CHECK(subj < verb);
        if (obj > 0) {
            ++with_obj;
            CHECK(verb < obj);
        }
    }
    CHECK(with_obj > 0);
}

TEST_CASE("toy adposition side follows the grammar") {
    for (auto side : {Adposition::pre, Adposition::post}) {
        ToyGrammarSpec spec;
        spec.adposition = side;
        const auto tb = gen_toy_treebank(spec, 100, 8);
        int cases = 0;
        for (const auto& s : tb.sentences)
            for (const auto& t : s.tokens)
                if (t.deprel == "case") {
                    ++cases;
                    CHECK((side == Adposition::pre ? t.index < t.head : t.index > t.head));
                }
        CHECK(cases > 0);
    }
}

TEST_CASE("toy treebanks are deterministic and self-validating") {
    ToyGrammarSpec spec;
    spec.word_order = WordOrder::VSO;
    spec.noise_rate = 0.0;
    const auto a = gen_toy_treebank(spec, 50, 21);
    const auto b = gen_toy_treebank(spec, 50, 21);
    CHECK(to_conllu(a) == to_conllu(b));

    for (auto order : {WordOrder::SVO, WordOrder::SOV, WordOrder::VSO}) {
        spec.word_order = order;
        spec.noise_rate = 0.3;
        const auto tb = gen_toy_treebank(spec, 80, 5);
        const auto reparsed = parse_conllu(to_conllu(tb), tb.language, Split::train);
        CHECK(same_core(tb, reparsed));
        for (const auto& s : reparsed.sentences) CHECK(dfs_visits_all_once(s));
    }
}

TEST_CASE("vocab_seed changes forms but not structure") {
    ToyGrammarSpec x;
    x.word_order = WordOrder::SOV;
    x.vocab_seed = 1;
    ToyGrammarSpec y = x;
    y.vocab_seed = 2;
    const auto a = gen_toy_treebank(x, 40, 3);
    const auto b = gen_toy_treebank(y, 40, 3);
    int differing_forms = 0;
    for (std::size_t i = 0; i < 40; ++i) {
        REQUIRE(a.sentences[i].size() == b.sentences[i].size());
        for (std::size_t t = 0; t < a.sentences[i].size(); ++t) {
            CHECK(a.sentences[i].tokens[t].head == b.sentences[i].tokens[t].head);
            CHECK(a.sentences[i].tokens[t].deprel == b.sentences[i].tokens[t].deprel);
            differing_forms += a.sentences[i].tokens[t].form != b.sentences[i].tokens[t].form;
        }
    }
    CHECK(differing_forms > 0);
}

TEST_CASE("toy grammar config and typology vectors") {
    const auto spec = parse_toy_spec(
        "# toy\nlanguage = xx\nword_order = SOV\nadposition = post\nvocab_seed = 9\n"
        "labels = root, nsubj, obj, case, obl\nnoise_rate = 0.1\n");
    CHECK(spec.language == "xx");
    CHECK(spec.word_order == WordOrder::SOV);
    CHECK(spec.adposition == Adposition::post);
    CHECK(spec.vocab_seed == 9);
    CHECK(spec.label_inventory.size() == 5);
    CHECK(spec.noise_rate == doctest::Approx(0.1));
    CHECK_THROWS_AS(parse_toy_spec("noise_rate = 1.5\n"), UsageError);
    CHECK_THROWS_AS(parse_toy_spec("colour = blue\n"), FormatError);
    CHECK_THROWS_AS(parse_toy_spec("labels = \n"), UsageError);

    ToyGrammarSpec svo_pre, svo_post, sov_post;
    svo_post.adposition = Adposition::post;
    sov_post.word_order = WordOrder::SOV;
    sov_post.adposition = Adposition::post;
    const auto a = toy_typology_vector(svo_pre);
    const auto b = toy_typology_vector(svo_post);
    const auto c = toy_typology_vector(sov_post);
    CHECK(cosine_similarity(a, b) > cosine_similarity(a, c));
    CHECK(cosine_similarity(b, c) > cosine_similarity(a, c));
}

TEST_CASE("load_language_vectors") {
    const auto langs = parse_language_vectors("lang,f1,f2,f3\nen,1,0,0.5\nde,0,1,2\n");
    REQUIRE(langs.size() == 2);
    CHECK(langs.at("en").typo_vector == std::vector<double>{1, 0, 0.5});
    CHECK(langs.at("de").typo_vector.size() == 3);

    try {
        parse_language_vectors("lang,f1,f2,f3\nen,1,0\n");
        FAIL("ragged row accepted");
    } catch (const FormatError& e) {
        CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(parse_language_vectors("lang,f1\nen,abc\n"), FormatError);
    CHECK_THROWS_AS(parse_language_vectors("lang,f1\nen,\n"), FormatError);
    try {
        parse_language_vectors("lang,f1\nen,1\nfr,2\nen,3\n");
        FAIL("duplicate accepted");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("'en'") != std::string::npos);
    }
    const auto again = parse_language_vectors(format_language_vectors(langs));
    CHECK(again.at("en").typo_vector == langs.at("en").typo_vector);
}
