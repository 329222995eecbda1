#include "doctest.h"
#include "snp/checkpoint.hpp"
#include "snp/errors.hpp"
#include "snp/toy_grammar.hpp"

using namespace snp;

TEST_CASE("checkpoint round trip keeps parameters, vocabularies and masks") {
    ToyGrammarSpec spec;
    const auto tb = gen_toy_treebank(spec, 10, 4);
    EncoderConfig enc;
    enc.n_layers = 2;
    enc.n_heads = 2;
    enc.d_model = 4;
    enc.d_ff = 6;
    Checkpoint ck;
    ck.model = make_parser_model(enc, 5, 3, {tb});
    ck.model.training_labels = build_label_vocab({tb});
    HeadMask head{"aa", Eigen::MatrixXd::Ones(2, 2)};
    head.bits(1, 0) = 0;
    ck.masks["aa"] = LanguageMask::fixed(head);
    ck.masks["bb"] = LanguageMask::dynamic(SoftMask::from_static(head, 0.5, 0.02));
    auto pm = ParamMask::all_enabled("cc", *ck.model.state.layout);
    ck.masks["cc"] = LanguageMask::fixed(pm);
    ck.metadata["mode"] = "mtl";

    const auto bytes = serialize_checkpoint(ck);
    CHECK(bytes.substr(0, 8) == "SNPCKPT1");
    const auto back = deserialize_checkpoint(bytes);
    CHECK(back.model.state.values == ck.model.state.values);
    CHECK(back.model.words.items() == ck.model.words.items());
    CHECK(back.model.labels.items() == ck.model.labels.items());
    CHECK(back.model.training_labels.labels == ck.model.training_labels.labels);
    CHECK(back.model.training_labels.counts == ck.model.training_labels.counts);
    CHECK(back.masks.at("aa").head == head);
    CHECK(back.masks.at("bb").soft.weights == ck.masks["bb"].soft.weights);
    CHECK(back.masks.at("bb").head == ck.masks["bb"].head);
    CHECK(back.masks.at("cc").param.values == pm.values);
    CHECK(back.metadata == ck.metadata);
    CHECK(serialize_checkpoint(back) == bytes);

    CHECK_THROWS_AS(deserialize_checkpoint("NOTACKPT"), FormatError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
    CHECK_THROWS_AS(read_checkpoint("/nonexistent/model.ckpt"), UsageError);
}
