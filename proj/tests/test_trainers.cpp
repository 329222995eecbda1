#include <cmath>
#include <set>

#include "doctest.h"
#include "snp/errors.hpp"
#include "snp/toy_grammar.hpp"
#include "snp/trainers.hpp"

using namespace snp;

namespace {

EncoderConfig tiny_encoder() {
    EncoderConfig e;
    e.n_layers = 2;
    e.n_heads = 2;
    e.d_model = 4;
    e.d_ff = 6;
    e.seed = 5;
    return e;
}

struct TwoLanguages {
    std::map<std::string, Treebank> train;
    ParserModel model;
};

TwoLanguages two_languages(std::size_t n = 30) {
    ToyGrammarSpec a;
    a.language = "aa";
    ToyGrammarSpec b;
    b.language = "bb";
    b.word_order = WordOrder::SOV;
    b.adposition = Adposition::post;
    TwoLanguages s;
    s.train["aa"] = gen_toy_treebank(a, n, 1);
    s.train["bb"] = gen_toy_treebank(b, n, 2);
    s.model = make_parser_model(tiny_encoder(), 6, 4, {s.train["aa"], s.train["bb"]});
    return s;
}

TrainConfig sgd_config(int iterations) {
    TrainConfig cfg;
    cfg.stage2_iterations = iterations;
    cfg.batch_size = 4;
    cfg.optimizer = OptimizerKind::sgd;
    cfg.schedule = Schedule::constant;
    cfg.weight_decay = 0.0;
    cfg.encoder_lr = 0.05;
    cfg.classifier_lr = 0.05;
    return cfg;
}

std::vector<const EncodedSentence*> pick(const std::vector<EncodedSentence>& data, const std::vector<std::size_t>& idx) {
    std::vector<const EncodedSentence*> out;
    for (auto i : idx) out.push_back(&data[i]);
    return out;
}

HeadMask mask_from_rows(const std::string& lang, std::initializer_list<double> row_major) {
    HeadMask m{lang, Eigen::MatrixXd(2, 2)};
    auto it = row_major.begin();
    for (int l = 0; l < 2; ++l)
        for (int h = 0; h < 2; ++h) m.bits(l, h) = *it++;
    return m;
}

}  // namespace

TEST_CASE("schedule warms up linearly then decays to zero") {
    const long total = 100;
    CHECK(schedule_factor(Schedule::cosine, 0, total, 0.1) == 0.0);
    CHECK(schedule_factor(Schedule::cosine, 5, total, 0.1) == doctest::Approx(0.5));
    CHECK(schedule_factor(Schedule::cosine, 10, total, 0.1) == doctest::Approx(1.0));
    CHECK(schedule_factor(Schedule::cosine, total - 1, total, 0.1) == doctest::Approx(0.0).epsilon(1e-12));
    double prev = 2.0;
    for (long s = 10; s < total; ++s) {
        const double f = schedule_factor(Schedule::cosine, s, total, 0.1);
        CHECK(f >= 0.0);
        CHECK(f <= prev);
        prev = f;
    }
    for (long s = 0; s < 10; ++s)
        CHECK(schedule_factor(Schedule::cosine, s, total, 0.1) < schedule_factor(Schedule::cosine, s + 1, total, 0.1));
    CHECK(schedule_factor(Schedule::constant, 37, total, 0.1) == 1.0);
    CHECK_THROWS_AS(schedule_factor(Schedule::cosine, 0, total, 1.0), UsageError);
    CHECK_THROWS_AS(parse_schedule("linear"), UsageError);
    CHECK_THROWS_AS(parse_optimizer("rmsprop"), UsageError);
}

TEST_CASE("optimizer leaves skipped entries and their moments untouched") {
    OptimizerConfig cfg;
    cfg.weight_decay = 0.1;
    Optimizer opt(cfg, 3);
    Eigen::VectorXd p(3), g(3);
    p << 1.0, -2.0, 0.5;
    g << 0.3, 0.3, -0.7;
    const std::vector<std::uint8_t> skip{0, 1, 0};
    for (int i = 0; i < 5; ++i) opt.step(p, g, 0.01, &skip);
    CHECK(p[1] == -2.0);
    CHECK(opt.first_moment()[1] == 0.0);
    CHECK(opt.second_moment()[1] == 0.0);
    CHECK(p[0] != 1.0);

    // First Adam step moves every entry by about lr in the direction of -sign(g), plus decay.
    Optimizer fresh(cfg, 3);
    Eigen::VectorXd q(3);
    q << 1.0, -2.0, 0.5;
    fresh.step(q, g, 0.01);
    CHECK(q[0] == doctest::Approx(1.0 - 0.01 * (1.0 + 0.1 * 1.0)).epsilon(1e-6));
    CHECK(q[2] == doctest::Approx(0.5 - 0.01 * (-1.0 + 0.1 * 0.5)).epsilon(1e-6));

    OptimizerConfig sgd;
    sgd.kind = OptimizerKind::sgd;
    Optimizer plain(sgd, 3);
    Eigen::VectorXd r(3);
    r << 1.0, -2.0, 0.5;
    plain.step(r, g, 0.5);
    CHECK(r[0] == doctest::Approx(0.85));
    CHECK(r[2] == doctest::Approx(0.85));
}

TEST_CASE("stage 1 with zero epochs leaves the model unchanged") {
    auto s = two_languages();
    const Eigen::VectorXd before = s.model.state.values;
    TrainConfig cfg;
    cfg.stage1_epochs = 0;
    const auto trace = train_stage1(s.model, s.train["aa"], cfg);
    CHECK(s.model.state.values == before);
    CHECK(trace.rows().empty());
}

TEST_CASE("stage 1 loss falls on a small treebank") {
    ToyGrammarSpec spec;
    spec.language = "aa";
    const auto tb = gen_toy_treebank(spec, 5, 9);
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        auto model = make_parser_model(tiny_encoder(), 6, 4, {tb});
        TrainConfig cfg;
        cfg.stage1_epochs = 20;
        cfg.batch_size = 5;
        cfg.encoder_lr = 3e-3;
        cfg.classifier_lr = 3e-3;
        cfg.seed = seed;
        const auto trace = train_stage1(model, tb, cfg);
        const auto losses = trace.select("epoch_loss");
        REQUIRE(losses.size() == 20);
        CHECK(losses.back().value < losses.front().value);
    }
}

TEST_CASE("gradual unfreezing keeps the encoder fixed during the first epoch") {
    auto s = two_languages();
    const Eigen::VectorXd before = s.model.state.values;
    TrainConfig cfg;
    cfg.stage1_epochs = 1;
    cfg.batch_size = 5;
    cfg.warmup_fraction = 0.0;
    cfg.gradual_unfreeze = true;
    train_stage1(s.model, s.train["aa"], cfg);
    bool classifier_moved = false;
    for (const auto& slot : s.model.state.layout->slots()) {
        const auto a = before.segment(slot.offset, slot.size());
        const auto b = s.model.state.values.segment(slot.offset, slot.size());
        if (is_encoder_group(slot.group)) {
            CHECK_MESSAGE(a == b, slot.name);
        } else if (slot.group == ParamGroup::classifier && a != b) {
            classifier_moved = true;
        }
    }
    CHECK(classifier_moved);
}

TEST_CASE("stage 2 with one all-ones mask matches unmasked training") {
    auto s = two_languages();
    std::map<std::string, Treebank> one{{"aa", s.train["aa"]}};
    TrainConfig cfg;
    cfg.stage2_iterations = 3;
    cfg.batch_size = 4;
    ParserModel plain = s.model, masked = s.model;
    MaskSet none;
    MaskSet ones{{"aa", LanguageMask::fixed(HeadMask::all_enabled("aa", tiny_encoder()))}};
    train_stage2(plain, one, none, cfg);
    train_stage2(masked, one, ones, cfg);
    CHECK(plain.state.values == masked.state.values);
}

TEST_CASE("stage 2 averages masked gradients across languages") {
    auto s = two_languages();
    // aa uses heads (0,0),(1,0); bb uses (0,1),(1,1).
    MaskSet masks{{"aa", LanguageMask::fixed(mask_from_rows("aa", {1, 0, 1, 0}))},
                  {"bb", LanguageMask::fixed(mask_from_rows("bb", {0, 1, 0, 1}))}};
    const auto& layout = *s.model.state.layout;
    const auto only_a = head_param_indices(layout, 0, 0);
    const auto only_b = head_param_indices(layout, 1, 1);
    auto cfg = sgd_config(2);
    int calls = 0;
    Eigen::VectorXd theta_before, update;
    const StepObserver obs = [&](const StepReport& rep) {
        ++calls;
        for (auto i : only_a) {
            CHECK(rep.grads.at("bb")[i] == 0.0);
            CHECK(rep.update_grad[i] == doctest::Approx(0.5 * rep.grads.at("aa")[i]).epsilon(1e-15));
        }
        for (auto i : only_b) CHECK(rep.grads.at("aa")[i] == 0.0);
        bool any = false;
        for (auto i : only_a) any = any || rep.grads.at("aa")[i] != 0.0;
        CHECK(any);
        theta_before = s.model.state.values;
        update = rep.update_grad;
    };
    train_stage2(s.model, s.train, masks, cfg, &obs);
    CHECK(calls == 2);
    for (auto i : only_a) CHECK(s.model.state.values[i] == theta_before[i] - 0.05 * update[i]);
}

TEST_CASE("stage 2 never updates heads that every language disables") {
    auto s = two_languages();
    MaskSet masks{{"aa", LanguageMask::fixed(mask_from_rows("aa", {1, 0, 1, 1}))},
                  {"bb", LanguageMask::fixed(mask_from_rows("bb", {0, 0, 1, 1}))}};
    const auto frozen = head_param_indices(*s.model.state.layout, 0, 1);
    const Eigen::VectorXd before = s.model.state.values;
    TrainConfig cfg;
    cfg.stage2_iterations = 20;
    cfg.batch_size = 4;
    cfg.weight_decay = 0.1;
    train_stage2(s.model, s.train, masks, cfg);
    for (auto i : frozen) CHECK(s.model.state.values[i] == before[i]);
    // (0,0) is used by aa only and does move.
    bool moved = false;
    for (auto i : head_param_indices(*s.model.state.layout, 0, 0)) moved = moved || s.model.state.values[i] != before[i];
    CHECK(moved);
}

TEST_CASE("stage 2 rejects inconsistent mask sets") {
    auto s = two_languages();
    TrainConfig cfg;
    cfg.stage2_iterations = 1;
    MaskSet partial{{"aa", LanguageMask::fixed(HeadMask::all_enabled("aa", tiny_encoder()))}};
    CHECK_THROWS_AS(train_stage2(s.model, s.train, partial, cfg), UsageError);
    MaskSet mixed{{"aa", LanguageMask::fixed(HeadMask::all_enabled("aa", tiny_encoder()))},
                  {"bb", LanguageMask::dynamic(SoftMask::from_static(HeadMask::all_enabled("bb", tiny_encoder()), 0.75, 0.01))}};
    CHECK_THROWS_AS(train_stage2(s.model, s.train, mixed, cfg), UsageError);
    std::map<std::string, Treebank> empty_lang{{"aa", Treebank{"aa", Split::train, {}}}};
    MaskSet none;
    CHECK_THROWS_AS(train_stage2(s.model, empty_lang, none, cfg), UsageError);
}

TEST_CASE("dynamic masks receive the straight-through mask gradient") {
    auto s = two_languages();
    const auto enc = tiny_encoder();
    MaskSet masks{{"aa", LanguageMask::dynamic(SoftMask::from_static(HeadMask::all_enabled("aa", enc), 0.75, 0.01))},
                  {"bb", LanguageMask::dynamic(SoftMask::from_static(HeadMask::all_enabled("bb", enc), 0.75, 0.01))}};
    std::map<std::string, std::vector<EncodedSentence>> data;
    for (const auto& [lang, tb] : s.train) data[lang] = encode_treebank(s.model, tb);
    TrainConfig cfg;
    cfg.stage2_iterations = 6;
    cfg.batch_size = 4;
    cfg.encoder_lr = 0.05;
    int checked = 0;
    const StepObserver obs = [&](const StepReport& rep) {
        for (const auto& [lang, m] : masks) {
            CHECK(m.head.disabled_count() == 1);
            const auto bg = batch_gradient(s.model.state, pick(data.at(lang), rep.batches.at(lang)), &m.head.bits);
            CHECK(rep.head_soft_grads.at(lang) == bg.mask);
            ++checked;
        }
    };
    const auto trace = train_stage2(s.model, s.train, masks, cfg, &obs);
    CHECK(checked == 12);
    // Mask rows are traced at every iteration for dynamic masks.
    CHECK(trace.select("mask").size() == 12);
}

TEST_CASE("stage 2 traces are deterministic") {
    auto a = two_languages();
    auto b = two_languages();
    TrainConfig cfg;
    cfg.stage2_iterations = 4;
    cfg.batch_size = 4;
    cfg.seed = 11;
    MaskSet none1, none2;
    const auto t1 = train_stage2(a.model, a.train, none1, cfg);
    const auto t2 = train_stage2(b.model, b.train, none2, cfg);
    CHECK(t1.to_csv() == t2.to_csv());
    CHECK(a.model.state.values == b.model.state.values);
    CHECK(t1.select("cosine").size() == 4);
}

TEST_CASE("first-order meta step on a two-parameter linear model") {
    // loss = 0.5 (w . x - y)^2, gradient (w . x - y) x
    const double xs0 = 1.0, xs1 = 2.0, ys = 1.0;
    const double xq0 = -1.0, xq1 = 0.5, yq = 0.5;
    const TaskGradient task = [&](const Eigen::VectorXd& w, bool query, Eigen::VectorXd& g) {
        const double x0 = query ? xq0 : xs0, x1 = query ? xq1 : xs1, y = query ? yq : ys;
        const double r = w[0] * x0 + w[1] * x1 - y;
        g[0] = r * x0;
        g[1] = r * x1;
        return 0.5 * r * r;
    };
    Eigen::VectorXd theta(2);
    theta << 0.3, -0.2;
    const double alpha = 0.1, beta = 0.05;

    // By hand, two inner steps.
    double p0 = 0.3, p1 = -0.2;
    for (int k = 0; k < 2; ++k) {
        const double r = p0 * xs0 + p1 * xs1 - ys;
        p0 -= alpha * r * xs0;
        p1 -= alpha * r * xs1;
    }
    const double rq = p0 * xq0 + p1 * xq1 - yq;
    const double expect0 = 0.3 - beta * rq * xq0;
    const double expect1 = -0.2 - beta * rq * xq1;

    const auto step = fomaml_step(theta, {task}, Eigen::VectorXd::Constant(2, alpha), 2);
    OptimizerConfig sgd;
    sgd.kind = OptimizerKind::sgd;
    Optimizer opt(sgd, 2);
    Eigen::VectorXd updated = theta;
    opt.step(updated, step.outer_grad, beta);
    CHECK(std::abs(updated[0] - expect0) < 1e-10);
    CHECK(std::abs(updated[1] - expect1) < 1e-10);
    CHECK(theta[0] == 0.3);
    CHECK(step.learners[0][0] == doctest::Approx(p0));

    // No inner movement: the outer gradient is the plain mean of the query gradients.
    const TaskGradient other = [&](const Eigen::VectorXd& w, bool, Eigen::VectorXd& g) {
        g = 2.0 * w;
        return w.squaredNorm();
    };
    const auto still = fomaml_step(theta, {task, other}, Eigen::VectorXd::Zero(2), 3);
    Eigen::VectorXd gq(2), go(2);
    task(theta, true, gq);
    other(theta, true, go);
    CHECK((still.outer_grad - 0.5 * (gq + go)).norm() < 1e-15);
}

TEST_CASE("meta training matches a sequential reference") {
    auto s = two_languages();
    std::map<std::string, Treebank> one{{"aa", s.train["aa"]}};
    const auto data = encode_treebank(s.model, s.train["aa"]);
    MetaConfig cfg;
    cfg.episodes = 3;
    cfg.support_size = 3;
    cfg.inner_steps = 2;
    cfg.inner_encoder_lr = 0.01;
    cfg.inner_classifier_lr = 0.02;
    cfg.outer_encoder_lr = 0.03;
    cfg.outer_classifier_lr = 0.04;
    cfg.outer_optimizer = OptimizerKind::sgd;
    cfg.schedule = Schedule::constant;
    cfg.weight_decay = 0.0;
    const auto& layout = *s.model.state.layout;
    const auto inner = group_learning_rates(layout, 0.01, 0.02);
    const auto outer = group_learning_rates(layout, 0.03, 0.04);
    Eigen::VectorXd expected_next;
    int episodes = 0;
    const StepObserver obs = [&](const StepReport& rep) {
        const auto& theta = s.model.state.values;
        if (episodes > 0) CHECK((theta - expected_next).cwiseAbs().maxCoeff() == 0.0);
        ModelState learner = s.model.state;
        const auto support = pick(data, rep.support.at("aa"));
        const auto query = pick(data, rep.batches.at("aa"));
        std::set<std::size_t> sup(rep.support.at("aa").begin(), rep.support.at("aa").end());
        for (auto q : rep.batches.at("aa")) CHECK(sup.count(q) == 0);
        for (int k = 0; k < 2; ++k) learner.values -= inner.cwiseProduct(batch_gradient(learner, support, nullptr).params);
        const auto g = batch_gradient(learner, query, nullptr).params;
        CHECK((g - rep.update_grad).cwiseAbs().maxCoeff() == 0.0);
        expected_next = theta - outer.cwiseProduct(g);
        ++episodes;
    };
    MaskSet none;
    meta_train(s.model, one, none, cfg, &obs);
    CHECK(episodes == 3);
    CHECK((s.model.state.values - expected_next).cwiseAbs().maxCoeff() < 1e-15);

    MetaConfig bad = cfg;
    bad.first_order = false;
    CHECK_THROWS_AS(meta_train(s.model, one, none, bad), UsageError);
}

TEST_CASE("episodes keep support and query disjoint") {
    auto rng = make_rng(4);
    for (int i = 0; i < 1000; ++i) {
        const auto e = sample_episode("aa", 45, 20, rng);
        REQUIRE(e.support.size() == 20);
        REQUIRE(e.query.size() == 20);
        std::set<std::size_t> all(e.support.begin(), e.support.end());
        all.insert(e.query.begin(), e.query.end());
        CHECK(all.size() == 40);
        CHECK(*all.rbegin() < 45);
    }
    CHECK_THROWS_AS(sample_episode("aa", 39, 20, rng), UsageError);
    Episode bad{"aa", {1, 2}, {2, 3}};
    CHECK_THROWS_AS(bad.check(), ContractError);
}

TEST_CASE("transfer mask goes to the most similar training language") {
    const LanguageMeta test{"tt", {1.0, 0.0}, {}};
    const std::vector<LanguageMeta> train{{"bb", {0.0, 1.0}, {}}, {"aa", {1.0, 0.1}, {}}};
    const auto pick1 = select_transfer_mask(test, train);
    CHECK(pick1.language == "aa");
    CHECK(pick1.cosine == doctest::Approx(1.0 / std::sqrt(1.01)));

    const std::vector<LanguageMeta> tied{{"zz", {2.0, 0.0}, {}}, {"cc", {1.0, 0.0}, {}}};
    CHECK(select_transfer_mask(test, tied).language == "cc");
    CHECK_THROWS_AS(select_transfer_mask(test, {}), UsageError);
    CHECK_THROWS_AS(select_transfer_mask(test, {{"x", {1.0}, {}}}), UsageError);

    CHECK(random_transfer_mask(train, 7).language == random_transfer_mask(train, 7).language);
    std::set<std::string> seen;
    for (std::uint64_t seed = 0; seed < 50; ++seed) seen.insert(random_transfer_mask(train, seed).language);
    CHECK(seen.size() == 2);
}

TEST_CASE("few-shot adaptation with no steps is zero-shot on the remaining sentences") {
    auto s = two_languages(40);
    const auto& test = s.train["bb"];
    FewShotConfig cfg;
    cfg.steps = 0;
    cfg.seeds = {3};
    const auto r = fewshot_adapt(s.model, test, nullptr, nullptr, cfg);
    REQUIRE(r.runs.size() == 1);
    CHECK(r.runs[0].eval_sentences == 20);

    EpochSampler sampler(test.sentences.size(), 3);
    const auto taken_idx = sampler.draw(20);
    std::set<std::size_t> taken(taken_idx.begin(), taken_idx.end());
    Treebank rest{"bb", Split::test, {}};
    for (std::size_t i = 0; i < test.sentences.size(); ++i)
        if (!taken.count(i)) rest.sentences.push_back(test.sentences[i]);
    const auto zero = evaluate(s.model, s.model.state, encode_treebank(s.model, rest), rest.sentences, nullptr);
    CHECK(r.runs[0].scores.las == zero.las);

    cfg.steps = 3;
    cfg.seeds = {0, 1};
    const auto adapted = fewshot_adapt(s.model, test, nullptr, nullptr, cfg);
    CHECK(adapted.runs.size() == 2);
    CHECK(adapted.mean_las == doctest::Approx((adapted.runs[0].scores.las + adapted.runs[1].scores.las) / 2));

    const auto with_dev = fewshot_adapt(s.model, test, &s.train["aa"], nullptr, cfg);
    CHECK(with_dev.runs[0].eval_sentences == test.sentences.size());

    cfg.shots = 40;
    CHECK_THROWS_AS(fewshot_adapt(s.model, test, nullptr, nullptr, cfg), UsageError);
}
