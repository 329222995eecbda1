#include <cmath>
#include <functional>

#include "doctest.h"
#include "snp/biaffine.hpp"
#include "snp/cle.hpp"
#include "snp/errors.hpp"
#include "snp/model.hpp"
#include "snp/random.hpp"

using namespace snp;

namespace {

ModelConfig small_config(int n_labels) {
    ModelConfig cfg;
    cfg.encoder.n_layers = 1;
    cfg.encoder.n_heads = 2;
    cfg.encoder.d_model = 6;
    cfg.encoder.d_ff = 8;
    cfg.encoder.vocab_size = 8;
    cfg.encoder.max_len = 10;
    cfg.parser.arc_dim = 5;
    cfg.parser.tag_dim = 4;
    cfg.parser.n_labels = n_labels;
    return cfg;
}

void zero_slot(ModelState& st, int slot) { st.mat(slot).setZero(); }

// Exhaustive search over all head assignments that form a tree.
std::pair<std::vector<int>, double> brute_force(const Eigen::MatrixXd& s, bool single_root) {
    const int n = static_cast<int>(s.rows()) - 1;
    std::vector<int> heads(static_cast<std::size_t>(n), 0), best;
    double best_score = -INFINITY;
    std::function<void(int)> rec = [&](int d) {
        if (d == n) {
            if (!is_tree(heads)) return;
            if (single_root && root_children(heads) != 1) return;
            const double total = tree_score(s, heads);
            if (best.empty() || total > best_score) {
                best = heads;
                best_score = total;
            }
            return;
        }
        for (int h = 0; h <= n; ++h) {
            if (h == d + 1) continue;
            heads[static_cast<std::size_t>(d)] = h;
            rec(d + 1);
        }
    };
    rec(0);
    return {best, best_score};
}

}  // namespace

TEST_CASE("zero biaffine weights give zero arc scores") {
    auto st = init_state(small_config(3));
    zero_slot(st, st.layout->parser().arc_w);
    zero_slot(st, st.layout->parser().arc_b);
    auto rng = make_rng(1);
    Eigen::MatrixXd r(4, 6);
    for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = normal01(rng);
    const auto fwd = score(st, r);
    CHECK(fwd.arc.rows() == 4);
    CHECK(fwd.arc.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("uniform scores give log(n+1) head loss per token") {
    const int n_labels = 4;
    auto st = init_state(small_config(n_labels));
    const auto& p = st.layout->parser();
    for (int s : {p.arc_w, p.arc_b, p.tag_u, p.tag_head_v, p.tag_dep_v, p.tag_b}) zero_slot(st, s);
    auto rng = make_rng(2);
    for (int n : {1, 3, 6}) {
        Eigen::MatrixXd r(n + 1, 6);
        for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = normal01(rng);
        GoldArcs gold;
        gold.heads.assign(static_cast<std::size_t>(n + 1), 0);
        gold.labels.assign(static_cast<std::size_t>(n + 1), 1);
        for (int d = 2; d <= n; ++d) gold.heads[static_cast<std::size_t>(d)] = 1;
        const auto fwd = score(st, r);
        const double loss = parse_loss(st, fwd, gold, nullptr);
        CHECK(loss == doctest::Approx(n * (std::log(n + 1.0) + std::log(n_labels))).epsilon(1e-12));
    }
}

TEST_CASE("label scores agree with the full tensor") {
    const auto st = init_state(small_config(3));
    auto rng = make_rng(4);
    Eigen::MatrixXd r(4, 6);
    for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = normal01(rng);
    const auto fwd = score(st, r);
    const auto tensor = label_score_tensor(st, fwd);
    REQUIRE(tensor.size() == 3);
    for (int h = 0; h < 4; ++h)
        for (int d = 1; d < 4; ++d) {
            const auto v = label_scores(st, fwd, h, d);
            for (int l = 0; l < 3; ++l) CHECK(v[l] == doctest::Approx(tensor[l](h, d)).epsilon(1e-12));
        }
}

TEST_CASE("classifier gradients and dL/dr match central differences") {
    auto st = init_state(small_config(3));
    auto rng = make_rng(6);
    for (Eigen::Index i = 0; i < st.values.size(); ++i) st.values[i] += 0.1 * normal01(rng);
    Eigen::MatrixXd r(4, 6);
    for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = normal01(rng);
    GoldArcs gold{{0, 2, 0, 2}, {0, 1, 0, 2}};

    LossSeed seed;
    auto fwd = score(st, r);
    parse_loss(st, fwd, gold, &seed);
    auto grad = st.zeros();
    const Eigen::MatrixXd dr = score_backward(st, fwd, gold, seed, grad);

    auto loss_at = [&](const ModelState& s, const Eigen::MatrixXd& x) {
        return parse_loss(s, score(s, x), gold, nullptr);
    };
    const double h = 1e-5;
    for (const auto& slot : st.layout->slots()) {
        if (slot.group != ParamGroup::classifier) continue;
        for (Eigen::Index k = 0; k < slot.size(); ++k) {
            const Eigen::Index i = slot.offset + k;
            const double keep = st.values[i];
            st.values[i] = keep + h;
            const double up = loss_at(st, r);
            st.values[i] = keep - h;
            const double down = loss_at(st, r);
            st.values[i] = keep;
            const double numeric = (up - down) / (2 * h);
            INFO(slot.name << "[" << k << "]");
            CHECK(grad[i] == doctest::Approx(numeric).epsilon(1e-4).scale(1e-3));
        }
    }
    for (Eigen::Index i = 0; i < r.size(); ++i) {
        Eigen::MatrixXd up = r, down = r;
        up(i) += h;
        down(i) -= h;
        const double numeric = (loss_at(st, up) - loss_at(st, down)) / (2 * h);
        CHECK(dr(i) == doctest::Approx(numeric).epsilon(1e-4).scale(1e-3));
    }
}

TEST_CASE("CLE finds the maximum spanning tree") {
    auto rng = make_rng(8);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = 1 + static_cast<int>(uniform_index(rng, 6));
        Eigen::MatrixXd s(n + 1, n + 1);
        for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = 3.0 * normal01(rng);
        for (bool single : {false, true}) {
            const auto heads = decode_cle(s, single);
            REQUIRE(heads.size() == static_cast<std::size_t>(n));
            CHECK(is_tree(heads));
            if (single) CHECK(root_children(heads) == 1);
            const auto [bf, bf_score] = brute_force(s, single);
            CHECK(tree_score(s, heads) == doctest::Approx(bf_score).epsilon(1e-12));
        }
    }
}

TEST_CASE("CLE picks up the single-root constraint") {
    // Greedy heads attach both tokens to the root.
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(3, 3);
    s(0, 1) = 10;
    s(0, 2) = 10;
    s(1, 2) = 1;
    s(2, 1) = 2;
    CHECK(decode_cle(s, false) == std::vector<int>{0, 0});
    CHECK(decode_cle(s, true) == std::vector<int>{2, 0});

    Eigen::MatrixXd bad = s;
    bad(1, 2) = NAN;
    CHECK_THROWS_AS(decode_cle(bad), ContractError);
    CHECK_THROWS_AS(decode_cle(Eigen::MatrixXd::Zero(2, 3)), ContractError);
}

TEST_CASE("LAS and UAS hand counts") {
    Sentence g;
    g.tokens = {{1, "a", 2, "det", {}}, {2, "b", 0, "root", {}}, {3, "c", 2, "obj", {}}, {4, "d", 3, "amod", {}}};
    ParseTree p;
    p.heads = {2, 0, 2, 1};
    p.labels = {"det", "root", "nsubj", "amod"};
    const auto s = las({p}, {g});
    CHECK(s.tokens == 4);
    CHECK(s.correct_heads == 3);
    CHECK(s.correct_labeled == 2);
    CHECK(s.las == doctest::Approx(50.0));
    CHECK(s.uas == doctest::Approx(75.0));

    ParseTree short_tree = p;
    short_tree.heads.pop_back();
    CHECK_THROWS_AS(las({short_tree}, {g}), ContractError);
    CHECK_THROWS_AS(las({p, p}, {g}), ContractError);
}
