#include <cmath>

#include "doctest.h"
#include "snp/encoder.hpp"
#include "snp/errors.hpp"
#include "snp/model.hpp"
#include "snp/random.hpp"

using namespace snp;

namespace {

ModelConfig tiny_config(int layers = 2, int heads = 2) {
    ModelConfig cfg;
    cfg.encoder.n_layers = layers;
    cfg.encoder.n_heads = heads;
    cfg.encoder.d_model = 8;
    cfg.encoder.d_ff = 12;
    cfg.encoder.vocab_size = 7;
    cfg.encoder.max_len = 8;
    cfg.encoder.seed = 17;
    cfg.parser.arc_dim = 6;
    cfg.parser.tag_dim = 5;
    cfg.parser.n_labels = 3;
    return cfg;
}

// Random non-trivial mixing weights so their gradients are exercised.
ModelState perturbed_state(const ModelConfig& cfg) {
    auto st = init_state(cfg);
    auto rng = make_rng(99);
    auto lam = st.mat(st.layout->encoder().mix);
    for (Eigen::Index i = 0; i < lam.size(); ++i) lam(i) = 0.5 * normal01(rng);
    st.mat(st.layout->encoder().eta)(0) = 1.3;
    // Non-zero biases and label parameters everywhere.
    for (const auto& s : st.layout->slots()) {
        if (s.group == ParamGroup::classifier) {
            auto m = view(st.values, s);
            for (Eigen::Index i = 0; i < m.size(); ++i) m(i) += 0.2 * normal01(rng);
        }
    }
    return st;
}

EncodedSentence three_tokens() {
    EncodedSentence s;
    s.ids = {0, 3, 4, 5};
    s.gold.heads = {0, 2, 0, 2};
    s.gold.labels = {0, 1, 0, 2};
    return s;
}

double rel_err(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
    return std::abs(a - b) / scale;
}

}  // namespace

TEST_CASE("encoder output shape and validation") {
    const auto cfg = tiny_config();
    const auto st = init_state(cfg);
    const std::vector<int> ids{0, 1, 2};
    const auto rec = encode(st, ids, nullptr);
    CHECK(rec.mixed.rows() == 3);
    CHECK(rec.mixed.cols() == cfg.encoder.d_model);
    CHECK(rec.layers.size() == 2);
    CHECK(rec.mixed.allFinite());

    const std::vector<int> bad{0, 99};
    CHECK_THROWS_AS(encode(st, bad, nullptr), ContractError);
    const std::vector<int> too_long(9, 1);
    CHECK_THROWS_AS(encode(st, too_long, nullptr), ContractError);
    MaskValues wrong = MaskValues::Ones(3, 2);
    CHECK_THROWS_AS(encode(st, ids, &wrong), ContractError);

    const auto light = encode(st, ids, nullptr, false);
    auto grad = st.zeros();
    CHECK_THROWS_AS(encoder_backward(st, light, light.mixed, grad, nullptr), ContractError);
}

TEST_CASE("all-ones mask is bitwise identical to no mask") {
    const auto cfg = tiny_config(3, 2);
    const auto st = perturbed_state(cfg);
    const std::vector<int> ids{0, 6, 2, 5, 1};
    const auto ones = ones_mask(cfg.encoder);
    const auto a = encode(st, ids, nullptr);
    const auto b = encode(st, ids, &ones);
    CHECK((a.mixed.array() == b.mixed.array()).all());
}

TEST_CASE("parameters of a masked head do not affect the output") {
    const auto cfg = tiny_config(2, 2);
    auto st = perturbed_state(cfg);
    const std::vector<int> ids{0, 6, 2, 5};
    MaskValues mask = ones_mask(cfg.encoder);
    mask(1, 0) = 0.0;
    const auto before = encode(st, ids, &mask);
    auto rng = make_rng(5);
    const auto idx = head_param_indices(*st.layout, 1, 0);
    REQUIRE(!idx.empty());
    for (auto i : idx) st.values[i] += 3.0 * normal01(rng);
    const auto after = encode(st, ids, &mask);
    CHECK((before.mixed.array() == after.mixed.array()).all());

    // The same perturbation with the head enabled does change the output.
    const auto enabled = encode(st, ids, nullptr);
    const auto reference = encode(perturbed_state(cfg), ids, nullptr);
    CHECK((enabled.mixed - reference.mixed).norm() > 1e-6);
}

TEST_CASE("uniform layer weights give eta times the layer mean") {
    const auto cfg = tiny_config(3, 2);
    auto st = init_state(cfg);
    const double eta = 0.7;
    st.mat(st.layout->encoder().eta)(0) = eta;
    const std::vector<int> ids{0, 1, 4, 2};
    const auto rec = encode(st, ids, nullptr);
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(rec.mixed.rows(), rec.mixed.cols());
    for (const auto& layer : rec.layers) mean += layer.output;
    mean /= static_cast<double>(rec.layers.size());
    CHECK((rec.mixed - eta * mean).cwiseAbs().maxCoeff() < 1e-12);
    for (Eigen::Index i = 0; i < rec.mix_weights.size(); ++i) CHECK(rec.mix_weights[i] == doctest::Approx(1.0 / 3));
}

TEST_CASE("analytic gradients match central differences") {
    const auto cfg = tiny_config(2, 2);
    auto st = perturbed_state(cfg);
    const auto sent = three_tokens();
    MaskValues mask = ones_mask(cfg.encoder);
    mask(0, 1) = 0.6;

    auto grad = st.zeros();
    Eigen::MatrixXd mgrad = Eigen::MatrixXd::Zero(2, 2);
    const double loss = sentence_loss(st, sent, &mask, &grad, &mgrad);
    CHECK(std::isfinite(loss));

    const double h = 1e-5;
    double worst = 0.0;
    std::string worst_name;
    for (const auto& slot : st.layout->slots()) {
        for (Eigen::Index k = 0; k < slot.size(); ++k) {
            const Eigen::Index i = slot.offset + k;
            const double keep = st.values[i];
            st.values[i] = keep + h;
            const double up = sentence_loss(st, sent, &mask);
            st.values[i] = keep - h;
            const double down = sentence_loss(st, sent, &mask);
            st.values[i] = keep;
            const double numeric = (up - down) / (2 * h);
            if (std::abs(numeric) < 1e-7 && std::abs(grad[i]) < 1e-7) continue;
            const double e = rel_err(grad[i], numeric);
            if (e > worst) {
                worst = e;
                worst_name = slot.name;
            }
        }
    }
    INFO("worst slot: " << worst_name);
    CHECK(worst < 1e-4);

    for (int l = 0; l < 2; ++l) {
        for (int hd = 0; hd < 2; ++hd) {
            MaskValues mu = mask, md = mask;
            mu(l, hd) += h;
            md(l, hd) -= h;
            const double numeric = (sentence_loss(st, sent, &mu) - sentence_loss(st, sent, &md)) / (2 * h);
            CHECK(rel_err(mgrad(l, hd), numeric) < 1e-4);
        }
    }
}

TEST_CASE("mask gradient is unchanged by the value of a zeroed head's mask") {
    // The gradient w.r.t. a head's mask value is its unmasked output dotted with
    // the upstream gradient, so it is defined (and usually non-zero) at 0.
    const auto cfg = tiny_config(2, 2);
    const auto st = perturbed_state(cfg);
    const auto sent = three_tokens();
    MaskValues mask = ones_mask(cfg.encoder);
    mask(1, 1) = 0.0;
    auto grad = st.zeros();
    Eigen::MatrixXd mgrad = Eigen::MatrixXd::Zero(2, 2);
    sentence_loss(st, sent, &mask, &grad, &mgrad);
    CHECK(std::abs(mgrad(1, 1)) > 0.0);
    for (auto i : head_param_indices(*st.layout, 1, 1)) CHECK(grad[i] == 0.0);
}
