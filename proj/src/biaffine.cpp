#include "snp/biaffine.hpp"

#include <cmath>

#include "snp/errors.hpp"

namespace snp {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd elu(const MatrixXd& z) {
    return z.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
}

MatrixXd elu_backward(const MatrixXd& dy, const MatrixXd& z) {
    return dy.array() * z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : std::exp(v); }).array();
}

double log_sum_exp(const VectorXd& v) {
    const double mx = v.maxCoeff();
    return mx + std::log((v.array() - mx).exp().sum());
}

}  // namespace

ParserForward score(const ModelState& state, const Eigen::MatrixXd& encodings) {
    const auto& ps = state.layout->parser();
    if (encodings.rows() < 2) throw ContractError("parser needs the root row plus at least one token");
    if (encodings.cols() != state.config.encoder.d_model) {
        throw ContractError("encoding width " + std::to_string(encodings.cols()) + " does not match d_model " +
                            std::to_string(state.config.encoder.d_model));
    }
    ParserForward f;
    f.input = encodings;
    f.arc_head_pre = (encodings * state.mat(ps.arc_head_w)).rowwise() + state.mat(ps.arc_head_b).col(0).transpose();
    f.arc_dep_pre = (encodings * state.mat(ps.arc_dep_w)).rowwise() + state.mat(ps.arc_dep_b).col(0).transpose();
    f.tag_head_pre = (encodings * state.mat(ps.tag_head_w)).rowwise() + state.mat(ps.tag_head_b).col(0).transpose();
    f.tag_dep_pre = (encodings * state.mat(ps.tag_dep_w)).rowwise() + state.mat(ps.tag_dep_b).col(0).transpose();
    f.arc_head = elu(f.arc_head_pre);
    f.arc_dep = elu(f.arc_dep_pre);
    f.tag_head = elu(f.tag_head_pre);
    f.tag_dep = elu(f.tag_dep_pre);
    const VectorXd head_bias = f.arc_head * state.mat(ps.arc_b).col(0);
    f.arc = (f.arc_head * state.mat(ps.arc_w)) * f.arc_dep.transpose();
    f.arc.colwise() += head_bias;
    return f;
}

Eigen::VectorXd label_scores(const ModelState& state, const ParserForward& fwd, int head, int dep) {
    const auto& ps = state.layout->parser();
    const int t = state.config.parser.tag_dim;
    const int n_labels = state.config.parser.n_labels;
    const auto u = state.mat(ps.tag_u);
    const VectorXd th = fwd.tag_head.row(head).transpose();
    const VectorXd td = fwd.tag_dep.row(dep).transpose();
    // th^T U_l for all l at once, then dot each block with td.
    const VectorXd thu = u.transpose() * th;
    VectorXd s(n_labels);
    for (int l = 0; l < n_labels; ++l) s[l] = thu.segment(static_cast<Eigen::Index>(l) * t, t).dot(td);
    s += state.mat(ps.tag_head_v).transpose() * th;
    s += state.mat(ps.tag_dep_v).transpose() * td;
    s += state.mat(ps.tag_b).col(0);
    return s;
}

std::vector<Eigen::MatrixXd> label_score_tensor(const ModelState& state, const ParserForward& fwd) {
    const Eigen::Index n1 = fwd.arc.rows();
    std::vector<MatrixXd> out(static_cast<std::size_t>(state.config.parser.n_labels), MatrixXd(n1, n1));
    for (Eigen::Index h = 0; h < n1; ++h) {
        for (Eigen::Index d = 0; d < n1; ++d) {
            const VectorXd s = label_scores(state, fwd, static_cast<int>(h), static_cast<int>(d));
            for (std::size_t l = 0; l < out.size(); ++l) out[l](h, d) = s[static_cast<Eigen::Index>(l)];
        }
    }
    return out;
}

double parse_loss(const ModelState& state, const ParserForward& fwd, const GoldArcs& gold, LossSeed* seed) {
    const Eigen::Index n1 = fwd.arc.rows();
    if (static_cast<Eigen::Index>(gold.heads.size()) != n1 || static_cast<Eigen::Index>(gold.labels.size()) != n1) {
        throw ContractError("gold arcs do not match the scored sentence length");
    }
    if (seed) {
        seed->d_arc = MatrixXd::Zero(n1, n1);
        seed->d_label.assign(static_cast<std::size_t>(n1), VectorXd());
    }
    double loss = 0.0;
    for (Eigen::Index d = 1; d < n1; ++d) {
        const int gh = gold.heads[static_cast<std::size_t>(d)];
        const int gl = gold.labels[static_cast<std::size_t>(d)];
        const VectorXd col = fwd.arc.col(d);
        const double lse = log_sum_exp(col);
        loss += lse - col[gh];
        const VectorXd ls = label_scores(state, fwd, gh, static_cast<int>(d));
        const double llse = log_sum_exp(ls);
        loss += llse - ls[gl];
        if (seed) {
            VectorXd p = (col.array() - lse).exp();
            p[gh] -= 1.0;
            seed->d_arc.col(d) = p;
            VectorXd q = (ls.array() - llse).exp();
            q[gl] -= 1.0;
            seed->d_label[static_cast<std::size_t>(d)] = std::move(q);
        }
    }
    return loss;
}

Eigen::MatrixXd score_backward(const ModelState& state, const ParserForward& fwd, const GoldArcs& gold,
                               const LossSeed& seed, Eigen::VectorXd& param_grad) {
    const auto& layout = *state.layout;
    const auto& ps = layout.parser();
    auto g = [&](int slot) { return view(param_grad, layout.slot(slot)); };
    const int t = state.config.parser.tag_dim;
    const int n_labels = state.config.parser.n_labels;
    const Eigen::Index n1 = fwd.arc.rows();

    // Arc biaffine.
    const auto w_arc = state.mat(ps.arc_w);
    const auto b_arc = state.mat(ps.arc_b).col(0);
    const VectorXd row_sums = seed.d_arc.rowwise().sum();
    MatrixXd d_arc_head = seed.d_arc * fwd.arc_dep * w_arc.transpose() + row_sums * b_arc.transpose();
    MatrixXd d_arc_dep = seed.d_arc.transpose() * fwd.arc_head * w_arc;
    g(ps.arc_w).noalias() += fwd.arc_head.transpose() * seed.d_arc * fwd.arc_dep;
    g(ps.arc_b).col(0) += fwd.arc_head.transpose() * row_sums;

    // Label biaffine at the gold arcs.
    MatrixXd d_tag_head = MatrixXd::Zero(n1, t);
    MatrixXd d_tag_dep = MatrixXd::Zero(n1, t);
    const auto u = state.mat(ps.tag_u);
    const auto vh = state.mat(ps.tag_head_v);
    const auto vd = state.mat(ps.tag_dep_v);
    auto gu = g(ps.tag_u);
    auto gvh = g(ps.tag_head_v);
    auto gvd = g(ps.tag_dep_v);
    auto gb = g(ps.tag_b);
    for (Eigen::Index d = 1; d < n1; ++d) {
        const VectorXd& q = seed.d_label[static_cast<std::size_t>(d)];
        if (q.size() == 0) continue;
        const int h = gold.heads[static_cast<std::size_t>(d)];
        const VectorXd th = fwd.tag_head.row(h).transpose();
        const VectorXd td = fwd.tag_dep.row(d).transpose();
        VectorXd dth = vh * q;
        VectorXd dtd = vd * q;
        for (int l = 0; l < n_labels; ++l) {
            const double ql = q[l];
            if (ql == 0.0) continue;
            const auto ul = u.block(0, static_cast<Eigen::Index>(l) * t, t, t);
            gu.block(0, static_cast<Eigen::Index>(l) * t, t, t).noalias() += ql * th * td.transpose();
            dth.noalias() += ql * (ul * td);
            dtd.noalias() += ql * (ul.transpose() * th);
        }
        gvh.noalias() += th * q.transpose();
        gvd.noalias() += td * q.transpose();
        gb.col(0) += q;
        d_tag_head.row(h) += dth.transpose();
        d_tag_dep.row(d) += dtd.transpose();
    }

    const MatrixXd dz_ah = elu_backward(d_arc_head, fwd.arc_head_pre);
    const MatrixXd dz_ad = elu_backward(d_arc_dep, fwd.arc_dep_pre);
    const MatrixXd dz_th = elu_backward(d_tag_head, fwd.tag_head_pre);
    const MatrixXd dz_td = elu_backward(d_tag_dep, fwd.tag_dep_pre);
    g(ps.arc_head_w).noalias() += fwd.input.transpose() * dz_ah;
    g(ps.arc_head_b).col(0) += dz_ah.colwise().sum().transpose();
    g(ps.arc_dep_w).noalias() += fwd.input.transpose() * dz_ad;
    g(ps.arc_dep_b).col(0) += dz_ad.colwise().sum().transpose();
    g(ps.tag_head_w).noalias() += fwd.input.transpose() * dz_th;
    g(ps.tag_head_b).col(0) += dz_th.colwise().sum().transpose();
    g(ps.tag_dep_w).noalias() += fwd.input.transpose() * dz_td;
    g(ps.tag_dep_b).col(0) += dz_td.colwise().sum().transpose();

    MatrixXd d_input = dz_ah * state.mat(ps.arc_head_w).transpose();
    d_input.noalias() += dz_ad * state.mat(ps.arc_dep_w).transpose();
    d_input.noalias() += dz_th * state.mat(ps.tag_head_w).transpose();
    d_input.noalias() += dz_td * state.mat(ps.tag_dep_w).transpose();
    return d_input;
}

}  // namespace snp
