#include "snp/encoder.hpp"

#include <cmath>
#include <string>

#include "snp/errors.hpp"

namespace snp {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd layer_norm(const MatrixXd& x, const ConstMatrixMap& gamma, const ConstMatrixMap& beta,
                    LayerNormCache* cache) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    MatrixXd xhat(n, d);
    VectorXd inv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = x.row(i).mean();
        const double var = (x.row(i).array() - mu).square().mean();
        inv[i] = 1.0 / std::sqrt(var + kLayerNormEps);
        xhat.row(i) = (x.row(i).array() - mu) * inv[i];
    }
    MatrixXd y = (xhat.array().rowwise() * gamma.col(0).transpose().array()).rowwise() +
                 beta.col(0).transpose().array();
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv);
    }
    return y;
}

MatrixXd layer_norm_backward(const MatrixXd& dy, const LayerNormCache& cache, const ConstMatrixMap& gamma,
                             MatrixMap dgamma, MatrixMap dbeta) {
    dgamma.col(0) += (dy.array() * cache.xhat.array()).colwise().sum().transpose().matrix();
    dbeta.col(0) += dy.colwise().sum().transpose();
    const MatrixXd dxhat = dy.array().rowwise() * gamma.col(0).transpose().array();
    MatrixXd dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const double mean_dxhat = dxhat.row(i).mean();
        const double mean_dxhat_xhat = (dxhat.row(i).array() * cache.xhat.row(i).array()).mean();
        dx.row(i) = cache.inv_std[i] *
                    (dxhat.row(i).array() - mean_dxhat - cache.xhat.row(i).array() * mean_dxhat_xhat);
    }
    return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

double gelu_grad(double x) {
    const double inner = kGeluC * (x + 0.044715 * x * x * x);
    const double t = std::tanh(inner);
    const double dinner = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

void softmax_rows(MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double mx = m.row(i).maxCoeff();
        m.row(i) = (m.row(i).array() - mx).exp();
        m.row(i) /= m.row(i).sum();
    }
}

VectorXd softmax(const VectorXd& v) {
    const double mx = v.maxCoeff();
    VectorXd e = (v.array() - mx).exp();
    return e / e.sum();
}

}  // namespace

MaskValues ones_mask(const EncoderConfig& config) { return MaskValues::Ones(config.n_layers, config.n_heads); }

MaskedForwardRecord encode(const ModelState& state, std::span<const int> tokens, const MaskValues* mask,
                           bool cache_for_backward) {
    const auto& cfg = state.config.encoder;
    const auto& layout = *state.layout;
    const auto& es = layout.encoder();
    const Eigen::Index n = static_cast<Eigen::Index>(tokens.size());
    if (n < 1) throw ContractError("cannot encode an empty sequence");
    if (n > cfg.max_len) {
        throw ContractError("sequence length " + std::to_string(n) + " exceeds max_len " + std::to_string(cfg.max_len));
    }
    if (mask && (mask->rows() != cfg.n_layers || mask->cols() != cfg.n_heads)) {
        throw ContractError("mask shape (" + std::to_string(mask->rows()) + ", " + std::to_string(mask->cols()) +
                            ") does not match encoder (" + std::to_string(cfg.n_layers) + ", " +
                            std::to_string(cfg.n_heads) + ")");
    }

    MaskedForwardRecord rec;
    rec.tokens.assign(tokens.begin(), tokens.end());
    rec.mask = mask ? *mask : ones_mask(cfg);
    rec.cached = cache_for_backward;

    const auto tok_emb = state.mat(es.tok_emb);
    const auto pos_emb = state.mat(es.pos_emb);
    MatrixXd x(n, cfg.d_model);
    for (Eigen::Index j = 0; j < n; ++j) {
        const int id = tokens[static_cast<std::size_t>(j)];
        if (id < 0 || id >= cfg.vocab_size) {
            throw ContractError("token index " + std::to_string(id) + " outside vocabulary of size " +
                                std::to_string(cfg.vocab_size));
        }
        x.row(j) = tok_emb.row(id) + pos_emb.row(j);
    }
    x = layer_norm(x, state.mat(es.emb_ln_g), state.mat(es.emb_ln_b),
                   cache_for_backward ? &rec.embedding_ln : nullptr);

    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_head()));
    rec.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& ls = es.layers[static_cast<std::size_t>(l)];
        auto& lc = rec.layers[static_cast<std::size_t>(l)];
        if (cache_for_backward) {
            lc.input = x;
            lc.heads.resize(static_cast<std::size_t>(cfg.n_heads));
        }
        MatrixXd attn = MatrixXd::Zero(n, cfg.d_model);
        for (int h = 0; h < cfg.n_heads; ++h) {
            const auto& hs = ls.heads[static_cast<std::size_t>(h)];
            MatrixXd q = (x * state.mat(hs.wq)).rowwise() + state.mat(hs.bq).col(0).transpose();
            MatrixXd k = (x * state.mat(hs.wk)).rowwise() + state.mat(hs.bk).col(0).transpose();
            MatrixXd v = (x * state.mat(hs.wv)).rowwise() + state.mat(hs.bv).col(0).transpose();
            MatrixXd probs = (q * k.transpose()) * scale;
            softmax_rows(probs);
            MatrixXd out = probs * v;
            attn.noalias() += (rec.mask(l, h) * out) * state.mat(hs.wo);
            if (cache_for_backward) {
                auto& hc = lc.heads[static_cast<std::size_t>(h)];
                hc.q = std::move(q);
                hc.k = std::move(k);
                hc.v = std::move(v);
                hc.probs = std::move(probs);
                hc.out = std::move(out);
            }
        }
        attn.rowwise() += state.mat(ls.bo).col(0).transpose();
        MatrixXd x1 = layer_norm(x + attn, state.mat(ls.ln1_g), state.mat(ls.ln1_b),
                                 cache_for_backward ? &lc.ln1 : nullptr);
        MatrixXd ff_pre = (x1 * state.mat(ls.w1)).rowwise() + state.mat(ls.b1).col(0).transpose();
        MatrixXd ff_act = ff_pre.unaryExpr([](double z) { return gelu(z); });
        MatrixXd ff = (ff_act * state.mat(ls.w2)).rowwise() + state.mat(ls.b2).col(0).transpose();
        MatrixXd out = layer_norm(x1 + ff, state.mat(ls.ln2_g), state.mat(ls.ln2_b),
                                  cache_for_backward ? &lc.ln2 : nullptr);
        if (cache_for_backward) {
            lc.x1 = std::move(x1);
            lc.ff_pre = std::move(ff_pre);
            lc.ff_act = std::move(ff_act);
        }
        lc.output = out;
        x = std::move(out);
    }

    rec.mix_weights = softmax(state.mat(es.mix).col(0));
    rec.mixed = MatrixXd::Zero(n, cfg.d_model);
    for (int l = 0; l < cfg.n_layers; ++l) {
        rec.mixed += rec.mix_weights[l] * rec.layers[static_cast<std::size_t>(l)].output;
    }
    rec.mixed *= state.eta();
    return rec;
}

void encoder_backward(const ModelState& state, const MaskedForwardRecord& rec, const Eigen::MatrixXd& grad_mixed,
                      Eigen::VectorXd& param_grad, Eigen::MatrixXd* mask_grad) {
    if (!rec.cached) throw ContractError("encoder_backward needs a record encoded with gradient caching");
    const auto& cfg = state.config.encoder;
    const auto& layout = *state.layout;
    const auto& es = layout.encoder();
    if (param_grad.size() != layout.size()) throw ContractError("gradient buffer does not match parameter layout");
    if (grad_mixed.rows() != rec.mixed.rows() || grad_mixed.cols() != rec.mixed.cols()) {
        throw ContractError("gradient w.r.t. mixed representations has the wrong shape");
    }
    if (mask_grad && (mask_grad->rows() != cfg.n_layers || mask_grad->cols() != cfg.n_heads)) {
        throw ContractError("mask gradient buffer has the wrong shape");
    }
    auto g = [&](int slot) { return view(param_grad, layout.slot(slot)); };

    // Layer mix: r = eta * sum_i w_i U_i, w = softmax(lambda).
    const double eta = state.eta();
    const int L = cfg.n_layers;
    VectorXd dw(L);
    double deta = 0.0;
    for (int l = 0; l < L; ++l) {
        const double inner = (rec.layers[static_cast<std::size_t>(l)].output.array() * grad_mixed.array()).sum();
        dw[l] = eta * inner;
        deta += rec.mix_weights[l] * inner;
    }
    g(es.eta)(0, 0) += deta;
    const double wdw = rec.mix_weights.dot(dw);
    g(es.mix).col(0) += (rec.mix_weights.array() * (dw.array() - wdw)).matrix();

    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_head()));
    MatrixXd dx = MatrixXd::Zero(grad_mixed.rows(), grad_mixed.cols());
    for (int l = L - 1; l >= 0; --l) {
        const auto& ls = es.layers[static_cast<std::size_t>(l)];
        const auto& lc = rec.layers[static_cast<std::size_t>(l)];
        // Gradient reaching U_l: from the mix and from the layer above.
        MatrixXd dout = dx + (eta * rec.mix_weights[l]) * grad_mixed;

        MatrixXd dy2 = layer_norm_backward(dout, lc.ln2, state.mat(ls.ln2_g), g(ls.ln2_g), g(ls.ln2_b));
        MatrixXd dx1 = dy2;
        g(ls.w2).noalias() += lc.ff_act.transpose() * dy2;
        g(ls.b2).col(0) += dy2.colwise().sum().transpose();
        MatrixXd dff_act = dy2 * state.mat(ls.w2).transpose();
        MatrixXd dff_pre = dff_act.array() * lc.ff_pre.unaryExpr([](double z) { return gelu_grad(z); }).array();
        g(ls.w1).noalias() += lc.x1.transpose() * dff_pre;
        g(ls.b1).col(0) += dff_pre.colwise().sum().transpose();
        dx1.noalias() += dff_pre * state.mat(ls.w1).transpose();

        MatrixXd dy1 = layer_norm_backward(dx1, lc.ln1, state.mat(ls.ln1_g), g(ls.ln1_g), g(ls.ln1_b));
        MatrixXd dinput = dy1;
        g(ls.bo).col(0) += dy1.colwise().sum().transpose();
        for (int h = 0; h < cfg.n_heads; ++h) {
            const auto& hs = ls.heads[static_cast<std::size_t>(h)];
            const auto& hc = lc.heads[static_cast<std::size_t>(h)];
            const double m = rec.mask(l, h);
            g(hs.wo).noalias() += (m * hc.out).transpose() * dy1;
            const MatrixXd dmasked = dy1 * state.mat(hs.wo).transpose();
            if (mask_grad) (*mask_grad)(l, h) += (hc.out.array() * dmasked.array()).sum();
            const MatrixXd dout_h = m * dmasked;
            const MatrixXd dprobs = dout_h * hc.v.transpose();
            const MatrixXd dv = hc.probs.transpose() * dout_h;
            MatrixXd dscores(dprobs.rows(), dprobs.cols());
            for (Eigen::Index i = 0; i < dprobs.rows(); ++i) {
                const double dot = (dprobs.row(i).array() * hc.probs.row(i).array()).sum();
                dscores.row(i) = hc.probs.row(i).array() * (dprobs.row(i).array() - dot);
            }
            dscores *= scale;
            const MatrixXd dq = dscores * hc.k;
            const MatrixXd dk = dscores.transpose() * hc.q;
            g(hs.wq).noalias() += lc.input.transpose() * dq;
            g(hs.bq).col(0) += dq.colwise().sum().transpose();
            g(hs.wk).noalias() += lc.input.transpose() * dk;
            g(hs.bk).col(0) += dk.colwise().sum().transpose();
            g(hs.wv).noalias() += lc.input.transpose() * dv;
            g(hs.bv).col(0) += dv.colwise().sum().transpose();
            dinput.noalias() += dq * state.mat(hs.wq).transpose();
            dinput.noalias() += dk * state.mat(hs.wk).transpose();
            dinput.noalias() += dv * state.mat(hs.wv).transpose();
        }
        dx = std::move(dinput);
    }

    const MatrixXd demb =
        layer_norm_backward(dx, rec.embedding_ln, state.mat(es.emb_ln_g), g(es.emb_ln_g), g(es.emb_ln_b));
    auto dtok = g(es.tok_emb);
    auto dpos = g(es.pos_emb);
    for (Eigen::Index j = 0; j < demb.rows(); ++j) {
        dtok.row(rec.tokens[static_cast<std::size_t>(j)]) += demb.row(j);
        dpos.row(j) += demb.row(j);
    }
}

}  // namespace snp
