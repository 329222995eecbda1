#include "snp/subnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <tuple>

#include "json.hpp"
#include "snp/errors.hpp"
#include "snp/random.hpp"

namespace snp {

namespace {

using nlohmann::json;

std::string shape_str(Eigen::Index r, Eigen::Index c) { return std::to_string(r) + "x" + std::to_string(c); }

// Indices of the `zeros` smallest values, ties broken by ascending index.
std::vector<Eigen::Index> smallest(const Eigen::VectorXd& values, std::size_t zeros) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(values.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return values[a] < values[b]; });
    order.resize(std::min(zeros, order.size()));
    return order;
}

double ratio_to(double las, double original) {
    if (original > 0.0) return las / original;
    return las >= original ? 1.0 : 0.0;
}

// Row-major flattening (layer, head) so index order matches (layer, head) order.
Eigen::VectorXd row_major(const Eigen::MatrixXd& m) {
    Eigen::VectorXd out(m.size());
    for (Eigen::Index l = 0; l < m.rows(); ++l)
        for (Eigen::Index h = 0; h < m.cols(); ++h) out[l * m.cols() + h] = m(l, h);
    return out;
}

}  // namespace

HeadMask HeadMask::all_enabled(const std::string& language, const EncoderConfig& config) {
    return HeadMask{language, Eigen::MatrixXd::Ones(config.n_layers, config.n_heads)};
}

void HeadMask::validate() const {
    for (Eigen::Index i = 0; i < bits.size(); ++i) {
        if (bits(i) != 0.0 && bits(i) != 1.0) throw ContractError("head mask for '" + language + "' is not binary");
    }
}

void HeadMask::check_shape(const EncoderConfig& config) const {
    if (bits.rows() != config.n_layers || bits.cols() != config.n_heads) {
        throw ContractError("head mask for '" + language + "' has shape " + shape_str(bits.rows(), bits.cols()) +
                            ", encoder has " + shape_str(config.n_layers, config.n_heads));
    }
}

int HeadMask::enabled_count() const { return static_cast<int>((bits.array() != 0.0).count()); }

std::vector<std::pair<int, int>> HeadMask::disabled_heads() const {
    std::vector<std::pair<int, int>> out;
    for (int l = 0; l < bits.rows(); ++l)
        for (int h = 0; h < bits.cols(); ++h)
            if (!enabled(l, h)) out.emplace_back(l, h);
    return out;
}

bool HeadMask::operator==(const HeadMask& other) const {
    return bits.rows() == other.bits.rows() && bits.cols() == other.bits.cols() && bits == other.bits;
}

void SoftMask::validate() const {
    if (!weights.allFinite()) throw ContractError("soft mask for '" + language + "' has non-finite weights");
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ContractError("keep_fraction must lie in (0, 1]");
}

SoftMask SoftMask::from_static(const HeadMask& mask, double keep_fraction, double init_value) {
    mask.validate();
    SoftMask soft{mask.language, mask.bits * init_value, keep_fraction, init_value};
    soft.validate();
    return soft;
}

HeadMask binarize(const SoftMask& soft) {
    soft.validate();
    const Eigen::Index total = soft.weights.size();
    const auto zeros = static_cast<std::size_t>(std::floor((1.0 - soft.keep_fraction) * static_cast<double>(total) + 1e-9));
    HeadMask out{soft.language, Eigen::MatrixXd::Ones(soft.weights.rows(), soft.weights.cols())};
    const Eigen::Index cols = soft.weights.cols();
    for (auto i : smallest(row_major(soft.weights), zeros)) out.bits(i / cols, i % cols) = 0.0;
    return out;
}

Eigen::MatrixXd ste_backward(const Eigen::MatrixXd& grad_at_binary) { return grad_at_binary; }

HeadMask union_masks(const std::vector<HeadMask>& masks) {
    if (masks.empty()) throw UsageError("union of zero masks");
    HeadMask out = masks.front();
    for (const auto& m : masks) {
        m.validate();
        if (m.bits.rows() != out.bits.rows() || m.bits.cols() != out.bits.cols()) {
            throw ContractError("cannot unite masks of shapes " + shape_str(out.bits.rows(), out.bits.cols()) +
                                " and " + shape_str(m.bits.rows(), m.bits.cols()));
        }
        out.bits = out.bits.cwiseMax(m.bits);
    }
    return out;
}

std::vector<Eigen::Index> prunable_indices(const ParamLayout& layout) {
    std::vector<Eigen::Index> out;
    for (const auto& s : layout.slots())
        if (s.prunable)
            for (Eigen::Index i = 0; i < s.size(); ++i) out.push_back(s.offset + i);
    std::sort(out.begin(), out.end());
    return out;
}

ParamMask ParamMask::all_enabled(const std::string& language, const ParamLayout& layout) {
    return ParamMask{language, Eigen::VectorXd::Ones(layout.size()), prunable_indices(layout)};
}

int ParamMask::disabled_count() const { return static_cast<int>((values.array() == 0.0).count()); }

ParamSoftMask ParamSoftMask::from_static(const ParamMask& mask, double keep_fraction, double init_value) {
    ParamSoftMask soft{mask.language, mask.eligible, Eigen::VectorXd(static_cast<Eigen::Index>(mask.eligible.size())),
                       keep_fraction};
    for (std::size_t i = 0; i < mask.eligible.size(); ++i)
        soft.weights[static_cast<Eigen::Index>(i)] = mask.values[mask.eligible[i]] * init_value;
    return soft;
}

ParamMask binarize(const ParamSoftMask& soft, Eigen::Index n_params) {
    if (!soft.weights.allFinite()) throw ContractError("parameter soft mask has non-finite weights");
    ParamMask out{soft.language, Eigen::VectorXd::Ones(n_params), soft.eligible};
    const auto zeros = static_cast<std::size_t>(
        std::floor((1.0 - soft.keep_fraction) * static_cast<double>(soft.weights.size()) + 1e-9));
    for (auto i : smallest(soft.weights, zeros)) out.values[soft.eligible[static_cast<std::size_t>(i)]] = 0.0;
    return out;
}

ImportanceMatrix head_importance(const ModelState& state, const std::vector<EncodedSentence>& data,
                                 const HeadMask& active) {
    if (data.empty()) throw UsageError("head importance needs at least one sentence");
    active.check_shape(state.config.encoder);
    ImportanceMatrix out;
    out.scores = Eigen::MatrixXd::Zero(active.bits.rows(), active.bits.cols());
    out.active = active.bits;
    Eigen::VectorXd scratch = state.zeros();
    for (const auto& s : data) {
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(active.bits.rows(), active.bits.cols());
        sentence_loss(state, s, &active.bits, &scratch, &g);
        out.scores += g.cwiseAbs();
    }
    out.scores /= static_cast<double>(data.size());
    return out;
}

void PruneConfig::validate() const {
    if (!(rate > 0.0 && rate <= 1.0)) throw UsageError("prune rate must lie in (0, 1]");
    if (!(stop_ratio >= 0.0 && stop_ratio <= 1.0)) throw UsageError("stop ratio must lie in [0, 1]");
}

int prune_batch_size(double rate, int total) {
    return std::max(1, static_cast<int>(std::floor(rate * static_cast<double>(total) + 1e-9)));
}

PruneResult iterative_prune(const std::string& language, const ParserModel& model, const Treebank& train,
                            const Treebank& dev, const PruneConfig& config) {
    config.validate();
    if (dev.sentences.empty()) throw UsageError("pruning '" + language + "' needs a non-empty dev set");
    if (train.sentences.empty()) throw UsageError("pruning '" + language + "' needs a non-empty training set");
    const auto& enc = model.state.config.encoder;

    std::vector<EncodedSentence> scored;
    if (config.importance_sentences == 0 || config.importance_sentences >= train.sentences.size()) {
        scored = encode_treebank(model, train);
    } else {
        for (const auto& s : sample_sentences(train, config.importance_sentences, config.seed, true))
            scored.push_back(encode_sentence(model, s));
    }
    const auto dev_enc = encode_treebank(model, dev);

    PruneResult out{HeadMask::all_enabled(language, enc), {}};
    out.trace.original_dev_las = evaluate(model, model.state, dev_enc, dev.sentences, nullptr).las;
    const int k = prune_batch_size(config.rate, enc.total_heads());

    while (out.mask.enabled_count() > k) {
        const auto hi = head_importance(model.state, scored, out.mask);
        std::vector<std::tuple<double, int, int>> ranked;
        for (int l = 0; l < enc.n_layers; ++l)
            for (int h = 0; h < enc.n_heads; ++h)
                if (out.mask.enabled(l, h)) ranked.emplace_back(hi.scores(l, h), l, h);
        std::stable_sort(ranked.begin(), ranked.end());

        PruningIteration it;
        HeadMask candidate = out.mask;
        for (int i = 0; i < k; ++i) {
            const auto [score, l, h] = ranked[static_cast<std::size_t>(i)];
            candidate.bits(l, h) = 0.0;
            it.removed.emplace_back(l, h);
        }
        it.remaining = candidate.enabled_count();
        it.dev_las = evaluate(model, model.state, dev_enc, dev.sentences, &candidate.bits).las;
        it.ratio = ratio_to(it.dev_las, out.trace.original_dev_las);
        it.accepted = it.dev_las >= config.stop_ratio * out.trace.original_dev_las;
        out.trace.iterations.push_back(it);
        if (!it.accepted) break;
        out.mask = std::move(candidate);
    }
    return out;
}

ModelState apply_param_mask(const ModelState& state, const ParamMask& mask) {
    if (mask.values.size() != state.values.size()) throw ContractError("parameter mask size mismatch");
    ModelState out = state;
    out.values = state.values.cwiseProduct(mask.values);
    return out;
}

ParamPruneResult magnitude_prune(const std::string& language, const ParserModel& model, const Treebank& dev,
                                 const PruneConfig& config) {
    config.validate();
    if (dev.sentences.empty()) throw UsageError("pruning '" + language + "' needs a non-empty dev set");
    const auto dev_enc = encode_treebank(model, dev);
    ParamPruneResult out{ParamMask::all_enabled(language, *model.state.layout), {}};
    out.trace.original_dev_las = evaluate(model, model.state, dev_enc, dev.sentences, nullptr).las;

    const auto& eligible = out.mask.eligible;
    const int total = static_cast<int>(eligible.size());
    const int k = prune_batch_size(config.rate, total);
    std::vector<Eigen::Index> ranked(eligible);
    std::stable_sort(ranked.begin(), ranked.end(), [&](Eigen::Index a, Eigen::Index b) {
        return std::abs(model.state.values[a]) < std::abs(model.state.values[b]);
    });

    std::size_t next = 0;
    int active = total;
    while (active > k) {
        PruningIteration it;
        ParamMask candidate = out.mask;
        for (int i = 0; i < k; ++i, ++next) {
            candidate.values[ranked[next]] = 0.0;
            it.removed_params.push_back(ranked[next]);
        }
        it.remaining = active - k;
        it.dev_las = evaluate(model, apply_param_mask(model.state, candidate), dev_enc, dev.sentences, nullptr).las;
        it.ratio = ratio_to(it.dev_las, out.trace.original_dev_las);
        it.accepted = it.dev_las >= config.stop_ratio * out.trace.original_dev_las;
        out.trace.iterations.push_back(it);
        if (!it.accepted) break;
        out.mask = std::move(candidate);
        active -= k;
    }
    return out;
}

AblationSpec parse_ablation(const std::string& text) {
    if (text == "shuffle") return {AblationKind::shuffle, 0};
    if (text == "dr20") return {AblationKind::random_init_dynamic, 0};
    const auto colon = text.find(':');
    if (colon != std::string::npos) {
        const auto kind = text.substr(0, colon);
        int n = 0;
        try {
            std::size_t used = 0;
            n = std::stoi(text.substr(colon + 1), &used);
            if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw UsageError("ablation '" + text + "': head count is not an integer");
        }
        if (n < 0) throw UsageError("ablation '" + text + "': negative head count");
        if (kind == "random") return {AblationKind::random_n, n};
        if (kind == "bad") return {AblationKind::bad, n};
    }
    throw UsageError("unknown ablation kind '" + text + "' (expected shuffle, random:N, bad:N or dr20)");
}

HeadMask make_ablation_mask(const AblationSpec& spec, const HeadMask& reference,
                            const std::vector<std::pair<int, int>>& forbidden, std::uint64_t seed) {
    reference.validate();
    const int rows = static_cast<int>(reference.bits.rows());
    const int cols = static_cast<int>(reference.bits.cols());
    const int total = rows * cols;
    auto rng = make_rng(seed, 0xab1a);

    std::vector<int> pool;
    int n = spec.n;
    switch (spec.kind) {
        case AblationKind::shuffle:
            n = reference.disabled_count();
            [[fallthrough]];
        case AblationKind::random_n:
            for (int i = 0; i < total; ++i) pool.push_back(i);
            break;
        case AblationKind::bad: {
            std::vector<char> banned(static_cast<std::size_t>(total), 0);
            for (const auto& [l, h] : reference.disabled_heads()) banned[static_cast<std::size_t>(l * cols + h)] = 1;
            for (const auto& [l, h] : forbidden) {
                if (l < 0 || l >= rows || h < 0 || h >= cols) throw ContractError("forbidden head out of range");
                banned[static_cast<std::size_t>(l * cols + h)] = 1;
            }
            for (int i = 0; i < total; ++i)
                if (!banned[static_cast<std::size_t>(i)]) pool.push_back(i);
            break;
        }
        case AblationKind::random_init_dynamic:
            throw ContractError("random_init_dynamic produces a soft mask");
    }
    if (n > static_cast<int>(pool.size())) {
        throw UsageError("cannot disable " + std::to_string(n) + " heads: only " + std::to_string(pool.size()) +
                         " are eligible");
    }
    shuffle(pool, rng);
    HeadMask out{reference.language, Eigen::MatrixXd::Ones(rows, cols)};
    for (int i = 0; i < n; ++i) out.bits(pool[static_cast<std::size_t>(i)] / cols, pool[static_cast<std::size_t>(i)] % cols) = 0.0;
    return out;
}

SoftMask make_random_soft_mask(const HeadMask& reference, double keep_fraction, double init_value,
                               std::uint64_t seed) {
    auto rng = make_rng(seed, 0xd720);
    SoftMask soft{reference.language, Eigen::MatrixXd(reference.bits.rows(), reference.bits.cols()), keep_fraction,
                  init_value};
    for (Eigen::Index l = 0; l < soft.weights.rows(); ++l)
        for (Eigen::Index h = 0; h < soft.weights.cols(); ++h) soft.weights(l, h) = init_value * (0.5 + uniform01(rng));
    soft.validate();
    return soft;
}

std::string format_mask_file(const MaskFile& file) {
    file.mask.validate();
    const auto& bits = file.mask.bits;
    json j;
    j["language"] = file.mask.language;
    j["n_layers"] = bits.rows();
    j["n_heads"] = bits.cols();
    json b = json::array();
    for (Eigen::Index l = 0; l < bits.rows(); ++l)
        for (Eigen::Index h = 0; h < bits.cols(); ++h) b.push_back(static_cast<int>(bits(l, h)));
    j["bits"] = b;
    if (file.soft_weights) {
        const auto& w = *file.soft_weights;
        if (w.rows() != bits.rows() || w.cols() != bits.cols()) throw ContractError("soft weights shape mismatch");
        json s = json::array();
        for (Eigen::Index l = 0; l < w.rows(); ++l)
            for (Eigen::Index h = 0; h < w.cols(); ++h) s.push_back(w(l, h));
        j["soft_weights"] = s;
    }
    j["provenance"] = {{"seeds", file.provenance.seeds},
                       {"stop_ratio", file.provenance.stop_ratio},
                       {"prune_rate", file.provenance.prune_rate},
                       {"dev_las", file.provenance.dev_las}};
    return j.dump(2) + "\n";
}

MaskFile parse_mask_file(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("mask file is not valid JSON: ") + e.what());
    }
    try {
        MaskFile out;
        out.mask.language = j.at("language").get<std::string>();
        const auto rows = j.at("n_layers").get<Eigen::Index>();
        const auto cols = j.at("n_heads").get<Eigen::Index>();
        if (rows <= 0 || cols <= 0) throw FormatError("mask file: non-positive shape");
        const auto bits = j.at("bits").get<std::vector<int>>();
        if (static_cast<Eigen::Index>(bits.size()) != rows * cols) {
            throw FormatError("mask file: expected " + std::to_string(rows * cols) + " bits, found " +
                              std::to_string(bits.size()));
        }
        out.mask.bits.resize(rows, cols);
        for (Eigen::Index i = 0; i < rows * cols; ++i) {
            const int v = bits[static_cast<std::size_t>(i)];
            if (v != 0 && v != 1) throw FormatError("mask file: bits must be 0 or 1");
            out.mask.bits(i / cols, i % cols) = v;
        }
        if (j.contains("soft_weights") && !j["soft_weights"].is_null()) {
            const auto w = j["soft_weights"].get<std::vector<double>>();
            if (static_cast<Eigen::Index>(w.size()) != rows * cols) throw FormatError("mask file: soft_weights size");
            Eigen::MatrixXd m(rows, cols);
            for (Eigen::Index i = 0; i < rows * cols; ++i) m(i / cols, i % cols) = w[static_cast<std::size_t>(i)];
            out.soft_weights = m;
        }
        if (j.contains("provenance")) {
            const auto& p = j["provenance"];
            out.provenance.seeds = p.value("seeds", std::vector<std::uint64_t>{});
            out.provenance.stop_ratio = p.value("stop_ratio", 0.0);
            out.provenance.prune_rate = p.value("prune_rate", 0.0);
            out.provenance.dev_las = p.value("dev_las", std::vector<double>{});
        }
        return out;
    } catch (const json::exception& e) {
        throw FormatError(std::string("mask file: ") + e.what());
    }
}

void write_mask_file(const std::string& path, const MaskFile& file) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write mask file " + path);
    out << format_mask_file(file);
    if (!out) throw UsageError("failed writing mask file " + path);
}

MaskFile read_mask_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open mask file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_mask_file(buf.str());
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

}  // namespace snp
