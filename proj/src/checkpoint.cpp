#include "snp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "snp/errors.hpp"

namespace snp {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'S', 'N', 'P', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u64(std::string& out, std::uint64_t v) {
    char buf[8];
    std::memcpy(buf, &v, 8);
    out.append(buf, 8);
}

std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
    if (pos + 8 > in.size()) throw FormatError("checkpoint truncated");
    std::uint64_t v;
    std::memcpy(&v, in.data() + pos, 8);
    pos += 8;
    return v;
}

json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

Eigen::MatrixXd matrix_from(const json& j) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    if (rows.empty()) return {};
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size()) throw FormatError("checkpoint: ragged matrix");
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return m;
}

json mask_json(const LanguageMask& m) {
    json j;
    j["mode"] = std::string(to_string(m.mode));
    switch (m.mode) {
        case MaskMode::none: break;
        case MaskMode::head_static: j["bits"] = matrix_json(m.head.bits); break;
        case MaskMode::head_dynamic:
            j["soft_weights"] = matrix_json(m.soft.weights);
            j["keep_fraction"] = m.soft.keep_fraction;
            j["init_value"] = m.soft.init_value;
            break;
        case MaskMode::param_static: {
            std::vector<int> bits;
            for (auto i : m.param.eligible) bits.push_back(static_cast<int>(m.param.values[i]));
            j["param_bits"] = bits;
            break;
        }
        case MaskMode::param_dynamic:
            j["param_soft_weights"] = std::vector<double>(m.param_soft.weights.data(),
                                                          m.param_soft.weights.data() + m.param_soft.weights.size());
            j["keep_fraction"] = m.param_soft.keep_fraction;
            break;
    }
    return j;
}

LanguageMask mask_from(const std::string& lang, const json& j, const ParamLayout& layout) {
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "none") return LanguageMask{};
    if (mode == "static") return LanguageMask::fixed(HeadMask{lang, matrix_from(j.at("bits"))});
    if (mode == "dynamic") {
        SoftMask soft{lang, matrix_from(j.at("soft_weights")), j.at("keep_fraction").get<double>(),
                      j.at("init_value").get<double>()};
        return LanguageMask::dynamic(std::move(soft));
    }
    auto param = ParamMask::all_enabled(lang, layout);
    if (mode == "magnitude_static") {
        const auto bits = j.at("param_bits").get<std::vector<int>>();
        if (bits.size() != param.eligible.size()) throw FormatError("checkpoint: parameter mask length mismatch");
        for (std::size_t i = 0; i < bits.size(); ++i) param.values[param.eligible[i]] = bits[i];
        return LanguageMask::fixed(std::move(param));
    }
    if (mode == "magnitude_dynamic") {
        const auto w = j.at("param_soft_weights").get<std::vector<double>>();
        if (w.size() != param.eligible.size()) throw FormatError("checkpoint: parameter mask length mismatch");
        ParamSoftMask soft{lang, param.eligible, Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size())),
                           j.at("keep_fraction").get<double>()};
        return LanguageMask::dynamic(std::move(soft), layout.size());
    }
    throw FormatError("checkpoint: unknown mask mode '" + mode + "'");
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    const auto& m = ckpt.model;
    const auto& enc = m.state.config.encoder;
    const auto& par = m.state.config.parser;
    json h;
    h["format_version"] = 1;
    h["encoder"] = {{"n_layers", enc.n_layers}, {"n_heads", enc.n_heads}, {"d_model", enc.d_model},
                    {"d_ff", enc.d_ff},         {"vocab_size", enc.vocab_size}, {"max_len", enc.max_len},
                    {"seed", enc.seed}};
    h["parser"] = {{"arc_dim", par.arc_dim}, {"tag_dim", par.tag_dim}, {"n_labels", par.n_labels}};
    h["words"] = m.words.items();
    h["labels"] = m.labels.items();
    h["training_labels"] = {{"labels", m.training_labels.labels}, {"counts", m.training_labels.counts}};
    json masks = json::object();
    for (const auto& [lang, mask] : ckpt.masks) masks[lang] = mask_json(mask);
    h["masks"] = masks;
    h["metadata"] = ckpt.metadata;

    const std::string header = h.dump();
    std::string out(kMagic, 8);
    put_u64(out, header.size());
    out += header;
    const auto& v = m.state.values;
    put_u64(out, static_cast<std::uint64_t>(v.size()));
    out.append(reinterpret_cast<const char*>(v.data()), static_cast<std::size_t>(v.size()) * sizeof(double));
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw FormatError("not a checkpoint file");
    std::size_t pos = 8;
    const auto header_len = get_u64(bytes, pos);
    if (pos + header_len > bytes.size()) throw FormatError("checkpoint truncated");
    json h;
    try {
        h = json::parse(bytes.substr(pos, header_len));
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("checkpoint header: ") + e.what());
    }
    pos += header_len;

    Checkpoint ckpt;
    try {
        if (h.at("format_version").get<int>() != 1) throw FormatError("unsupported checkpoint version");
        ModelConfig cfg;
        const auto& e = h.at("encoder");
        cfg.encoder.n_layers = e.at("n_layers");
        cfg.encoder.n_heads = e.at("n_heads");
        cfg.encoder.d_model = e.at("d_model");
        cfg.encoder.d_ff = e.at("d_ff");
        cfg.encoder.vocab_size = e.at("vocab_size");
        cfg.encoder.max_len = e.at("max_len");
        cfg.encoder.seed = e.at("seed");
        const auto& p = h.at("parser");
        cfg.parser.arc_dim = p.at("arc_dim");
        cfg.parser.tag_dim = p.at("tag_dim");
        cfg.parser.n_labels = p.at("n_labels");
        cfg.validate();
        auto& model = ckpt.model;
        model.state.config = cfg;
        model.state.layout = std::make_shared<const ParamLayout>(cfg);
        model.words = Vocab(h.at("words").get<std::vector<std::string>>(), kUnknownToken);
        model.labels = Vocab(h.at("labels").get<std::vector<std::string>>(), kUnknownLabel);
        const auto tl = h.at("training_labels");
        const auto labels = tl.at("labels").get<std::vector<std::string>>();
        const auto counts = tl.at("counts").get<std::vector<std::int64_t>>();
        if (labels.size() != counts.size()) throw FormatError("checkpoint: training label counts mismatch");
        for (std::size_t i = 0; i < labels.size(); ++i) model.training_labels.add(labels[i], counts[i]);
        if (model.words.size() != cfg.encoder.vocab_size || model.labels.size() != cfg.parser.n_labels) {
            throw FormatError("checkpoint: vocabulary sizes disagree with the configuration");
        }
        for (const auto& [lang, mj] : h.at("masks").items()) {
            ckpt.masks[lang] = mask_from(lang, mj, *model.state.layout);
            if (ckpt.masks[lang].is_head()) ckpt.masks[lang].head.check_shape(cfg.encoder);
        }
        ckpt.metadata = h.at("metadata").get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint header: ") + e.what());
    } catch (const ContractError& e) {
        throw FormatError(std::string("checkpoint header: ") + e.what());
    }

    const auto n = get_u64(bytes, pos);
    if (static_cast<Eigen::Index>(n) != ckpt.model.state.layout->size()) {
        throw FormatError("checkpoint holds " + std::to_string(n) + " parameters, configuration needs " +
                          std::to_string(ckpt.model.state.layout->size()));
    }
    if (pos + n * sizeof(double) != bytes.size()) throw FormatError("checkpoint parameter block has the wrong size");
    ckpt.model.state.values.resize(static_cast<Eigen::Index>(n));
    std::memcpy(ckpt.model.state.values.data(), bytes.data() + pos, n * sizeof(double));
    return ckpt;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const auto bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write checkpoint " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw UsageError("failed writing checkpoint " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open checkpoint " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return deserialize_checkpoint(buf.str());
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

}  // namespace snp
