#include "snp/language_vectors.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "snp/errors.hpp"

namespace snp {

namespace {

std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

std::map<std::string, LanguageMeta> parse_language_vectors(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    long row = 0;
    std::size_t k = 0;
    std::map<std::string, LanguageMeta> out;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_commas(line);
        if (row == 1) {
            if (cells.size() < 2 || cells[0] != "lang") {
                throw FormatError("language-vector header must be lang,f1,...,fK", row);
            }
            k = cells.size() - 1;
            continue;
        }
        if (cells.size() != k + 1) {
            throw FormatError("expected " + std::to_string(k) + " features, found " +
                                  std::to_string(cells.empty() ? 0 : cells.size() - 1),
                              row);
        }
        LanguageMeta meta;
        meta.code = cells[0];
        if (meta.code.empty()) throw FormatError("empty language code", row);
        for (std::size_t i = 1; i < cells.size(); ++i) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cells[i], &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (cells[i].empty() || used != cells[i].size() || !std::isfinite(v)) {
                throw FormatError("non-numeric feature '" + cells[i] + "'", row);
            }
            meta.typo_vector.push_back(v);
        }
        if (out.count(meta.code)) throw FormatError("duplicate language code '" + meta.code + "'", row);
        out.emplace(meta.code, std::move(meta));
    }
    if (row == 0) throw FormatError("language-vector file is empty");
    return out;
}

std::map<std::string, LanguageMeta> load_language_vectors(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open language-vector file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_language_vectors(buf.str());
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

std::string format_language_vectors(const std::map<std::string, LanguageMeta>& langs) {
    std::ostringstream out;
    const std::size_t k = langs.empty() ? 0 : langs.begin()->second.typo_vector.size();
    out << "lang";
    for (std::size_t i = 1; i <= k; ++i) out << ",f" << i;
    out << '\n';
    for (const auto& [code, meta] : langs) {
        out << code;
        for (double v : meta.typo_vector) out << ',' << std::setprecision(17) << v;
        out << '\n';
    }
    return out.str();
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ContractError("cosine of vectors with different lengths");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw UsageError("cosine similarity of a zero-norm vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace snp
