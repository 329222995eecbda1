#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace snp {

struct LanguageMeta {
    std::string code;
    std::vector<double> typo_vector;
    std::optional<std::string> mask_path;
};

// Header-bearing CSV `lang,f1,...,fK`, one row per language.
std::map<std::string, LanguageMeta> parse_language_vectors(std::string_view text);
std::map<std::string, LanguageMeta> load_language_vectors(const std::string& path);
std::string format_language_vectors(const std::map<std::string, LanguageMeta>& langs);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace snp
