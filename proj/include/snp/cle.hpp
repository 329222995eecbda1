#pragma once

#include <vector>

#include "snp/biaffine.hpp"

namespace snp {

// Maximum spanning arborescence rooted at 0 (Chu-Liu/Edmonds). Returns one
// head per token (index d-1 holds the head of token d). With `single_root`,
// exactly one token attaches to the root.
std::vector<int> decode_cle(const ArcScores& scores, bool single_root = true);

// Sum of S(head, d) over tokens.
double tree_score(const ArcScores& scores, const std::vector<int>& heads);

}  // namespace snp
