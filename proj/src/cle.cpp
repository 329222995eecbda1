#include "snp/cle.hpp"

#include <limits>

#include "snp/errors.hpp"
#include "snp/treebank.hpp"

namespace snp {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// head[0] is unused. Scores for forbidden arcs are -inf.
std::vector<int> chu_liu_edmonds(const Eigen::MatrixXd& s) {
    const int m = static_cast<int>(s.rows());
    std::vector<int> head(static_cast<std::size_t>(m), -1);
    for (int d = 1; d < m; ++d) {
        int best = -1;
        double best_score = kNegInf;
        for (int h = 0; h < m; ++h) {
            if (h == d) continue;
            if (best < 0 || s(h, d) > best_score) {
                best = h;
                best_score = s(h, d);
            }
        }
        head[static_cast<std::size_t>(d)] = best;
    }

    // Find a cycle among the greedy heads.
    std::vector<int> color(static_cast<std::size_t>(m), 0);  // 0 new, 1 on current path, 2 done
    std::vector<int> cycle;
    color[0] = 2;
    for (int start = 1; start < m && cycle.empty(); ++start) {
        int v = start;
        std::vector<int> path;
        while (color[static_cast<std::size_t>(v)] == 0) {
            color[static_cast<std::size_t>(v)] = 1;
            path.push_back(v);
            v = head[static_cast<std::size_t>(v)];
        }
        if (color[static_cast<std::size_t>(v)] == 1) {
            for (int u = v;;) {
                cycle.push_back(u);
                u = head[static_cast<std::size_t>(u)];
                if (u == v) break;
            }
        }
        for (int u : path) color[static_cast<std::size_t>(u)] = 2;
    }
    if (cycle.empty()) return head;

    std::vector<char> in_cycle(static_cast<std::size_t>(m), 0);
    for (int v : cycle) in_cycle[static_cast<std::size_t>(v)] = 1;

    // Contract the cycle into one node placed last.
    std::vector<int> to_new(static_cast<std::size_t>(m), -1);
    std::vector<int> to_old;
    for (int v = 0; v < m; ++v) {
        if (!in_cycle[static_cast<std::size_t>(v)]) {
            to_new[static_cast<std::size_t>(v)] = static_cast<int>(to_old.size());
            to_old.push_back(v);
        }
    }
    const int c = static_cast<int>(to_old.size());
    const int m2 = c + 1;
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Constant(m2, m2, kNegInf);
    std::vector<int> enter_at(static_cast<std::size_t>(m), -1);  // outside u -> cycle node it enters
    std::vector<int> leave_from(static_cast<std::size_t>(m), -1);  // outside v -> cycle node it hangs from
    for (int u = 0; u < m; ++u) {
        for (int v = 1; v < m; ++v) {
            if (u == v) continue;
            const bool cu = in_cycle[static_cast<std::size_t>(u)];
            const bool cv = in_cycle[static_cast<std::size_t>(v)];
            if (!cu && !cv) {
                s2(to_new[static_cast<std::size_t>(u)], to_new[static_cast<std::size_t>(v)]) = s(u, v);
            } else if (!cu && cv) {
                const double val = s(u, v) - s(head[static_cast<std::size_t>(v)], v);
                const int nu = to_new[static_cast<std::size_t>(u)];
                if (enter_at[static_cast<std::size_t>(u)] < 0 || val > s2(nu, c)) {
                    s2(nu, c) = val;
                    enter_at[static_cast<std::size_t>(u)] = v;
                }
            } else if (cu && !cv) {
                const int nv = to_new[static_cast<std::size_t>(v)];
                if (leave_from[static_cast<std::size_t>(v)] < 0 || s(u, v) > s2(c, nv)) {
                    s2(c, nv) = s(u, v);
                    leave_from[static_cast<std::size_t>(v)] = u;
                }
            }
        }
    }

    const auto sub = chu_liu_edmonds(s2);
    std::vector<int> out = head;  // cycle nodes keep their greedy heads except the entry point
    for (int v = 1; v < m; ++v) {
        if (in_cycle[static_cast<std::size_t>(v)]) continue;
        const int h2 = sub[static_cast<std::size_t>(to_new[static_cast<std::size_t>(v)])];
        out[static_cast<std::size_t>(v)] = h2 == c ? leave_from[static_cast<std::size_t>(v)] : to_old[static_cast<std::size_t>(h2)];
    }
    const int entering = to_old[static_cast<std::size_t>(sub[static_cast<std::size_t>(c)])];
    out[static_cast<std::size_t>(enter_at[static_cast<std::size_t>(entering)])] = entering;
    return out;
}

std::vector<int> strip_root(const std::vector<int>& head) { return {head.begin() + 1, head.end()}; }

}  // namespace

double tree_score(const ArcScores& scores, const std::vector<int>& heads) {
    double total = 0.0;
    for (std::size_t d = 1; d <= heads.size(); ++d) total += scores(heads[d - 1], static_cast<Eigen::Index>(d));
    return total;
}

std::vector<int> decode_cle(const ArcScores& scores, bool single_root) {
    if (scores.rows() != scores.cols() || scores.rows() < 2) {
        throw ContractError("arc score matrix must be square with at least one token");
    }
    if (!scores.allFinite()) throw ContractError("arc scores must be finite");
    const Eigen::Index m = scores.rows();
    Eigen::MatrixXd s = scores;
    for (Eigen::Index i = 0; i < m; ++i) {
        s(i, i) = kNegInf;
        s(i, 0) = kNegInf;
    }

    auto heads = strip_root(chu_liu_edmonds(s));
    if (!single_root || root_children(heads) == 1) return heads;

    // Constrained variant: try each token as the only root child.
    std::vector<int> best;
    double best_score = kNegInf;
    for (Eigen::Index c = 1; c < m; ++c) {
        Eigen::MatrixXd sc = s;
        for (Eigen::Index d = 1; d < m; ++d)
            if (d != c) sc(0, d) = kNegInf;
        auto cand = strip_root(chu_liu_edmonds(sc));
        const double total = tree_score(scores, cand);
        if (best.empty() || total > best_score) {
            best = std::move(cand);
            best_score = total;
        }
    }
    return best;
}

}  // namespace snp
