#include "snp/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "snp/errors.hpp"

namespace snp {

namespace {

std::string fixed4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

LanguagePair ordered(const std::string& a, const std::string& b) { return a < b ? LanguagePair{a, b} : LanguagePair{b, a}; }

struct Accum {
    std::size_t negative = 0;
    std::size_t count = 0;
    double sum = 0.0;

    void add(double c) {
        negative += c < 0.0;
        ++count;
        sum += c;
    }
    double pct() const { return count ? 100.0 * static_cast<double>(negative) / static_cast<double>(count) : 0.0; }
    double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
};

Accum window_accum(const ConflictTrace& trace, std::size_t end, std::size_t width) {
    Accum a;
    for (std::size_t i = end - width; i < end; ++i)
        for (const auto& [pair, c] : trace.cosines[i]) a.add(c);
    return a;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write " + path.string());
    out << text;
    if (!out) throw UsageError("failed writing " + path.string());
}

using Key = std::tuple<std::string, std::string, std::string>;  // framework, method, language

std::map<Key, double> mean_las(const std::vector<LasRecord>& las) {
    std::map<Key, std::pair<double, int>> acc;
    for (const auto& r : las) {
        auto& [sum, n] = acc[{r.framework, r.method, r.test_lang}];
        sum += r.las;
        ++n;
    }
    std::map<Key, double> out;
    for (const auto& [k, v] : acc) out[k] = v.first / v.second;
    return out;
}

}  // namespace

PairCosines pairwise_cosines(const std::map<std::string, Eigen::VectorXd>& grads) {
    PairCosines out;
    for (auto a = grads.begin(); a != grads.end(); ++a) {
        for (auto b = std::next(a); b != grads.end(); ++b) {
            if (a->second.size() != b->second.size()) {
                throw ContractError("gradients of '" + a->first + "' and '" + b->first + "' differ in length");
            }
            const double na = a->second.norm();
            const double nb = b->second.norm();
            if (na == 0.0 || nb == 0.0) {
                ++out.excluded;
                continue;
            }
            const double c = a->second.dot(b->second) / (na * nb);
            out.cosines[ordered(a->first, b->first)] = std::clamp(c, -1.0, 1.0);
        }
    }
    return out;
}

ConflictTrace ConflictTrace::from_run(const RunTrace& trace) {
    ConflictTrace out;
    for (const auto& row : trace.rows()) {
        if (row.record != "cosine") continue;
        if (out.iterations.empty() || out.iterations.back() != row.iteration) {
            out.iterations.push_back(row.iteration);
            out.cosines.emplace_back();
        }
        out.cosines.back()[ordered(row.language, row.other)] = row.value;
    }
    return out;
}

ConflictReport conflict_stats(const ConflictTrace& trace, int window) {
    if (window <= 0) throw UsageError("conflict window must be positive");
    if (static_cast<std::size_t>(window) > trace.size()) {
        throw UsageError("conflict window " + std::to_string(window) + " exceeds trace length " +
                         std::to_string(trace.size()));
    }
    ConflictReport out;
    out.window = window;
    Accum total;
    std::map<LanguagePair, Accum> pairs;
    for (std::size_t i = trace.size() - static_cast<std::size_t>(window); i < trace.size(); ++i) {
        for (const auto& [pair, c] : trace.cosines[i]) {
            total.add(c);
            pairs[pair].add(c);
        }
    }
    if (total.count == 0) throw UsageError("no cosines inside the conflict window");
    out.conflict_pct = total.pct();
    out.mean_cosine = total.mean();
    out.count = total.count;
    for (const auto& [pair, a] : pairs) out.per_pair[pair] = PairConflict{a.pct(), a.mean(), a.count};
    return out;
}

PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw UsageError("pearson: series lengths differ");
    const std::size_t n = x.size();
    if (n < 3) throw UsageError("pearson: need at least 3 points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw UsageError("pearson: r is undefined for a zero-variance series");
    PearsonResult out;
    out.n = n;
    out.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    const double dof = static_cast<double>(n - 2);
    if (std::abs(out.r) >= 1.0) {
        out.p_value = 0.0;
    } else {
        const double t = out.r * std::sqrt(dof / (1.0 - out.r * out.r));
        boost::math::students_t dist(dof);
        out.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
    }
    return out;
}

InterferenceSeries interference_series(const ConflictTrace& baseline, const ConflictTrace& method, int smoothing) {
    if (smoothing <= 0) throw UsageError("smoothing window must be positive");
    if (baseline.iterations != method.iterations) throw UsageError("traces are not aligned by iteration");
    const auto w = static_cast<std::size_t>(smoothing);
    InterferenceSeries out;
    for (std::size_t end = w; end <= baseline.size(); ++end) {
        const auto b = window_accum(baseline, end, w);
        const auto m = window_accum(method, end, w);
        if (b.count == 0 || m.count == 0) continue;
        out.conflict_decrease.push_back(b.pct() - m.pct());
        out.cosine_increase.push_back(m.mean() - b.mean());
    }
    return out;
}

RareUnseenCounts count_rare_unseen(const LabelVocab& training_labels, const Treebank& gold,
                                   const Treebank& predicted) {
    if (gold.sentences.size() != predicted.sentences.size()) throw ContractError("prediction count mismatch");
    std::set<std::string> test_labels;
    for (const auto& s : gold.sentences)
        for (const auto& t : s.tokens) test_labels.insert(t.deprel);
    const auto rarity = classify_label_rarity(training_labels, test_labels);
    RareUnseenCounts out;
    for (std::size_t i = 0; i < gold.sentences.size(); ++i) {
        const auto& g = gold.sentences[i].tokens;
        const auto& p = predicted.sentences[i].tokens;
        if (g.size() != p.size()) throw ContractError("prediction length mismatch");
        for (std::size_t t = 0; t < g.size(); ++t) {
            const auto r = rarity.at(g[t].deprel);
            if (r == Rarity::seen) continue;
            auto& tally = r == Rarity::rare ? out.rare : out.unseen;
            ++tally.instances;
            tally.labels.insert(g[t].deprel);
            if (p[t].deprel == g[t].deprel) {
                ++tally.correct;
                tally.labels_correct.insert(g[t].deprel);
            }
        }
    }
    return out;
}

std::vector<WinnerRow> winners(const std::vector<LasRecord>& las, std::vector<BestShare>* shares) {
    const auto means = mean_las(las);
    // scope -> language -> (method label, LAS)
    std::map<std::string, std::map<std::string, std::vector<std::pair<std::string, double>>>> table;
    for (const auto& [key, v] : means) {
        const auto& [framework, method, lang] = key;
        table[framework][lang].emplace_back(method, v);
        table["all"][lang].emplace_back(framework + ":" + method, v);
    }
    std::vector<WinnerRow> rows;
    std::map<std::string, std::map<std::string, double>> wins;
    for (const auto& [scope, langs] : table) {
        for (const auto& [lang, entries] : langs) {
            for (const auto& e : entries) wins[scope].emplace(e.first, 0.0);
            double best = -1.0;
            for (const auto& e : entries) best = std::max(best, e.second);
            std::vector<std::string> top;
            for (const auto& e : entries)
                if (e.second == best) top.push_back(e.first);
            std::string joined;
            for (const auto& m : top) {
                joined += (joined.empty() ? "" : "|") + m;
                wins[scope][m] += 1.0 / static_cast<double>(top.size());
            }
            rows.push_back(WinnerRow{scope, lang, joined, best});
        }
    }
    if (shares) {
        shares->clear();
        for (const auto& [scope, per_method] : wins) {
            const double n_lang = static_cast<double>(table[scope].size());
            for (const auto& [m, w] : per_method) shares->push_back(BestShare{scope, m, 100.0 * w / n_lang});
        }
    }
    return rows;
}

std::string format_las_csv(const std::vector<LasRecord>& las) {
    std::string out = "test_lang,method,framework,seed,LAS,UAS\n";
    for (const auto& r : las) {
        out += r.test_lang + ',' + r.method + ',' + r.framework + ',' + std::to_string(r.seed) + ',' + fixed4(r.las) +
               ',' + fixed4(r.uas) + '\n';
    }
    return out;
}

std::vector<LasRecord> parse_las_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "test_lang,method,framework,seed,LAS,UAS") {
        throw FormatError("LAS table header must be 'test_lang,method,framework,seed,LAS,UAS'", 1);
    }
    std::vector<LasRecord> out;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != 6) throw FormatError("expected 6 fields, found " + std::to_string(cells.size()), lineno);
        LasRecord r{cells[0], cells[1], cells[2], 0, 0.0, 0.0};
        try {
            r.seed = std::stoull(cells[3]);
            r.las = std::stod(cells[4]);
            r.uas = std::stod(cells[5]);
        } catch (const std::exception&) {
            throw FormatError("malformed number", lineno);
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::string format_winners_csv(const std::vector<WinnerRow>& rows) {
    std::string out = "scope,test_lang,best_method,LAS\n";
    for (const auto& r : rows) out += r.scope + ',' + r.test_lang + ',' + r.method + ',' + fixed4(r.las) + '\n';
    return out;
}

std::string format_best_csv(const std::vector<BestShare>& shares) {
    std::string out = "scope,method,best_pct\n";
    for (const auto& s : shares) out += s.scope + ',' + s.method + ',' + fixed4(s.best_pct) + '\n';
    return out;
}

std::string format_conflicts_csv(const std::vector<ConflictRecord>& rows) {
    std::string out = "framework,method,seed,window,conflict_pct,mean_cosine\n";
    for (const auto& r : rows) {
        out += r.framework + ',' + r.method + ',' + std::to_string(r.seed) + ',' + std::to_string(r.window) + ',' +
               fixed4(r.conflict_pct) + ',' + fixed4(r.mean_cosine) + '\n';
    }
    return out;
}

std::string format_rare_unseen_csv(const std::vector<RareUnseenRecord>& rows) {
    struct Agg {
        std::size_t instances = 0, correct = 0, labels = 0, labels_correct = 0;
    };
    std::map<std::tuple<std::string, std::string, std::string>, Agg> agg;
    for (const auto& r : rows) {
        for (const auto& [name, tally] : {std::pair<std::string, const RareLabelTally*>{"unseen", &r.counts.unseen},
                                          std::pair<std::string, const RareLabelTally*>{"rare", &r.counts.rare}}) {
            auto& a = agg[{r.framework, r.method, name}];
            a.instances += tally->instances;
            a.correct += tally->correct;
            a.labels += tally->labels.size();
            a.labels_correct += tally->labels_correct.size();
        }
    }
    std::string out = "framework,method,category,correct,instances,pct_correct,labels_correct,labels_total\n";
    for (const auto& [key, a] : agg) {
        const auto& [framework, method, category] = key;
        const double pct = a.instances ? 100.0 * static_cast<double>(a.correct) / static_cast<double>(a.instances) : 0.0;
        out += framework + ',' + method + ',' + category + ',' + std::to_string(a.correct) + ',' +
               std::to_string(a.instances) + ',' + fixed4(pct) + ',' + std::to_string(a.labels_correct) + ',' +
               std::to_string(a.labels) + '\n';
    }
    return out;
}

std::string format_density_csv(const std::vector<LasRecord>& las, const std::string& baseline_method) {
    const auto means = mean_las(las);
    std::string out = "framework,method,test_lang,relative_change\n";
    for (const auto& [key, v] : means) {
        const auto& [framework, method, lang] = key;
        if (method == baseline_method) continue;
        const auto base = means.find({framework, baseline_method, lang});
        if (base == means.end() || base->second == 0.0) continue;
        out += framework + ',' + method + ',' + lang + ',' + fixed4((v - base->second) / base->second) + '\n';
    }
    return out;
}

std::vector<std::string> emit_report(const ReportInputs& inputs, const std::string& dir) {
    if (inputs.las.empty()) throw UsageError("report needs LAS results for at least one method");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw UsageError("cannot create report directory " + dir + ": " + ec.message());
    const std::filesystem::path base(dir);
    std::vector<BestShare> shares;
    const auto rows = winners(inputs.las, &shares);
    const std::vector<std::pair<std::string, std::string>> files{
        {"las.csv", format_las_csv(inputs.las)},
        {"winners.csv", format_winners_csv(rows)},
        {"best.csv", format_best_csv(shares)},
        {"conflicts.csv", format_conflicts_csv(inputs.conflicts)},
        {"rare_unseen.csv", format_rare_unseen_csv(inputs.rare_unseen)},
        {"density.csv", format_density_csv(inputs.las, inputs.baseline_method)},
    };
    std::vector<std::string> written;
    for (const auto& [name, text] : files) {
        write_file(base / name, text);
        written.push_back((base / name).string());
    }
    return written;
}

}  // namespace snp
