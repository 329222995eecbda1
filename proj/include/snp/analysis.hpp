#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "snp/run_trace.hpp"
#include "snp/treebank.hpp"

namespace snp {

using LanguagePair = std::pair<std::string, std::string>;  // ordered so first < second

struct PairCosines {
    std::map<LanguagePair, double> cosines;
    int excluded = 0;  // pairs dropped because a gradient had zero norm
};

// Cosine between every unordered pair of per-language gradients.
PairCosines pairwise_cosines(const std::map<std::string, Eigen::VectorXd>& grads);

// Pairwise cosines per iteration, in iteration order.
struct ConflictTrace {
    std::vector<long> iterations;
    std::vector<std::map<LanguagePair, double>> cosines;

    static ConflictTrace from_run(const RunTrace& trace);
    std::size_t size() const { return iterations.size(); }
};

struct PairConflict {
    double conflict_pct = 0.0;
    double mean_cosine = 0.0;
    std::size_t count = 0;
};

struct ConflictReport {
    int window = 0;
    double conflict_pct = 0.0;  // share of cosines strictly below zero, in percent
    double mean_cosine = 0.0;
    std::size_t count = 0;
    std::map<LanguagePair, PairConflict> per_pair;
};

inline constexpr int kDefaultConflictWindow = 50;

// Statistics over the trailing `window` iterations.
ConflictReport conflict_stats(const ConflictTrace& trace, int window = kDefaultConflictWindow);

struct PearsonResult {
    double r = 0.0;
    double p_value = 1.0;  // two-sided, Student t with n-2 degrees of freedom
    std::size_t n = 0;
};

PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y);

// Per-iteration series comparing a method's run with its baseline, aligned by
// iteration: the decrease in conflict percentage and the increase in mean
// cosine, each computed over a trailing window of `smoothing` iterations.
struct InterferenceSeries {
    std::vector<double> conflict_decrease;
    std::vector<double> cosine_increase;
};

InterferenceSeries interference_series(const ConflictTrace& baseline, const ConflictTrace& method, int smoothing);

// Correct predictions of labels that were rare or never seen in training.
struct RareLabelTally {
    std::size_t instances = 0;
    std::size_t correct = 0;
    std::set<std::string> labels;             // distinct labels with at least one instance
    std::set<std::string> labels_correct;     // ... with at least one correct prediction
};

struct RareUnseenCounts {
    RareLabelTally rare;
    RareLabelTally unseen;
};

// A gold token counts as correct when its predicted label matches.
RareUnseenCounts count_rare_unseen(const LabelVocab& training_labels, const Treebank& gold,
                                   const Treebank& predicted);

// --- report emission -------------------------------------------------------

struct LasRecord {
    std::string test_lang;
    std::string method;
    std::string framework;
    std::uint64_t seed = 0;
    double las = 0.0;
    double uas = 0.0;

    bool operator==(const LasRecord&) const = default;
};

struct ConflictRecord {
    std::string method;
    std::string framework;
    std::uint64_t seed = 0;
    int window = 0;
    double conflict_pct = 0.0;
    double mean_cosine = 0.0;
};

struct RareUnseenRecord {
    std::string method;
    std::string framework;
    std::string test_lang;
    RareUnseenCounts counts;
};

struct ReportInputs {
    std::vector<LasRecord> las;
    std::vector<ConflictRecord> conflicts;
    std::vector<RareUnseenRecord> rare_unseen;
    std::string baseline_method = "full";  // reference for relative-change data
};

struct WinnerRow {
    std::string scope;  // a framework, or "all" for the pooled comparison
    std::string test_lang;
    std::string method;  // best methods joined by '|' on ties
    double las = 0.0;
};

struct BestShare {
    std::string scope;
    std::string method;
    double best_pct = 0.0;  // ties split evenly, so shares sum to 100 per scope
};

// Mean LAS over seeds per (framework, method, language), then winners.
std::vector<WinnerRow> winners(const std::vector<LasRecord>& las, std::vector<BestShare>* shares);

std::string format_las_csv(const std::vector<LasRecord>& las);
std::vector<LasRecord> parse_las_csv(const std::string& text);
std::string format_winners_csv(const std::vector<WinnerRow>& rows);
std::string format_best_csv(const std::vector<BestShare>& shares);
std::string format_conflicts_csv(const std::vector<ConflictRecord>& rows);
std::string format_rare_unseen_csv(const std::vector<RareUnseenRecord>& rows);
// Relative LAS change of each method against the baseline of its framework,
// per language and seed-averaged.
std::string format_density_csv(const std::vector<LasRecord>& las, const std::string& baseline_method);

// Writes las.csv, winners.csv, best.csv, conflicts.csv, rare_unseen.csv and
// density.csv into `dir` (created when missing). Returns the written paths.
std::vector<std::string> emit_report(const ReportInputs& inputs, const std::string& dir);

}  // namespace snp
