#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "snp/encoder.hpp"
#include "snp/model.hpp"

namespace snp {

// Binary (n_layers, n_heads) matrix; 1 = head enabled.
struct HeadMask {
    std::string language;
    Eigen::MatrixXd bits;

    static HeadMask all_enabled(const std::string& language, const EncoderConfig& config);

    void validate() const;                        // entries in {0, 1}
    void check_shape(const EncoderConfig& config) const;
    int enabled_count() const;
    int disabled_count() const { return static_cast<int>(bits.size()) - enabled_count(); }
    bool enabled(int layer, int head) const { return bits(layer, head) != 0.0; }
    std::vector<std::pair<int, int>> disabled_heads() const;  // ascending (layer, head)
    bool operator==(const HeadMask& other) const;
};

// Real-valued mask trained jointly with the model and binarized on every use.
struct SoftMask {
    std::string language;
    Eigen::MatrixXd weights;
    double keep_fraction = 0.8;
    double init_value = 0.01;

    void validate() const;
    // Enabled heads start at init_value, disabled ones at 0, so the first
    // binarization reproduces `mask` whenever its size allows.
    static SoftMask from_static(const HeadMask& mask, double keep_fraction = 0.8, double init_value = 0.01);
};

// Zeroes the floor((1 - keep) * total) smallest weights; ties zero the lower
// (layer, head) index first.
HeadMask binarize(const SoftMask& soft);

// Straight-through estimator: the threshold is treated as the identity.
Eigen::MatrixXd ste_backward(const Eigen::MatrixXd& grad_at_binary);

// Head enabled in the result iff enabled in any input.
HeadMask union_masks(const std::vector<HeadMask>& masks);

// Attention-projection weights (query, key, value and output of every head):
// the only entries unstructured pruning may remove.
std::vector<Eigen::Index> prunable_indices(const ParamLayout& layout);

// Parameter-level mask over the flat parameter vector. Entries outside
// `eligible` are always 1.
struct ParamMask {
    std::string language;
    Eigen::VectorXd values;
    std::vector<Eigen::Index> eligible;

    static ParamMask all_enabled(const std::string& language, const ParamLayout& layout);
    int disabled_count() const;
};

// Soft weights for each eligible parameter, binarized with the same rule as
// head masks (smallest weights zeroed, ties by flat index).
struct ParamSoftMask {
    std::string language;
    std::vector<Eigen::Index> eligible;
    Eigen::VectorXd weights;  // one per eligible entry
    double keep_fraction = 0.8;

    static ParamSoftMask from_static(const ParamMask& mask, double keep_fraction = 0.8, double init_value = 0.01);
};

ParamMask binarize(const ParamSoftMask& soft, Eigen::Index n_params);

struct ImportanceMatrix {
    Eigen::MatrixXd scores;  // mean |dL/d mask value| over the samples
    Eigen::MatrixXd active;  // 1 where the head was enabled when scored
};

// Expected sensitivity of the loss to each head's mask variable, evaluated at
// the current mask values.
ImportanceMatrix head_importance(const ModelState& state, const std::vector<EncodedSentence>& data,
                                 const HeadMask& active);

struct PruningIteration {
    std::vector<std::pair<int, int>> removed;  // heads (or flat indices in `removed_params`)
    std::vector<Eigen::Index> removed_params;
    int remaining = 0;
    double dev_las = 0.0;
    double ratio = 0.0;
    bool accepted = false;
};

struct PruningTrace {
    double original_dev_las = 0.0;
    std::vector<PruningIteration> iterations;
};

struct PruneConfig {
    double rate = 0.10;
    double stop_ratio = 0.95;
    std::uint64_t seed = 0;
    std::size_t importance_sentences = 0;  // 0 = all training sentences

    void validate() const;
};

// Number of units removed per iteration: floor(rate * total), at least 1.
int prune_batch_size(double rate, int total);

struct PruneResult {
    HeadMask mask;
    PruningTrace trace;
};

// Iterative head pruning of a model already fine-tuned on the language. Each
// iteration scores the active heads on the training data and disables the
// lowest-scoring batch; the first iteration whose dev LAS falls below
// stop_ratio x the unpruned dev LAS is rolled back.
PruneResult iterative_prune(const std::string& language, const ParserModel& model, const Treebank& train,
                            const Treebank& dev, const PruneConfig& config);

struct ParamPruneResult {
    ParamMask mask;
    PruningTrace trace;
};

// Same loop with individual attention-projection weights as the unit, ranked
// by absolute value.
ParamPruneResult magnitude_prune(const std::string& language, const ParserModel& model, const Treebank& dev,
                                 const PruneConfig& config);

// Parameters with the given mask applied.
ModelState apply_param_mask(const ModelState& state, const ParamMask& mask);

enum class AblationKind { shuffle, random_n, bad, random_init_dynamic };

struct AblationSpec {
    AblationKind kind = AblationKind::shuffle;
    int n = 0;  // heads to disable for random_n / bad
};

// "shuffle", "random:N", "bad:N" or "dr20".
AblationSpec parse_ablation(const std::string& text);

// shuffle, random_n and bad produce a HeadMask; random_init_dynamic a SoftMask.
HeadMask make_ablation_mask(const AblationSpec& spec, const HeadMask& reference,
                            const std::vector<std::pair<int, int>>& forbidden, std::uint64_t seed);
SoftMask make_random_soft_mask(const HeadMask& reference, double keep_fraction, double init_value,
                               std::uint64_t seed);

struct MaskProvenance {
    std::vector<std::uint64_t> seeds;
    double stop_ratio = 0.0;
    double prune_rate = 0.0;
    std::vector<double> dev_las;
};

struct MaskFile {
    HeadMask mask;
    std::optional<Eigen::MatrixXd> soft_weights;
    MaskProvenance provenance;
};

std::string format_mask_file(const MaskFile& file);
MaskFile parse_mask_file(const std::string& text);
void write_mask_file(const std::string& path, const MaskFile& file);
MaskFile read_mask_file(const std::string& path);

}  // namespace snp
