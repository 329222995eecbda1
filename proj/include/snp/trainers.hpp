#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "snp/language_vectors.hpp"
#include "snp/model.hpp"
#include "snp/optimizer.hpp"
#include "snp/random.hpp"
#include "snp/run_trace.hpp"
#include "snp/subnet.hpp"

namespace snp {

struct TrainConfig {
    int stage1_epochs = 60;
    int stage2_iterations = 1000;
    int batch_size = 20;  // per language in stage 2
    double encoder_lr = 1e-4;
    double classifier_lr = 1e-3;
    double weight_decay = 0.01;
    double warmup_fraction = 0.10;
    Schedule schedule = Schedule::cosine;
    OptimizerKind optimizer = OptimizerKind::adam;
    bool gradual_unfreeze = false;  // encoder frozen during the first epoch of stage 1
    double keep_fraction = 0.8;     // dynamic masks
    double soft_init = 0.01;
    std::uint64_t seed = 0;

    void validate() const;
};

struct MetaConfig {
    int episodes = 500;
    int support_size = 20;  // N, also the query size
    int inner_steps = 20;   // k
    double inner_encoder_lr = 1e-5;     // alpha, per parameter group
    double inner_classifier_lr = 5e-4;
    double outer_encoder_lr = 1e-4;     // beta, per parameter group
    double outer_classifier_lr = 1e-3;
    OptimizerKind outer_optimizer = OptimizerKind::adam;
    double weight_decay = 0.01;
    double warmup_fraction = 0.10;
    Schedule schedule = Schedule::cosine;
    bool first_order = true;
    double keep_fraction = 0.8;
    double soft_init = 0.01;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class MaskMode { none, head_static, head_dynamic, param_static, param_dynamic };

std::string_view to_string(MaskMode mode);

// A language's subnetwork during training. Dynamic variants keep their soft
// weights and the binarization currently in use.
struct LanguageMask {
    MaskMode mode = MaskMode::none;
    HeadMask head;             // static mask, or current binarization of `soft`
    SoftMask soft;
    ParamMask param;           // static mask, or current binarization of `param_soft`
    ParamSoftMask param_soft;

    static LanguageMask fixed(HeadMask mask);
    static LanguageMask dynamic(SoftMask soft);
    static LanguageMask fixed(ParamMask mask);
    static LanguageMask dynamic(ParamSoftMask soft, Eigen::Index n_params);

    bool is_dynamic() const { return mode == MaskMode::head_dynamic || mode == MaskMode::param_dynamic; }
    bool is_head() const { return mode == MaskMode::head_static || mode == MaskMode::head_dynamic; }
    bool is_param() const { return mode == MaskMode::param_static || mode == MaskMode::param_dynamic; }
    void rebinarize(Eigen::Index n_params);
    // Row-major 0/1 string of the head mask in use (empty for parameter masks).
    std::string bits_string() const;
};

// Per-language masks; an empty set trains the full model.
using MaskSet = std::map<std::string, LanguageMask>;

struct MaskedGradient {
    double loss = 0.0;
    Eigen::VectorXd params;     // zero wherever the mask removes a parameter
    Eigen::MatrixXd head_soft;  // gradient for the head soft weights (dynamic head masks)
    Eigen::VectorXd param_soft; // gradient for the parameter soft weights (dynamic parameter masks)
};

// Mean-over-batch loss and gradient of the model restricted to `mask`.
MaskedGradient masked_gradient(const ModelState& state, std::span<const EncodedSentence* const> batch,
                               const LanguageMask* mask);

// Per-entry learning rates from the parameter groups.
Eigen::VectorXd group_learning_rates(const ParamLayout& layout, double encoder_lr, double classifier_lr);

// Entries that no language may update this step: parameters of heads (or
// individual weights) that every language's mask disables.
std::vector<std::uint8_t> protected_entries(const ParamLayout& layout, const MaskSet& masks);

// Everything one update sees, handed to the observer before any parameter or
// mask changes.
struct StepReport {
    long iteration = 0;
    std::map<std::string, std::vector<std::size_t>> support;  // sentence indices (meta only)
    std::map<std::string, std::vector<std::size_t>> batches;  // batch (stage 2) or query (meta) indices
    std::map<std::string, double> losses;
    std::map<std::string, Eigen::VectorXd> grads;         // per language, before averaging
    std::map<std::string, Eigen::MatrixXd> head_soft_grads;
    Eigen::VectorXd update_grad;                          // what the optimizer received
    std::vector<std::uint8_t> skipped;
};
using StepObserver = std::function<void(const StepReport&)>;

// Supervised training on one treebank without masks.
RunTrace train_stage1(ParserModel& model, const Treebank& treebank, const TrainConfig& config);

// Multilingual training: every iteration each language contributes the
// gradient of one batch under its own mask and the mean drives one update.
RunTrace train_stage2(ParserModel& model, const std::map<std::string, Treebank>& treebanks, MaskSet& masks,
                      const TrainConfig& config, const StepObserver* observer = nullptr);

// --- first-order MAML -------------------------------------------------------

// Loss and gradient of one task at parameters `phi` on its support
// (query = false) or query (query = true) set.
using TaskGradient = std::function<double(const Eigen::VectorXd& phi, bool query, Eigen::VectorXd& grad)>;

struct FomamlStep {
    Eigen::VectorXd outer_grad;  // mean of the query gradients
    std::vector<Eigen::VectorXd> query_grads;
    std::vector<double> query_losses;
    std::vector<Eigen::VectorXd> learners;  // adapted parameters per task
};

// Adapts a copy of theta per task with `inner_steps` gradient-descent steps at
// the per-entry rates `inner_lr`, then takes each task's query gradient at the
// adapted parameters. theta itself is not modified.
FomamlStep fomaml_step(const Eigen::VectorXd& theta, const std::vector<TaskGradient>& tasks,
                       const Eigen::VectorXd& inner_lr, int inner_steps);

struct Episode {
    std::string language;
    std::vector<std::size_t> support;
    std::vector<std::size_t> query;

    void check() const;  // support and query must be disjoint
};

Episode sample_episode(const std::string& language, std::size_t population, std::size_t n, Rng& rng);

RunTrace meta_train(ParserModel& model, const std::map<std::string, Treebank>& treebanks, MaskSet& masks,
                    const MetaConfig& config, const StepObserver* observer = nullptr);

// --- subnetwork discovery ---------------------------------------------------

struct DiscoveryResult {
    HeadMask mask;  // union over seeds
    std::vector<PruneResult> per_seed;
};

// For each seed: fine-tune a copy of the stage-1 model on the language, then
// prune it. The union of the per-seed masks is the subnetwork.
DiscoveryResult discover_subnetwork(const std::string& language, const ParserModel& stage1, const Treebank& train,
                                    const Treebank& dev, const std::vector<std::uint64_t>& seeds,
                                    const TrainConfig& finetune, PruneConfig prune);

ParamPruneResult discover_magnitude_mask(const std::string& language, const ParserModel& stage1,
                                         const Treebank& train, const Treebank& dev, const TrainConfig& finetune,
                                         const PruneConfig& prune);

// --- transfer and few-shot adaptation ----------------------------------------

struct TransferChoice {
    std::string language;
    double cosine = 0.0;
};

// Training language whose typology vector is most similar to the test
// language's; ties go to the lexicographically smallest code.
TransferChoice select_transfer_mask(const LanguageMeta& test, const std::vector<LanguageMeta>& train);
TransferChoice random_transfer_mask(const std::vector<LanguageMeta>& train, std::uint64_t seed);

enum class AdaptRule { adam, sgd };

struct FewShotConfig {
    int shots = 20;
    int steps = 20;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    AdaptRule rule = AdaptRule::adam;
    double encoder_lr = 1e-4;
    double classifier_lr = 1e-3;
    double weight_decay = 0.01;
};

struct FewShotRun {
    std::uint64_t seed = 0;
    AttachmentScores scores;
    std::size_t eval_sentences = 0;
    std::vector<std::size_t> eval_indices;  // test sentences evaluated, in order
};

struct FewShotResult {
    std::vector<FewShotRun> runs;
    double mean_las = 0.0;
    double mean_uas = 0.0;
};

// Shots come from `dev` when given, otherwise they are drawn from and removed
// from the test set. Each seed adapts a fresh copy under the fixed mask and
// evaluates on the remaining test sentences.
FewShotResult fewshot_adapt(const ParserModel& model, const Treebank& test, const Treebank* dev,
                            const LanguageMask* mask, const FewShotConfig& config,
                            std::vector<Treebank>* predictions = nullptr);

}  // namespace snp
