#include "snp/trainers.hpp"

#include <algorithm>
#include <set>

#include "snp/analysis.hpp"
#include "snp/errors.hpp"

namespace snp {

namespace {

using Batch = std::vector<const EncodedSentence*>;

// n distinct indices drawn uniformly (all of them, shuffled, when n >= population).
std::vector<std::size_t> sample_batch(Rng& rng, std::size_t population, std::size_t n) {
    std::vector<std::size_t> idx(population);
    for (std::size_t i = 0; i < population; ++i) idx[i] = i;
    const std::size_t take = std::min(n, population);
    for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + uniform_index(rng, population - i)]);
    idx.resize(take);
    return idx;
}

Batch gather(const std::vector<EncodedSentence>& data, const std::vector<std::size_t>& idx) {
    Batch out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(&data[i]);
    return out;
}

std::vector<std::uint8_t> encoder_entries(const ParamLayout& layout) {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(layout.size()), 0);
    for (const auto& s : layout.slots())
        if (is_encoder_group(s.group))
            std::fill(out.begin() + s.offset, out.begin() + s.offset + s.size(), std::uint8_t{1});
    return out;
}

void check_masks(const std::map<std::string, Treebank>& treebanks, const MaskSet& masks, const EncoderConfig& enc,
                 Eigen::Index n_params) {
    if (treebanks.empty()) throw UsageError("no training languages");
    for (const auto& [lang, tb] : treebanks)
        if (tb.sentences.empty()) throw UsageError("treebank for '" + lang + "' is empty");
    if (masks.empty()) return;
    for (const auto& [lang, tb] : treebanks) {
        if (!masks.count(lang)) throw UsageError("masks given for some languages but not for '" + lang + "'");
    }
    for (const auto& [lang, m] : masks) {
        if (!treebanks.count(lang)) throw UsageError("mask given for unknown language '" + lang + "'");
        if (m.mode != masks.begin()->second.mode) throw UsageError("all languages must use the same kind of mask");
        if (m.is_head()) m.head.check_shape(enc);
        if (m.is_param() && m.param.values.size() != n_params) {
            throw ContractError("parameter mask for '" + lang + "' has the wrong length");
        }
    }
}

std::map<std::string, std::vector<EncodedSentence>> encode_all(const ParserModel& model,
                                                               const std::map<std::string, Treebank>& treebanks) {
    std::map<std::string, std::vector<EncodedSentence>> out;
    for (const auto& [lang, tb] : treebanks) out[lang] = encode_treebank(model, tb);
    return out;
}

// Soft-weight optimizers for dynamic masks: Adam without weight decay.
std::map<std::string, Optimizer> soft_optimizers(const MaskSet& masks) {
    std::map<std::string, Optimizer> out;
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::adam;
    for (const auto& [lang, m] : masks) {
        if (m.mode == MaskMode::head_dynamic) out.emplace(lang, Optimizer(cfg, m.soft.weights.size()));
        if (m.mode == MaskMode::param_dynamic) out.emplace(lang, Optimizer(cfg, m.param_soft.weights.size()));
    }
    return out;
}

void update_soft_masks(MaskSet& masks, std::map<std::string, Optimizer>& opts,
                       const std::map<std::string, MaskedGradient>& grads, double lr, Eigen::Index n_params) {
    for (auto& [lang, m] : masks) {
        if (!m.is_dynamic()) continue;
        const auto& g = grads.at(lang);
        if (m.mode == MaskMode::head_dynamic) {
            Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(m.soft.weights.data(), m.soft.weights.size());
            const Eigen::VectorXd gv = Eigen::Map<const Eigen::VectorXd>(g.head_soft.data(), g.head_soft.size());
            opts.at(lang).step(w, gv, lr);
            m.soft.weights = Eigen::Map<const Eigen::MatrixXd>(w.data(), m.soft.weights.rows(), m.soft.weights.cols());
        } else {
            opts.at(lang).step(m.param_soft.weights, g.param_soft, lr);
        }
        m.rebinarize(n_params);
    }
}

void record_masks(RunTrace& trace, long iteration, const MaskSet& masks) {
    for (const auto& [lang, m] : masks) {
        if (m.is_head()) trace.add(iteration, "mask", lang, m.head.disabled_count(), {}, m.bits_string());
        if (m.is_param()) trace.add(iteration, "mask", lang, m.param.disabled_count());
    }
}

void record_gradients(RunTrace& trace, long iteration, const std::map<std::string, Eigen::VectorXd>& grads) {
    for (const auto& [lang, g] : grads) trace.add(iteration, "grad_norm", lang, g.norm());
    for (const auto& [pair, c] : pairwise_cosines(grads).cosines) trace.add(iteration, "cosine", pair.first, c, pair.second);
}

Eigen::VectorXd mean_of(const std::map<std::string, Eigen::VectorXd>& grads) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(grads.begin()->second.size());
    for (const auto& [lang, g] : grads) out += g;
    return out / static_cast<double>(grads.size());
}

}  // namespace

void TrainConfig::validate() const {
    if (stage1_epochs < 0 || stage2_iterations < 0) throw UsageError("epochs and iterations must be non-negative");
    if (batch_size < 1) throw UsageError("batch size must be at least 1");
    if (!(encoder_lr > 0.0) || !(classifier_lr > 0.0)) throw UsageError("learning rates must be positive");
    if (weight_decay < 0.0) throw UsageError("weight decay must be non-negative");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw UsageError("warmup_fraction must lie in [0, 1)");
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw UsageError("keep_fraction must lie in (0, 1]");
    if (!(soft_init > 0.0)) throw UsageError("soft mask init value must be positive");
}

void MetaConfig::validate() const {
    if (episodes < 1 || support_size < 1 || inner_steps < 1) throw UsageError("episodes, N and k must be at least 1");
    if (!(inner_encoder_lr > 0.0) || !(inner_classifier_lr > 0.0) || !(outer_encoder_lr > 0.0) ||
        !(outer_classifier_lr > 0.0)) {
        throw UsageError("meta step sizes must be positive");
    }
    if (!first_order) throw UsageError("only the first-order approximation is implemented");
    if (weight_decay < 0.0) throw UsageError("weight decay must be non-negative");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw UsageError("warmup_fraction must lie in [0, 1)");
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw UsageError("keep_fraction must lie in (0, 1]");
    if (!(soft_init > 0.0)) throw UsageError("soft mask init value must be positive");
}

std::string_view to_string(MaskMode mode) {
    switch (mode) {
        case MaskMode::none: return "none";
        case MaskMode::head_static: return "static";
        case MaskMode::head_dynamic: return "dynamic";
        case MaskMode::param_static: return "magnitude_static";
        case MaskMode::param_dynamic: return "magnitude_dynamic";
    }
    return "none";
}

LanguageMask LanguageMask::fixed(HeadMask mask) {
    mask.validate();
    LanguageMask m;
    m.mode = MaskMode::head_static;
    m.head = std::move(mask);
    return m;
}

LanguageMask LanguageMask::dynamic(SoftMask soft) {
    soft.validate();
    LanguageMask m;
    m.mode = MaskMode::head_dynamic;
    m.soft = std::move(soft);
    m.rebinarize(0);
    return m;
}

LanguageMask LanguageMask::fixed(ParamMask mask) {
    LanguageMask m;
    m.mode = MaskMode::param_static;
    m.param = std::move(mask);
    return m;
}

LanguageMask LanguageMask::dynamic(ParamSoftMask soft, Eigen::Index n_params) {
    LanguageMask m;
    m.mode = MaskMode::param_dynamic;
    m.param_soft = std::move(soft);
    m.rebinarize(n_params);
    return m;
}

void LanguageMask::rebinarize(Eigen::Index n_params) {
    if (mode == MaskMode::head_dynamic) head = binarize(soft);
    if (mode == MaskMode::param_dynamic) param = binarize(param_soft, n_params);
}

std::string LanguageMask::bits_string() const {
    if (!is_head()) return {};
    std::string out;
    for (Eigen::Index l = 0; l < head.bits.rows(); ++l)
        for (Eigen::Index h = 0; h < head.bits.cols(); ++h) out += head.bits(l, h) != 0.0 ? '1' : '0';
    return out;
}

MaskedGradient masked_gradient(const ModelState& state, std::span<const EncodedSentence* const> batch,
                               const LanguageMask* mask) {
    MaskedGradient out;
    if (!mask || mask->mode == MaskMode::none) {
        auto bg = batch_gradient(state, batch, nullptr);
        out.loss = bg.loss;
        out.params = std::move(bg.params);
        return out;
    }
    if (mask->is_head()) {
        auto bg = batch_gradient(state, batch, &mask->head.bits);
        out.loss = bg.loss;
        out.params = std::move(bg.params);
        if (mask->mode == MaskMode::head_dynamic) out.head_soft = ste_backward(bg.mask);
        return out;
    }
    const auto& p = mask->param.values;
    auto bg = batch_gradient(apply_param_mask(state, mask->param), batch, nullptr);
    out.loss = bg.loss;
    out.params = bg.params.cwiseProduct(p);
    if (mask->mode == MaskMode::param_dynamic) {
        const auto& elig = mask->param_soft.eligible;
        out.param_soft.resize(static_cast<Eigen::Index>(elig.size()));
        // d loss / d mask entry = gradient at the masked parameters times the raw parameter.
        for (std::size_t i = 0; i < elig.size(); ++i)
            out.param_soft[static_cast<Eigen::Index>(i)] = bg.params[elig[i]] * state.values[elig[i]];
    }
    return out;
}

Eigen::VectorXd group_learning_rates(const ParamLayout& layout, double encoder_lr, double classifier_lr) {
    Eigen::VectorXd lr(layout.size());
    for (const auto& s : layout.slots())
        lr.segment(s.offset, s.size()).setConstant(is_encoder_group(s.group) ? encoder_lr : classifier_lr);
    return lr;
}

std::vector<std::uint8_t> protected_entries(const ParamLayout& layout, const MaskSet& masks) {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(layout.size()), 0);
    if (masks.empty()) return out;
    const auto& first = masks.begin()->second;
    if (first.is_head()) {
        for (Eigen::Index l = 0; l < first.head.bits.rows(); ++l) {
            for (Eigen::Index h = 0; h < first.head.bits.cols(); ++h) {
                bool everywhere = true;
                for (const auto& [lang, m] : masks) everywhere = everywhere && m.head.bits(l, h) == 0.0;
                if (!everywhere) continue;
                for (auto i : head_param_indices(layout, static_cast<int>(l), static_cast<int>(h)))
                    out[static_cast<std::size_t>(i)] = 1;
            }
        }
    } else if (first.is_param()) {
        for (auto i : first.param.eligible) {
            bool everywhere = true;
            for (const auto& [lang, m] : masks) everywhere = everywhere && m.param.values[i] == 0.0;
            if (everywhere) out[static_cast<std::size_t>(i)] = 1;
        }
    }
    return out;
}

RunTrace train_stage1(ParserModel& model, const Treebank& treebank, const TrainConfig& config) {
    config.validate();
    if (treebank.sentences.empty()) throw UsageError("stage-1 treebank is empty");
    RunTrace trace;
    if (config.stage1_epochs == 0) return trace;
    auto& state = model.state;
    const auto data = encode_treebank(model, treebank);
    const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), data.size());
    const long steps_per_epoch = static_cast<long>(std::max<std::size_t>(1, data.size() / batch));
    const long total = steps_per_epoch * config.stage1_epochs;
    const auto base_lr = group_learning_rates(*state.layout, config.encoder_lr, config.classifier_lr);
    const auto frozen = encoder_entries(*state.layout);
    Optimizer opt(OptimizerConfig{config.optimizer, 0.9, 0.999, 1e-8, config.weight_decay}, state.values.size());
    EpochSampler sampler(data.size(), config.seed);

    long step = 0;
    for (int epoch = 0; epoch < config.stage1_epochs; ++epoch) {
        const double first_factor = schedule_factor(config.schedule, step, total, config.warmup_fraction);
        double sum = 0.0;
        for (long s = 0; s < steps_per_epoch; ++s, ++step) {
            const auto ptrs = gather(data, sampler.draw(batch));
            const auto bg = batch_gradient(state, ptrs, nullptr);
            sum += bg.loss;
            const double factor = schedule_factor(config.schedule, step, total, config.warmup_fraction);
            const bool freeze = config.gradual_unfreeze && epoch == 0;
            opt.step(state.values, bg.params, base_lr * factor, freeze ? &frozen : nullptr);
        }
        trace.add(epoch, "epoch_loss", treebank.language, sum / static_cast<double>(steps_per_epoch));
        trace.add(epoch, "lr", "encoder", config.encoder_lr * first_factor);
        trace.add(epoch, "lr", "classifier", config.classifier_lr * first_factor);
    }
    return trace;
}

RunTrace train_stage2(ParserModel& model, const std::map<std::string, Treebank>& treebanks, MaskSet& masks,
                      const TrainConfig& config, const StepObserver* observer) {
    config.validate();
    auto& state = model.state;
    const Eigen::Index n_params = state.values.size();
    check_masks(treebanks, masks, state.config.encoder, n_params);
    const auto data = encode_all(model, treebanks);
    const auto base_lr = group_learning_rates(*state.layout, config.encoder_lr, config.classifier_lr);
    Optimizer opt(OptimizerConfig{config.optimizer, 0.9, 0.999, 1e-8, config.weight_decay}, n_params);
    auto soft_opts = soft_optimizers(masks);
    std::map<std::string, Rng> rngs;
    std::uint64_t stream = 1;
    for (const auto& [lang, tb] : treebanks) rngs.emplace(lang, make_rng(config.seed, stream++));

    RunTrace trace;
    const long total = config.stage2_iterations;
    for (long it = 0; it < total; ++it) {
        const double factor = schedule_factor(config.schedule, it, total, config.warmup_fraction);
        bool any_dynamic = false;
        for (const auto& [lang, m] : masks) any_dynamic = any_dynamic || m.is_dynamic();
        if (it == 0 || any_dynamic) record_masks(trace, it, masks);

        StepReport rep;
        rep.iteration = it;
        std::map<std::string, MaskedGradient> grads;
        for (const auto& [lang, sentences] : data) {
            rep.batches[lang] =
                sample_batch(rngs.at(lang), sentences.size(), static_cast<std::size_t>(config.batch_size));
            const auto ptrs = gather(sentences, rep.batches[lang]);
            const auto it_mask = masks.find(lang);
            auto mg = masked_gradient(state, ptrs, it_mask == masks.end() ? nullptr : &it_mask->second);
            trace.add(it, "loss", lang, mg.loss);
            rep.losses[lang] = mg.loss;
            rep.grads[lang] = mg.params;
            if (mg.head_soft.size() > 0) rep.head_soft_grads[lang] = mg.head_soft;
            grads.emplace(lang, std::move(mg));
        }
        record_gradients(trace, it, rep.grads);
        rep.update_grad = mean_of(rep.grads);
        rep.skipped = protected_entries(*state.layout, masks);
        if (observer) (*observer)(rep);
        opt.step(state.values, rep.update_grad, base_lr * factor, masks.empty() ? nullptr : &rep.skipped);
        trace.add(it, "lr", "encoder", config.encoder_lr * factor);
        trace.add(it, "lr", "classifier", config.classifier_lr * factor);
        update_soft_masks(masks, soft_opts, grads, config.encoder_lr * factor, n_params);
    }
    return trace;
}

FomamlStep fomaml_step(const Eigen::VectorXd& theta, const std::vector<TaskGradient>& tasks,
                       const Eigen::VectorXd& inner_lr, int inner_steps) {
    if (tasks.empty()) throw UsageError("meta step needs at least one task");
    if (inner_lr.size() != theta.size()) throw ContractError("inner learning rates do not match the parameters");
    if (inner_steps < 0) throw UsageError("inner step count must be non-negative");
    FomamlStep out;
    out.outer_grad = Eigen::VectorXd::Zero(theta.size());
    Eigen::VectorXd grad(theta.size());
    for (const auto& task : tasks) {
        Eigen::VectorXd phi = theta;
        for (int k = 0; k < inner_steps; ++k) {
            grad.setZero();
            task(phi, false, grad);
            phi -= inner_lr.cwiseProduct(grad);
        }
        grad.setZero();
        out.query_losses.push_back(task(phi, true, grad));
        out.query_grads.push_back(grad);
        out.outer_grad += grad;
        out.learners.push_back(std::move(phi));
    }
    out.outer_grad /= static_cast<double>(tasks.size());
    return out;
}

void Episode::check() const {
    std::set<std::size_t> s(support.begin(), support.end());
    for (auto q : query)
        if (s.count(q)) throw ContractError("episode for '" + language + "' reuses a support sentence in its query set");
}

Episode sample_episode(const std::string& language, std::size_t population, std::size_t n, Rng& rng) {
    if (population < 2 * n) {
        throw UsageError("language '" + language + "' has " + std::to_string(population) +
                         " sentences; an episode needs " + std::to_string(2 * n));
    }
    const auto idx = sample_batch(rng, population, 2 * n);
    Episode e{language, {idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n)},
              {idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end()}};
    e.check();
    return e;
}

RunTrace meta_train(ParserModel& model, const std::map<std::string, Treebank>& treebanks, MaskSet& masks,
                    const MetaConfig& config, const StepObserver* observer) {
    config.validate();
    auto& state = model.state;
    const Eigen::Index n_params = state.values.size();
    check_masks(treebanks, masks, state.config.encoder, n_params);
    const auto data = encode_all(model, treebanks);
    const auto outer_lr = group_learning_rates(*state.layout, config.outer_encoder_lr, config.outer_classifier_lr);
    const auto inner_lr = group_learning_rates(*state.layout, config.inner_encoder_lr, config.inner_classifier_lr);
    Optimizer opt(OptimizerConfig{config.outer_optimizer, 0.9, 0.999, 1e-8, config.weight_decay}, n_params);
    auto soft_opts = soft_optimizers(masks);
    Rng rng = make_rng(config.seed, 0x3e7a);
    const auto n = static_cast<std::size_t>(config.support_size);

    RunTrace trace;
    const long total = config.episodes;
    for (long ep = 0; ep < total; ++ep) {
        const double factor = schedule_factor(config.schedule, ep, total, config.warmup_fraction);
        bool any_dynamic = false;
        for (const auto& [lang, m] : masks) any_dynamic = any_dynamic || m.is_dynamic();
        if (ep == 0 || any_dynamic) record_masks(trace, ep, masks);

        std::vector<std::string> langs;
        std::vector<Episode> episodes;
        for (const auto& [lang, sentences] : data) {
            langs.push_back(lang);
            episodes.push_back(sample_episode(lang, sentences.size(), n, rng));
        }
        std::map<std::string, MaskedGradient> query_grads;
        std::vector<TaskGradient> tasks;
        for (std::size_t t = 0; t < langs.size(); ++t) {
            const auto& lang = langs[t];
            const auto support = gather(data.at(lang), episodes[t].support);
            const auto query = gather(data.at(lang), episodes[t].query);
            const auto found = masks.find(lang);
            const LanguageMask* mask = found == masks.end() ? nullptr : &found->second;
            tasks.emplace_back([&, support, query, mask, lang](const Eigen::VectorXd& phi, bool is_query,
                                                                Eigen::VectorXd& grad) {
                const ModelState learner{state.config, state.layout, phi};
                auto mg = masked_gradient(learner, is_query ? query : support, mask);
                grad = mg.params;
                const double loss = mg.loss;
                if (is_query) query_grads[lang] = std::move(mg);
                return loss;
            });
        }
        const auto step = fomaml_step(state.values, tasks, inner_lr, config.inner_steps);

        StepReport rep;
        rep.iteration = ep;
        for (std::size_t t = 0; t < langs.size(); ++t) {
            rep.support[langs[t]] = episodes[t].support;
            rep.batches[langs[t]] = episodes[t].query;
            trace.add(ep, "query_loss", langs[t], step.query_losses[t]);
            rep.losses[langs[t]] = step.query_losses[t];
            rep.grads[langs[t]] = step.query_grads[t];
            const auto& mg = query_grads.at(langs[t]);
            if (mg.head_soft.size() > 0) rep.head_soft_grads[langs[t]] = mg.head_soft;
        }
        record_gradients(trace, ep, rep.grads);
        rep.update_grad = step.outer_grad;
        rep.skipped = protected_entries(*state.layout, masks);
        if (observer) (*observer)(rep);
        opt.step(state.values, rep.update_grad, outer_lr * factor, masks.empty() ? nullptr : &rep.skipped);
        trace.add(ep, "lr", "encoder", config.outer_encoder_lr * factor);
        trace.add(ep, "lr", "classifier", config.outer_classifier_lr * factor);
        update_soft_masks(masks, soft_opts, query_grads, config.outer_encoder_lr * factor, n_params);
    }
    return trace;
}

DiscoveryResult discover_subnetwork(const std::string& language, const ParserModel& stage1, const Treebank& train,
                                    const Treebank& dev, const std::vector<std::uint64_t>& seeds,
                                    const TrainConfig& finetune, PruneConfig prune) {
    if (seeds.empty()) throw UsageError("subnetwork discovery needs at least one seed");
    DiscoveryResult out;
    std::vector<HeadMask> masks;
    for (auto seed : seeds) {
        ParserModel copy = stage1;
        TrainConfig cfg = finetune;
        cfg.seed = seed;
        train_stage1(copy, train, cfg);
        prune.seed = seed;
        out.per_seed.push_back(iterative_prune(language, copy, train, dev, prune));
        masks.push_back(out.per_seed.back().mask);
    }
    out.mask = union_masks(masks);
    return out;
}

ParamPruneResult discover_magnitude_mask(const std::string& language, const ParserModel& stage1,
                                         const Treebank& train, const Treebank& dev, const TrainConfig& finetune,
                                         const PruneConfig& prune) {
    ParserModel copy = stage1;
    TrainConfig cfg = finetune;
    cfg.seed = prune.seed;
    train_stage1(copy, train, cfg);
    return magnitude_prune(language, copy, dev, prune);
}

TransferChoice select_transfer_mask(const LanguageMeta& test, const std::vector<LanguageMeta>& train) {
    if (train.empty()) throw UsageError("no training languages to transfer from");
    std::vector<const LanguageMeta*> sorted;
    for (const auto& t : train) sorted.push_back(&t);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->code < b->code; });
    TransferChoice best;
    bool have = false;
    for (const auto* t : sorted) {
        if (t->typo_vector.size() != test.typo_vector.size()) {
            throw UsageError("typology vectors of '" + test.code + "' and '" + t->code + "' differ in length");
        }
        const double c = cosine_similarity(test.typo_vector, t->typo_vector);
        if (!have || c > best.cosine) {
            best = TransferChoice{t->code, c};
            have = true;
        }
    }
    return best;
}

TransferChoice random_transfer_mask(const std::vector<LanguageMeta>& train, std::uint64_t seed) {
    if (train.empty()) throw UsageError("no training languages to transfer from");
    std::vector<std::string> codes;
    for (const auto& t : train) codes.push_back(t.code);
    std::sort(codes.begin(), codes.end());
    auto rng = make_rng(seed, 0x7a4f);
    return TransferChoice{codes[uniform_index(rng, codes.size())], 0.0};
}

FewShotResult fewshot_adapt(const ParserModel& model, const Treebank& test, const Treebank* dev,
                            const LanguageMask* mask, const FewShotConfig& config,
                            std::vector<Treebank>* predictions) {
    if (config.shots < 1 || config.steps < 0) throw UsageError("shots must be positive and steps non-negative");
    if (config.seeds.empty()) throw UsageError("few-shot evaluation needs at least one seed");
    const auto shots = static_cast<std::size_t>(config.shots);
    if (dev) {
        if (dev->sentences.size() < shots) throw UsageError("dev set smaller than the number of shots");
    } else if (test.sentences.size() <= shots) {
        throw UsageError("test set of '" + test.language + "' has " + std::to_string(test.sentences.size()) +
                         " sentences; need more than " + std::to_string(shots));
    }
    FewShotResult out;
    if (predictions) predictions->clear();
    for (auto seed : config.seeds) {
        std::vector<Sentence> support;
        Treebank eval{test.language, test.split, {}};
        std::vector<std::size_t> eval_idx;
        if (dev) {
            support = sample_sentences(*dev, shots, seed, true);
            eval.sentences = test.sentences;
            for (std::size_t i = 0; i < test.sentences.size(); ++i) eval_idx.push_back(i);
        } else {
            EpochSampler sampler(test.sentences.size(), seed);
            auto picked = sampler.draw(shots);
            std::set<std::size_t> taken(picked.begin(), picked.end());
            for (auto i : picked) support.push_back(test.sentences[i]);
            for (std::size_t i = 0; i < test.sentences.size(); ++i)
                if (!taken.count(i)) {
                    eval.sentences.push_back(test.sentences[i]);
                    eval_idx.push_back(i);
                }
        }
        ModelState state = model.state;
        std::vector<EncodedSentence> enc;
        for (const auto& s : support) enc.push_back(encode_sentence(model, s));
        Batch ptrs;
        for (const auto& e : enc) ptrs.push_back(&e);
        const auto lr = group_learning_rates(*state.layout, config.encoder_lr, config.classifier_lr);
        OptimizerConfig oc;
        oc.kind = config.rule == AdaptRule::adam ? OptimizerKind::adam : OptimizerKind::sgd;
        oc.weight_decay = config.rule == AdaptRule::adam ? config.weight_decay : 0.0;
        Optimizer opt(oc, state.values.size());
        for (int s = 0; s < config.steps; ++s) {
            const auto mg = masked_gradient(state, ptrs, mask);
            opt.step(state.values, mg.params, lr);
        }
        const auto eval_enc = encode_treebank(model, eval);
        std::vector<ParseTree> pred;
        AttachmentScores scores;
        if (mask && mask->is_param()) {
            scores = evaluate(model, apply_param_mask(state, mask->param), eval_enc, eval.sentences, nullptr, &pred);
        } else {
            const MaskValues* mv = mask && mask->is_head() ? &mask->head.bits : nullptr;
            scores = evaluate(model, state, eval_enc, eval.sentences, mv, &pred);
        }
        if (predictions) predictions->push_back(with_predictions(eval, pred));
        out.runs.push_back(FewShotRun{seed, scores, eval.sentences.size(), std::move(eval_idx)});
        out.mean_las += scores.las;
        out.mean_uas += scores.uas;
    }
    out.mean_las /= static_cast<double>(out.runs.size());
    out.mean_uas /= static_cast<double>(out.runs.size());
    return out;
}

}  // namespace snp
