#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "snp/analysis.hpp"
#include "snp/checkpoint.hpp"
#include "snp/errors.hpp"
#include "snp/language_vectors.hpp"
#include "snp/subnet.hpp"
#include "snp/toy_grammar.hpp"
#include "snp/trainers.hpp"

namespace snp {

namespace {

namespace fs = std::filesystem;

// --- shared option blocks ----------------------------------------------------

struct ModelOptions {
    EncoderConfig encoder;
    int arc_dim = 64;
    int tag_dim = 32;

    void add(CLI::App* app) {
        app->add_option("--layers", encoder.n_layers, "encoder layers")->capture_default_str();
        app->add_option("--heads", encoder.n_heads, "attention heads per layer")->capture_default_str();
        app->add_option("--d-model", encoder.d_model, "hidden size")->capture_default_str();
        app->add_option("--d-ff", encoder.d_ff, "feedforward size")->capture_default_str();
        app->add_option("--max-len", encoder.max_len, "longest sentence (grown to fit the data)")->capture_default_str();
        app->add_option("--arc-dim", arc_dim, "arc feedforward width")->capture_default_str();
        app->add_option("--tag-dim", tag_dim, "label feedforward width")->capture_default_str();
    }
};

struct TrainOptions {
    TrainConfig train;
    MetaConfig meta;
    std::string schedule = "cosine";
    std::string optimizer = "adam";

    void add_finetune(CLI::App* app) {
        app->add_option("--epochs", train.stage1_epochs, "single-language training epochs")->capture_default_str();
        app->add_option("--batch", train.batch_size, "batch size")->capture_default_str();
        app->add_option("--encoder-lr", train.encoder_lr, "encoder learning rate")->capture_default_str();
        app->add_option("--classifier-lr", train.classifier_lr, "classifier learning rate")->capture_default_str();
        app->add_option("--weight-decay", train.weight_decay, "decoupled weight decay")->capture_default_str();
        app->add_option("--warmup", train.warmup_fraction, "warm-up fraction of the schedule")->capture_default_str();
        app->add_option("--schedule", schedule, "cosine or constant")->capture_default_str();
        app->add_option("--optimizer", optimizer, "adam or sgd")->capture_default_str();
        app->add_flag("--gradual-unfreeze", train.gradual_unfreeze, "freeze the encoder during the first epoch");
        app->add_option("--seed", train.seed, "random seed")->capture_default_str();
    }

    void add_all(CLI::App* app) {
        add_finetune(app);
        app->add_option("--iterations", train.stage2_iterations, "multilingual iterations")->capture_default_str();
        app->add_option("--keep", train.keep_fraction, "kept share of heads in dynamic masks")->capture_default_str();
        app->add_option("--soft-init", train.soft_init, "initial soft mask weight")->capture_default_str();
        app->add_option("--episodes", meta.episodes, "meta-training episodes")->capture_default_str();
        app->add_option("--support-size", meta.support_size, "support (and query) size per episode")
            ->capture_default_str();
        app->add_option("--inner-steps", meta.inner_steps, "inner-loop steps")->capture_default_str();
        app->add_option("--inner-encoder-lr", meta.inner_encoder_lr, "inner-loop encoder step size")
            ->capture_default_str();
        app->add_option("--inner-classifier-lr", meta.inner_classifier_lr, "inner-loop classifier step size")
            ->capture_default_str();
    }

    // Meta training shares the outer rates, schedule, decay and seed.
    void resolve() {
        train.schedule = parse_schedule(schedule);
        train.optimizer = parse_optimizer(optimizer);
        meta.outer_encoder_lr = train.encoder_lr;
        meta.outer_classifier_lr = train.classifier_lr;
        meta.outer_optimizer = train.optimizer;
        meta.weight_decay = train.weight_decay;
        meta.warmup_fraction = train.warmup_fraction;
        meta.schedule = train.schedule;
        meta.keep_fraction = train.keep_fraction;
        meta.soft_init = train.soft_init;
        meta.seed = train.seed;
    }
};

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

fs::path split_path(const std::string& data_dir, const std::string& lang, Split split) {
    return fs::path(data_dir) / lang / (std::string(to_string(split)) + ".conllu");
}

Treebank load_split(const std::string& data_dir, const std::string& lang, Split split) {
    const auto p = split_path(data_dir, lang, split);
    if (!fs::exists(p)) throw UsageError("missing " + std::string(to_string(split)) + " data for '" + lang + "': " + p.string());
    return read_conllu(p.string(), lang, split);
}

Treebank load_file(const std::string& path, const std::string& lang, Split split) {
    if (!fs::exists(path)) throw UsageError("no such file: " + path);
    return read_conllu(path, lang, split);
}

// Every treebank under the data directory, so test languages share the vocabulary.
std::vector<Treebank> vocabulary_treebanks(const std::string& data_dir) {
    if (!fs::is_directory(data_dir)) throw UsageError("data directory not found: " + data_dir);
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(data_dir))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    std::vector<Treebank> out;
    for (const auto& d : dirs)
        for (auto split : {Split::train, Split::dev, Split::test})
            if (fs::exists(split_path(data_dir, d.filename().string(), split)))
                out.push_back(load_split(data_dir, d.filename().string(), split));
    if (out.empty()) throw UsageError("no treebanks under " + data_dir);
    return out;
}

fs::path mask_path(const std::string& maskdir, const std::string& lang) {
    return fs::path(maskdir) / (lang + ".mask.json");
}

MaskFile load_mask(const std::string& maskdir, const std::string& lang) {
    if (maskdir.empty()) throw UsageError("--maskdir is required when masks are used");
    const auto p = mask_path(maskdir, lang);
    if (!fs::exists(p)) throw UsageError("no mask file for language '" + lang + "': " + p.string());
    return read_mask_file(p.string());
}

void ensure_parent(const std::string& path) {
    const auto parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

void write_text(const std::string& path, const std::string& text) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write " + path);
    out << text;
    if (!out) throw UsageError("failed writing " + path);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open " + path);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string number(double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

const std::string& meta_value(const Checkpoint& ck, const std::string& key) {
    const auto it = ck.metadata.find(key);
    if (it == ck.metadata.end()) throw FormatError("checkpoint metadata lacks '" + key + "'");
    return it->second;
}

// --- gen-toy -------------------------------------------------------------------

struct GenToyArgs {
    std::vector<std::string> specs;
    std::size_t train = 500, dev = 100, test = 200;
    std::uint64_t seed = 0;
    std::string out;
};

void cmd_gen_toy(const GenToyArgs& a, std::ostream& out) {
    std::map<std::string, LanguageMeta> vectors;
    for (const auto& path : a.specs) {
        if (!fs::exists(path)) throw UsageError("no such file: " + path);
        const auto spec = read_toy_spec(path);
        if (vectors.count(spec.language)) throw UsageError("language '" + spec.language + "' specified twice");
        const std::vector<std::pair<Split, std::size_t>> parts{{Split::train, a.train}, {Split::dev, a.dev}, {Split::test, a.test}};
        for (const auto& [split, n] : parts) {
            const auto tb = gen_toy_treebank(spec, n, toy_split_seed(spec.language, a.seed, split), split);
            const auto p = split_path(a.out, spec.language, split);
            ensure_parent(p.string());
            write_conllu(p.string(), tb);
        }
        vectors[spec.language] = LanguageMeta{spec.language, toy_typology_vector(spec), {}};
    }
    write_text((fs::path(a.out) / "lang_vectors.csv").string(), format_language_vectors(vectors));
    out << "wrote " << vectors.size() << " languages to " << a.out << "\n";
}

// --- prune -----------------------------------------------------------------------

struct PruneArgs {
    std::string lang, train, dev, stage1, out;
    int seeds = 4;  // consecutive seeds from --seed
    double rate = 0.10, stop = 0.95;
    std::size_t importance_sentences = 0;
    ModelOptions model;
    TrainOptions opts;
};

void cmd_prune(PruneArgs a, std::ostream& out) {
    a.opts.resolve();
    if (a.seeds < 1) throw UsageError("--seeds must be at least 1");
    const auto train = load_file(a.train, a.lang, Split::train);
    const auto dev = load_file(a.dev, a.lang, Split::dev);
    ParserModel base;
    if (!a.stage1.empty()) {
        base = read_checkpoint(a.stage1).model;
    } else {
        a.model.encoder.seed = a.opts.train.seed;
        base = make_parser_model(a.model.encoder, a.model.arc_dim, a.model.tag_dim, {train, dev});
    }
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < a.seeds; ++i) seeds.push_back(a.opts.train.seed + static_cast<std::uint64_t>(i));
    PruneConfig pc;
    pc.rate = a.rate;
    pc.stop_ratio = a.stop;
    pc.importance_sentences = a.importance_sentences;
    const auto result = discover_subnetwork(a.lang, base, train, dev, seeds, a.opts.train, pc);

    MaskFile file{result.mask, std::nullopt, MaskProvenance{seeds, a.stop, a.rate, {}}};
    for (const auto& r : result.per_seed) {
        double las = r.trace.original_dev_las;
        for (const auto& it : r.trace.iterations)
            if (it.accepted) las = it.dev_las;
        file.provenance.dev_las.push_back(las);
    }
    ensure_parent(a.out);
    write_mask_file(a.out, file);
    out << a.lang << ": " << result.mask.disabled_count() << " of " << result.mask.bits.size()
        << " heads disabled\n";
}

// --- train / ablate ----------------------------------------------------------------

struct TrainArgs {
    std::string mode = "nonep";
    std::string masks = "none";
    std::string langs, data_dir, maskdir, stage1, init, out;
    ModelOptions model;
    TrainOptions opts;
    // ablation only
    std::string kind;
    double rate = 0.10, stop = 0.95;
};

LanguageMask head_mask_for(const TrainArgs& a, const MaskFile& file) {
    if (a.masks == "static") return LanguageMask::fixed(file.mask);
    SoftMask soft = file.soft_weights
                        ? SoftMask{file.mask.language, *file.soft_weights, a.opts.train.keep_fraction, a.opts.train.soft_init}
                        : SoftMask::from_static(file.mask, a.opts.train.keep_fraction, a.opts.train.soft_init);
    return LanguageMask::dynamic(std::move(soft));
}

MaskSet build_masks(const TrainArgs& a, const std::vector<std::string>& langs, const ParserModel& model,
                    const std::map<std::string, Treebank>& treebanks, std::string& method) {
    MaskSet masks;
    if (a.kind.empty()) {
        method = a.masks == "none" ? "full" : a.masks;
        if (a.masks == "none") return masks;
        for (const auto& lang : langs) {
            auto file = load_mask(a.maskdir, lang);
            file.mask.language = lang;
            file.mask.check_shape(model.state.config.encoder);
            masks[lang] = head_mask_for(a, file);
        }
        return masks;
    }

    if (a.kind == "magnitude") {
        method = a.masks == "dynamic" ? "magnitude_dynamic" : "magnitude";
        PruneConfig pc;
        pc.rate = a.rate;
        pc.stop_ratio = a.stop;
        pc.seed = a.opts.train.seed;
        const auto n_params = model.state.values.size();
        for (const auto& lang : langs) {
            const auto dev = load_split(a.data_dir, lang, Split::dev);
            auto found = discover_magnitude_mask(lang, model, treebanks.at(lang), dev, a.opts.train, pc);
            if (a.masks == "dynamic") {
                masks[lang] = LanguageMask::dynamic(
                    ParamSoftMask::from_static(found.mask, a.opts.train.keep_fraction, a.opts.train.soft_init), n_params);
            } else {
                masks[lang] = LanguageMask::fixed(std::move(found.mask));
            }
        }
        return masks;
    }

    const auto spec = parse_ablation(a.kind);
    const bool dr20 = spec.kind == AblationKind::random_init_dynamic;
    method = a.kind + (a.masks == "dynamic" && !dr20 ? "/dynamic" : "");
    std::uint64_t index = 0;
    for (const auto& lang : langs) {
        auto file = load_mask(a.maskdir, lang);
        file.mask.language = lang;
        file.mask.check_shape(model.state.config.encoder);
        const std::uint64_t seed = a.opts.train.seed * 1000 + index++;
        if (dr20) {
            masks[lang] = LanguageMask::dynamic(
                make_random_soft_mask(file.mask, a.opts.train.keep_fraction, a.opts.train.soft_init, seed));
        } else {
            MaskFile ablated{make_ablation_mask(spec, file.mask, {}, seed), std::nullopt, {}};
            masks[lang] = head_mask_for(a, ablated);
        }
    }
    return masks;
}

void cmd_train(TrainArgs a, std::ostream& out) {
    a.opts.resolve();
    if (a.mode != "nonep" && a.mode != "meta") throw UsageError("--mode must be nonep or meta");
    if (a.masks != "none" && a.masks != "static" && a.masks != "dynamic") {
        throw UsageError("--masks must be none, static or dynamic");
    }
    if (!a.kind.empty() && a.masks == "none") a.masks = "static";
    if (a.kind == "dr20") a.masks = "dynamic";
    if (a.data_dir.empty()) throw UsageError("--data-dir is required");
    const auto langs = split_list(a.langs);
    if (langs.empty() && a.stage1.empty()) throw UsageError("nothing to train: give --langs and/or --stage1");
    if (!a.stage1.empty() && std::find(langs.begin(), langs.end(), a.stage1) != langs.end()) {
        throw UsageError("stage-1 language '" + a.stage1 + "' must not also be a multilingual training language");
    }
    if (langs.empty() && !a.kind.empty()) throw UsageError("ablations need --langs");

    std::map<std::string, Treebank> treebanks;
    for (const auto& lang : langs) treebanks[lang] = load_split(a.data_dir, lang, Split::train);

    ParserModel model;
    if (!a.init.empty()) {
        model = read_checkpoint(a.init).model;
    } else {
        a.model.encoder.seed = a.opts.train.seed;
        model = make_parser_model(a.model.encoder, a.model.arc_dim, a.model.tag_dim, vocabulary_treebanks(a.data_dir));
    }

    Checkpoint ck;
    ck.metadata["framework"] = a.mode;
    ck.metadata["seed"] = std::to_string(a.opts.train.seed);
    ck.metadata["langs"] = a.langs;
    ck.metadata["weight_decay"] = number(a.opts.train.weight_decay);
    if (a.mode == "meta") {
        ck.metadata["adapt_rule"] = "sgd";
        ck.metadata["adapt_encoder_lr"] = number(a.opts.meta.inner_encoder_lr);
        ck.metadata["adapt_classifier_lr"] = number(a.opts.meta.inner_classifier_lr);
    } else {
        ck.metadata["adapt_rule"] = "adam";
        ck.metadata["adapt_encoder_lr"] = number(a.opts.train.encoder_lr);
        ck.metadata["adapt_classifier_lr"] = number(a.opts.train.classifier_lr);
    }

    if (!a.stage1.empty()) {
        const auto tb = load_split(a.data_dir, a.stage1, Split::train);
        const auto stage1 = train_stage1(model, tb, a.opts.train);
        for (std::size_t i = 0; i < tb.sentences.size(); ++i)
            for (const auto& t : tb.sentences[i].tokens) model.training_labels.add(t.deprel);
        ensure_parent(a.out);
        stage1.write(a.out + ".stage1.csv");
        ck.metadata["stage1"] = a.stage1;
    }
    for (const auto& [lang, tb] : treebanks)
        for (const auto& s : tb.sentences)
            for (const auto& t : s.tokens) model.training_labels.add(t.deprel);

    std::string method = "full";
    MaskSet masks = build_masks(a, langs, model, treebanks, method);
    ck.metadata["method"] = method;
    ck.metadata["masks"] = a.masks;
    if (!a.kind.empty()) ck.metadata["ablation"] = a.kind;

    RunTrace trace;
    trace.add(0, "meta", "framework", 0.0, {}, a.mode);
    trace.add(0, "meta", "method", 0.0, {}, method);
    trace.add(0, "meta", "seed", static_cast<double>(a.opts.train.seed), {}, std::to_string(a.opts.train.seed));
    if (!langs.empty()) {
        const auto run = a.mode == "meta" ? meta_train(model, treebanks, masks, a.opts.meta)
                                          : train_stage2(model, treebanks, masks, a.opts.train);
        for (const auto& row : run.rows()) trace.add(row.iteration, row.record, row.language, row.value, row.other, row.detail);
    }

    ck.model = std::move(model);
    ck.masks = std::move(masks);
    ensure_parent(a.out);
    write_checkpoint(a.out, ck);
    trace.write(a.out + ".trace.csv");
    out << "wrote " << a.out << " (" << a.mode << ", " << method << ")\n";
}

// --- fewshot ---------------------------------------------------------------------------

struct FewShotArgs {
    std::string ckpt, test, dev, lang, mask = "auto", lang_vectors, method, out;
    int shots = 20, steps = 20, seeds = 5;
    std::uint64_t seed = 0;
};

LanguageMask as_fixed(const LanguageMask& m) {
    if (m.is_head()) return LanguageMask::fixed(m.head);
    if (m.is_param()) return LanguageMask::fixed(m.param);
    return {};
}

std::string tally_rows(const std::string& framework, const std::string& method, const std::string& lang,
                       std::uint64_t seed, const RareUnseenCounts& c) {
    std::string out;
    for (const auto& [name, t] : {std::pair<std::string, const RareLabelTally*>{"rare", &c.rare},
                                  std::pair<std::string, const RareLabelTally*>{"unseen", &c.unseen}}) {
        std::string labels, correct;
        for (const auto& l : t->labels) labels += (labels.empty() ? "" : ";") + l;
        for (const auto& l : t->labels_correct) correct += (correct.empty() ? "" : ";") + l;
        out += framework + ',' + method + ',' + lang + ',' + std::to_string(seed) + ',' + name + ',' +
               std::to_string(t->instances) + ',' + std::to_string(t->correct) + ',' + labels + ',' + correct + '\n';
    }
    return out;
}

constexpr const char* kTallyHeader = "framework,method,test_lang,seed,category,instances,correct,labels,labels_correct";

void cmd_fewshot(const FewShotArgs& a, std::ostream& out) {
    if (a.seeds < 1) throw UsageError("--seeds must be at least 1");
    const auto ck = read_checkpoint(a.ckpt);
    const std::string lang = a.lang.empty() ? fs::path(a.test).parent_path().filename().string() : a.lang;
    if (lang.empty()) throw UsageError("cannot infer the test language; pass --lang");
    const auto test = load_file(a.test, lang, Split::test);
    std::optional<Treebank> dev;
    if (!a.dev.empty()) dev = load_file(a.dev, lang, Split::dev);

    const std::string framework = meta_value(ck, "framework");
    FewShotConfig cfg;
    cfg.shots = a.shots;
    cfg.steps = a.steps;
    cfg.rule = meta_value(ck, "adapt_rule") == "sgd" ? AdaptRule::sgd : AdaptRule::adam;
    cfg.encoder_lr = std::stod(meta_value(ck, "adapt_encoder_lr"));
    cfg.classifier_lr = std::stod(meta_value(ck, "adapt_classifier_lr"));
    cfg.weight_decay = std::stod(meta_value(ck, "weight_decay"));

    std::vector<LanguageMeta> trained;
    for (const auto& [code, m] : ck.masks) trained.push_back(LanguageMeta{code, {}, {}});
    std::string method = a.method.empty() ? meta_value(ck, "method") : a.method;
    if (a.method.empty() && a.mask == "random") method += "+random";

    LanguageMask fixed_mask;
    nlohmann::json meta;
    meta["test_lang"] = lang;
    meta["mask"] = a.mask;
    const bool per_seed = a.mask == "random";
    if (a.mask == "auto") {
        if (a.lang_vectors.empty()) throw UsageError("--mask auto needs --lang-vectors");
        if (trained.empty()) throw UsageError("checkpoint has no language masks to transfer");
        const auto vectors = load_language_vectors(a.lang_vectors);
        const auto t = vectors.find(lang);
        if (t == vectors.end()) throw UsageError("no language vector for '" + lang + "'");
        for (auto& m : trained) {
            const auto v = vectors.find(m.code);
            if (v == vectors.end()) throw UsageError("no language vector for '" + m.code + "'");
            m.typo_vector = v->second.typo_vector;
        }
        const auto choice = select_transfer_mask(t->second, trained);
        fixed_mask = as_fixed(ck.masks.at(choice.language));
        meta["selected"] = choice.language;
        meta["cosine"] = choice.cosine;
    } else if (a.mask == "random") {
        if (trained.empty()) throw UsageError("checkpoint has no language masks to transfer");
    } else if (a.mask != "none") {
        if (!fs::exists(a.mask)) throw UsageError("--mask must be auto, random, none or a mask file; no such file: " + a.mask);
        auto file = read_mask_file(a.mask);
        file.mask.check_shape(ck.model.state.config.encoder);
        fixed_mask = LanguageMask::fixed(file.mask);
        meta["selected"] = file.mask.language;
    }

    std::vector<LasRecord> rows;
    std::string tallies = std::string(kTallyHeader) + "\n";
    double sum_las = 0.0, sum_uas = 0.0;
    nlohmann::json selections = nlohmann::json::array();
    for (int i = 0; i < a.seeds; ++i) {
        const std::uint64_t seed = a.seed + static_cast<std::uint64_t>(i);
        if (per_seed) {
            const auto choice = random_transfer_mask(trained, seed);
            fixed_mask = as_fixed(ck.masks.at(choice.language));
            selections.push_back(choice.language);
        }
        cfg.seeds = {seed};
        std::vector<Treebank> predictions;
        const auto r = fewshot_adapt(ck.model, test, dev ? &*dev : nullptr,
                                     fixed_mask.mode == MaskMode::none ? nullptr : &fixed_mask, cfg, &predictions);
        const auto& run = r.runs.front();
        rows.push_back(LasRecord{lang, method, framework, seed, run.scores.las, run.scores.uas});
        sum_las += run.scores.las;
        sum_uas += run.scores.uas;
        Treebank gold{test.language, test.split, {}};
        for (auto s : run.eval_indices) gold.sentences.push_back(test.sentences[s]);
        tallies += tally_rows(framework, method, lang, seed, count_rare_unseen(ck.model.training_labels, gold, predictions.front()));
    }
    if (per_seed) meta["selected"] = selections;
    meta["mean_las"] = sum_las / a.seeds;
    meta["mean_uas"] = sum_uas / a.seeds;

    write_text(a.out, format_las_csv(rows));
    write_text(a.out + ".rare_unseen.csv", tallies);
    write_text(a.out + ".meta.json", meta.dump(2) + "\n");
    out << lang << " " << framework << " " << method << ": mean LAS " << sum_las / a.seeds << "\n";
}

// --- analyze -----------------------------------------------------------------------

struct AnalyzeArgs {
    std::string trace, baseline, out;
    int window = kDefaultConflictWindow;
    int smoothing = 10;
};

std::map<std::string, std::string> trace_meta(const RunTrace& t) {
    std::map<std::string, std::string> out;
    for (const auto& row : t.select("meta")) out[row.language] = row.detail;
    return out;
}

RunTrace load_trace(const std::string& path) {
    if (!fs::exists(path)) throw UsageError("no such file: " + path);
    return RunTrace::read(path);
}

void cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
    const auto run = load_trace(a.trace);
    const auto meta = trace_meta(run);
    const auto get = [&](const std::string& k) { return meta.count(k) ? meta.at(k) : std::string("unknown"); };
    const auto report = conflict_stats(ConflictTrace::from_run(run), a.window);
    ConflictRecord rec{get("method"), get("framework"), 0, a.window, report.conflict_pct, report.mean_cosine};
    if (meta.count("seed")) rec.seed = std::stoull(meta.at("seed"));

    if (!a.baseline.empty()) {
        const auto base = load_trace(a.baseline);
        const auto series = interference_series(ConflictTrace::from_run(base), ConflictTrace::from_run(run), a.smoothing);
        const auto p = pearson(series.conflict_decrease, series.cosine_increase);
        const auto bmeta = trace_meta(base);
        std::string text = "framework,method,seed,baseline_method,smoothing,n,r,p_value\n";
        text += rec.framework + ',' + rec.method + ',' + std::to_string(rec.seed) + ',' +
                (bmeta.count("method") ? bmeta.at("method") : std::string("unknown")) + ',' +
                std::to_string(a.smoothing) + ',' + std::to_string(p.n) + ',' + number(p.r) + ',' + number(p.p_value) + '\n';
        write_text(a.out + ".pearson.csv", text);
        out << "pearson r " << p.r << " (p " << p.p_value << ")\n";
    }
    write_text(a.out, format_conflicts_csv({rec}));
    out << rec.framework << " " << rec.method << ": " << report.conflict_pct << "% conflicts, mean cosine "
        << report.mean_cosine << " over the last " << a.window << " iterations\n";
}

// --- report ------------------------------------------------------------------------

std::vector<std::string> csv_cells(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::set<std::string> label_set(const std::string& text) {
    std::set<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ';'))
        if (!item.empty()) out.insert(item);
    return out;
}

void cmd_report(const std::string& results, const std::string& out_dir, std::ostream& out) {
    if (!fs::is_directory(results)) throw UsageError("results directory not found: " + results);
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(results))
        if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    const auto out_abs = fs::weakly_canonical(out_dir);

    ReportInputs in;
    std::map<std::tuple<std::string, std::string, std::string>, RareUnseenRecord> tallies;
    for (const auto& f : files) {
        if (fs::weakly_canonical(f).string().rfind(out_abs.string(), 0) == 0) continue;  // a previous report
        const auto text = read_text(f.string());
        const auto header = text.substr(0, text.find('\n'));
        if (header == "test_lang,method,framework,seed,LAS,UAS") {
            try {
                for (auto& r : parse_las_csv(text)) in.las.push_back(std::move(r));
            } catch (const FormatError& e) {
                throw FormatError(f.string() + ": " + e.what());
            }
        } else if (header == "framework,method,seed,window,conflict_pct,mean_cosine") {
            std::stringstream ss(text);
            std::string line;
            std::getline(ss, line);
            long lineno = 1;
            while (std::getline(ss, line)) {
                ++lineno;
                if (line.empty()) continue;
                const auto c = csv_cells(line);
                if (c.size() != 6) throw FormatError(f.string() + ": expected 6 fields", lineno);
                try {
                    in.conflicts.push_back(ConflictRecord{c[1], c[0], std::stoull(c[2]), std::stoi(c[3]), std::stod(c[4]), std::stod(c[5])});
                } catch (const std::invalid_argument&) {
                    throw FormatError(f.string() + ": malformed number", lineno);
                }
            }
        } else if (header == kTallyHeader) {
            std::stringstream ss(text);
            std::string line;
            std::getline(ss, line);
            long lineno = 1;
            while (std::getline(ss, line)) {
                ++lineno;
                if (line.empty()) continue;
                const auto c = csv_cells(line);
                if (c.size() != 9) throw FormatError(f.string() + ": expected 9 fields", lineno);
                auto& rec = tallies[{c[0], c[1], c[2]}];
                rec.framework = c[0];
                rec.method = c[1];
                rec.test_lang = c[2];
                auto& t = c[4] == "rare" ? rec.counts.rare : rec.counts.unseen;
                try {
                    t.instances += std::stoull(c[5]);
                    t.correct += std::stoull(c[6]);
                } catch (const std::invalid_argument&) {
                    throw FormatError(f.string() + ": malformed number", lineno);
                }
                for (const auto& l : label_set(c[7])) t.labels.insert(l);
                for (const auto& l : label_set(c[8])) t.labels_correct.insert(l);
            }
        }
    }
    for (auto& [k, r] : tallies) in.rare_unseen.push_back(std::move(r));
    const auto written = emit_report(in, out_dir);
    out << "wrote " << written.size() << " report files to " << out_dir << " from " << in.las.size()
        << " LAS rows\n";
}

// Every subcommand with its bound arguments. Built twice per run: once to
// find the config file, once more with the config values folded in.
struct Cli {
    CLI::App app{"Multilingual dependency parsing with language-specific subnetworks"};
    std::string config;
    GenToyArgs gen;
    PruneArgs prune;
    TrainArgs train;
    TrainArgs ablate;
    FewShotArgs fewshot;
    AnalyzeArgs analyze;
    std::string results, report_out;
    CLI::App *gen_cmd = nullptr, *prune_cmd = nullptr, *train_cmd = nullptr, *ablate_cmd = nullptr, *fewshot_cmd = nullptr, *analyze_cmd = nullptr, *report_cmd = nullptr;

    explicit Cli(const std::string& name) {
        app.name(name);
        app.require_subcommand(1);

        gen_cmd = app.add_subcommand("gen-toy", "generate synthetic treebanks and typology vectors");
        gen_cmd->add_option("--config", config, "config file (TOML keys mirror the flag names; flags win)");
        gen_cmd->add_option("--spec", gen.specs, "toy grammar spec file (repeatable)")->required();
        gen_cmd->add_option("--train", gen.train, "training sentences per language")->capture_default_str();
        gen_cmd->add_option("--dev", gen.dev, "dev sentences per language")->capture_default_str();
        gen_cmd->add_option("--test", gen.test, "test sentences per language")->capture_default_str();
        gen_cmd->add_option("--seed", gen.seed, "generator seed")->capture_default_str();
        gen_cmd->add_option("--out", gen.out, "output directory")->required();

        prune_cmd = app.add_subcommand("prune", "discover a language's subnetwork by iterative head pruning");
        prune_cmd->add_option("--config", config, "config file (TOML keys mirror the flag names; flags win)");
        prune_cmd->add_option("--lang", prune.lang, "language code")->required();
        prune_cmd->add_option("--train", prune.train, "training treebank (CoNLL-U)")->required();
        prune_cmd->add_option("--dev", prune.dev, "dev treebank (CoNLL-U)")->required();
        prune_cmd->add_option("--seeds", prune.seeds, "number of seeds whose masks are united")->capture_default_str();
        prune_cmd->add_option("--rate", prune.rate, "share of heads removed per iteration")->capture_default_str();
        prune_cmd->add_option("--stop", prune.stop, "stop below this share of the unpruned dev LAS")->capture_default_str();
        prune_cmd->add_option("--importance-sentences", prune.importance_sentences,
                              "training sentences used for head importance (0 = all)")->capture_default_str();
        prune_cmd->add_option("--stage1", prune.stage1, "checkpoint to fine-tune from");
        prune_cmd->add_option("--out", prune.out, "mask file to write")->required();
        prune.model.add(prune_cmd);
        prune.opts.add_finetune(prune_cmd);

        const auto add_train = [this](CLI::App* cmd, TrainArgs& t) {
            cmd->add_option("--config", config, "config file (TOML keys mirror the flag names; flags win)");
            cmd->add_option("--mode", t.mode, "nonep or meta")->capture_default_str();
            cmd->add_option("--masks", t.masks, "none, static or dynamic")->capture_default_str();
            cmd->add_option("--langs", t.langs, "comma-separated training languages");
            cmd->add_option("--data-dir", t.data_dir, "directory with <lang>/{train,dev,test}.conllu")->required();
            cmd->add_option("--maskdir", t.maskdir, "directory with <lang>.mask.json");
            cmd->add_option("--stage1", t.stage1, "language for single-language training before the multilingual stage");
            cmd->add_option("--init", t.init, "checkpoint to start from");
            cmd->add_option("--out", t.out, "checkpoint to write (the trace goes to <out>.trace.csv)")->required();
            t.model.add(cmd);
            t.opts.add_all(cmd);
        };
        train_cmd = app.add_subcommand("train", "train a parser (non-episodic or meta-learning)");
        add_train(train_cmd, train);

        ablate_cmd = app.add_subcommand("ablate", "train with an ablated mask");
        add_train(ablate_cmd, ablate);
        ablate_cmd->add_option("--kind", ablate.kind, "shuffle, random:N, bad:N, dr20 or magnitude")->required();
        ablate_cmd->add_option("--rate", ablate.rate, "magnitude pruning: share removed per iteration")->capture_default_str();
        ablate_cmd->add_option("--stop", ablate.stop, "magnitude pruning: stop ratio")->capture_default_str();

        fewshot_cmd = app.add_subcommand("fewshot", "few-shot adaptation and evaluation on a test language");
        fewshot_cmd->add_option("--config", config, "config file (TOML keys mirror the flag names; flags win)");
        fewshot_cmd->add_option("--ckpt", fewshot.ckpt, "trained checkpoint")->required();
        fewshot_cmd->add_option("--test", fewshot.test, "test treebank (CoNLL-U)")->required();
        fewshot_cmd->add_option("--dev", fewshot.dev, "take the shots from this treebank instead of the test set");
        fewshot_cmd->add_option("--lang", fewshot.lang, "test language code (default: the test file's directory name)");
        fewshot_cmd->add_option("--mask", fewshot.mask, "auto, random, none or a mask file")->capture_default_str();
        fewshot_cmd->add_option("--lang-vectors", fewshot.lang_vectors, "typology vectors (lang,f1,...,fK)");
        fewshot_cmd->add_option("--method", fewshot.method, "method label for the results (default from the checkpoint)");
        fewshot_cmd->add_option("--shots", fewshot.shots, "adaptation sentences")->capture_default_str();
        fewshot_cmd->add_option("--steps", fewshot.steps, "adaptation updates")->capture_default_str();
        fewshot_cmd->add_option("--seeds", fewshot.seeds, "number of seeds")->capture_default_str();
        fewshot_cmd->add_option("--seed", fewshot.seed, "first seed")->capture_default_str();
        fewshot_cmd->add_option("--out", fewshot.out, "LAS table to write")->required();

        analyze_cmd = app.add_subcommand("analyze", "gradient-conflict statistics of a training trace");
        analyze_cmd->add_option("--config", config, "config file (TOML keys mirror the flag names; flags win)");
        analyze_cmd->add_option("--trace", analyze.trace, "training trace CSV")->required();
        analyze_cmd->add_option("--window", analyze.window, "trailing iterations")->capture_default_str();
        analyze_cmd->add_option("--baseline", analyze.baseline, "baseline trace for the correlation analysis");
        analyze_cmd->add_option("--smoothing", analyze.smoothing, "window of the per-iteration series")->capture_default_str();
        analyze_cmd->add_option("--out", analyze.out, "CSV to write")->required();

        report_cmd = app.add_subcommand("report", "aggregate result tables");
        report_cmd->add_option("--config", config, "config file (TOML keys mirror the flag names; flags win)");
        report_cmd->add_option("--results", results, "directory of result CSVs")->required();
        report_cmd->add_option("--out", report_out, "output directory")->required();
    }
};

bool given(const std::vector<std::string>& args, const std::string& flag) {
    for (const auto& a : args)
        if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    return false;
}

// Command-line arguments extended with config-file values for flags that were
// not given explicitly.
std::vector<std::string> with_config(const std::vector<std::string>& args, const Cli& cli) {
    if (args.size() < 2) return args;
    const auto* sub = cli.app.get_subcommand_no_throw(args[1]);
    if (!sub) return args;
    std::string path;
    for (std::size_t i = 2; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (path.empty()) return args;
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::ParseError& e) {
        throw FormatError(path + ": " + e.what());
    }
    std::vector<std::string> out(args.begin(), args.begin() + 2);
    for (const auto& item : items) {
        if (!item.parents.empty() || item.name == "config") throw UsageError(path + ": unknown key '" + item.fullname() + "'");
        const auto* opt = sub->get_option_no_throw("--" + item.name);
        if (!opt) throw UsageError(path + ": unknown key '" + item.name + "' for " + sub->get_name());
        if (given(args, "--" + item.name)) continue;
        if (opt->get_expected_min() == 0) {
            if (item.inputs.size() == 1 && (item.inputs[0] == "true" || item.inputs[0] == "1")) out.push_back("--" + item.name);
            continue;
        }
        for (const auto& v : item.inputs) {
            out.push_back("--" + item.name);
            out.push_back(v);
        }
    }
    out.insert(out.end(), args.begin() + 2, args.end());
    return out;
}

int parse(Cli& cli, const std::vector<std::string>& args, std::ostream& out, std::ostream& err, bool& done) {
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    done = false;
    try {
        cli.app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        done = true;
        return cli.app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        done = true;
        return cli.app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        done = true;
        cli.app.exit(e, out, err);
        return 1;
    }
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<std::string> argv = args;
    if (argv.empty()) argv.push_back("snp");
    const std::string name = fs::path(argv[0]).filename().string();
    auto cli = std::make_unique<Cli>(name);
    try {
        argv = with_config(argv, *cli);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const FormatError& e) {
        err << "data error: " << e.what() << "\n";
        return 2;
    }
    bool done = false;
    const int code = parse(*cli, argv, out, err, done);
    if (done) return code;
    Cli& c = *cli;

    try {
        if (*c.gen_cmd) cmd_gen_toy(c.gen, out);
        if (*c.prune_cmd) cmd_prune(c.prune, out);
        if (*c.train_cmd) cmd_train(c.train, out);
        if (*c.ablate_cmd) cmd_train(c.ablate, out);
        if (*c.fewshot_cmd) cmd_fewshot(c.fewshot, out);
        if (*c.analyze_cmd) cmd_analyze(c.analyze, out);
        if (*c.report_cmd) cmd_report(c.results, c.report_out, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const FormatError& e) {
        err << "data error: " << e.what() << "\n";
        return 2;
    } catch (const StructuralError& e) {
        err << "data error: " << e.what() << "\n";
        return 2;
    } catch (const ContractError& e) {
        err << "internal error: " << e.what() << "\n";
        return 3;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

}  // namespace snp
