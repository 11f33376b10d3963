#include "crisisfuse/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "crisisfuse/gradcheck_suite.hpp"

namespace crisisfuse {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& body)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << body;
    if (!out) throw InputError("failed writing " + path.string());
}

fs::path resolve(const std::string& path, const fs::path& base)
{
    if (path.empty()) return base;
    const fs::path p(path);
    return p.is_absolute() ? p : base / p;
}

ojson config_to_ojson(const ExperimentConfig& c)
{
    ojson j;
    j["task"] = c.task;
    j["mode"] = to_string(c.mode);
    j["splits"] = c.splits;
    j["data_root"] = c.data_root;
    j["image_root"] = c.image_root;
    j["out"] = c.out;
    j["seed"] = c.seed;
    j["lr"] = c.lr;
    j["batch_size"] = c.batch_size;
    j["max_epochs"] = c.max_epochs;
    j["patience"] = c.patience;
    j["plateau_patience"] = c.plateau_patience ? ojson(*c.plateau_patience) : ojson(nullptr);
    j["plateau_factor"] = c.plateau_factor;
    j["min_lr"] = c.min_lr;
    j["stop_counts_at_lr_floor"] = c.stop_counts_at_lr_floor;
    j["target_dev_accuracy"] = c.target_dev_accuracy ? ojson(*c.target_dev_accuracy) : ojson(nullptr);
    j["max_len"] = c.max_len;
    j["embeddings"] = c.embeddings;
    j["embed_dim"] = c.embed_dim;
    j["filters"] = c.filters;
    j["windows"] = c.windows;
    j["text_hidden"] = c.text_hidden;
    j["text_hidden2"] = c.text_hidden2;
    j["text_dropout"] = c.text_dropout;
    j["train_embeddings"] = c.train_embeddings;
    j["width_scale"] = c.width_scale;
    j["image_size"] = c.image_size;
    j["fc_dropout"] = c.fc_dropout;
    j["fusion_projection"] = c.fusion_projection;
    j["fusion_hidden"] = c.fusion_hidden;
    j["warm_text"] = c.warm_text;
    j["warm_image"] = c.warm_image;
    j["pretrained_vgg"] = c.pretrained_vgg;
    j["freeze_text"] = c.freeze_text;
    j["freeze_image"] = c.freeze_image;
    return j;
}

ExperimentConfig config_from_ojson(const ojson& j)
{
    ExperimentConfig c;
    try {
        c.task = j.at("task").get<std::string>();
        c.mode = parse_modality(j.at("mode").get<std::string>());
        c.splits = j.at("splits").get<std::string>();
        c.data_root = j.at("data_root").get<std::string>();
        c.image_root = j.at("image_root").get<std::string>();
        c.out = j.at("out").get<std::string>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.lr = j.at("lr").get<double>();
        c.batch_size = j.at("batch_size").get<std::size_t>();
        c.max_epochs = j.at("max_epochs").get<std::size_t>();
        c.patience = j.at("patience").get<std::size_t>();
        if (!j.at("plateau_patience").is_null()) c.plateau_patience = j.at("plateau_patience").get<std::size_t>();
        c.plateau_factor = j.at("plateau_factor").get<double>();
        c.min_lr = j.at("min_lr").get<double>();
        c.stop_counts_at_lr_floor = j.at("stop_counts_at_lr_floor").get<bool>();
        if (!j.at("target_dev_accuracy").is_null()) c.target_dev_accuracy = j.at("target_dev_accuracy").get<double>();
        c.max_len = j.at("max_len").get<std::size_t>();
        c.embeddings = j.at("embeddings").get<std::string>();
        c.embed_dim = j.at("embed_dim").get<std::size_t>();
        c.filters = j.at("filters").get<std::vector<std::size_t>>();
        c.windows = j.at("windows").get<std::vector<std::size_t>>();
        c.text_hidden = j.at("text_hidden").get<std::size_t>();
        c.text_hidden2 = j.at("text_hidden2").get<std::size_t>();
        c.text_dropout = j.at("text_dropout").get<double>();
        c.train_embeddings = j.at("train_embeddings").get<bool>();
        c.width_scale = j.at("width_scale").get<double>();
        c.image_size = j.at("image_size").get<std::size_t>();
        c.fc_dropout = j.at("fc_dropout").get<double>();
        c.fusion_projection = j.at("fusion_projection").get<std::size_t>();
        c.fusion_hidden = j.at("fusion_hidden").get<std::size_t>();
        c.warm_text = j.at("warm_text").get<std::string>();
        c.warm_image = j.at("warm_image").get<std::string>();
        c.pretrained_vgg = j.at("pretrained_vgg").get<std::string>();
        c.freeze_text = j.at("freeze_text").get<bool>();
        c.freeze_image = j.at("freeze_image").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid config value: ") + e.what());
    }
    return c;
}

ojson parse_json(std::string_view text, const std::string& what)
{
    try {
        return ojson::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(what + " is not valid JSON: " + e.what());
    }
}

std::vector<Sample> make_samples(const std::vector<TweetRecord>& records, const TaskSchema& schema,
                                 const Vocabulary* vocab, std::size_t max_len, const fs::path& image_root,
                                 bool unique_text)
{
    std::vector<Sample> out;
    std::set<std::string> seen;
    for (const auto& r : records) {
        if (unique_text && !seen.insert(r.tweet_id).second) continue;
        Sample s;
        s.id = r.tweet_id + "/" + r.image_id;
        s.label = schema.index(r.label);
        if (vocab != nullptr) s.token_ids = encode_tokens(preprocess_tweet(r.tweet_text), *vocab, max_len);
        s.image_path = resolve(r.image_path, image_root).string();
        out.push_back(std::move(s));
    }
    return out;
}

SplitManifest load_manifest(const fs::path& dir)
{
    return SplitManifest::from_json(read_file(dir / "manifest.json"));
}

// Model skeleton matching a finished run directory, with its weights loaded.
struct LoadedRun {
    ExperimentConfig config;
    SplitManifest manifest;
    Vocabulary vocab;
    std::optional<Classifier<float>> model;
};

LoadedRun load_run(const fs::path& run_dir)
{
    LoadedRun run;
    run.config = ExperimentConfig::defaults_for(Modality::text);
    run.config.apply_json(read_file(run_dir / "config.json"));
    run.manifest = load_manifest(run_dir);
    if (run.manifest.classes != TaskSchema::get(run.manifest.task).classes) {
        throw IncompatibilityError("run manifest class list differs from the current " +
                                   to_string(run.manifest.task) + " schema");
    }
    const bool text = run.config.mode != Modality::image;
    if (text) run.vocab = Vocabulary::load(run_dir / "vocab.txt");
    Rng rng(run.config.seed);
    run.model.emplace(run.config.model_config(run.manifest.task, run.vocab.size()), rng);
    const auto ckpt = Checkpoint::load(run_dir / "checkpoint.cfck");
    run.model->params().load_from(ckpt, "", true);
    return run;
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults_for(Modality mode)
{
    ExperimentConfig c;
    const auto t = TrainConfig::defaults_for(mode);
    c.mode = mode;
    c.lr = t.lr;
    c.batch_size = t.batch_size;
    c.max_epochs = t.max_epochs;
    c.patience = t.patience;
    c.plateau_patience = t.plateau_patience;
    c.plateau_factor = t.plateau_factor;
    c.min_lr = t.min_lr;
    c.stop_counts_at_lr_floor = t.stop_counts_at_lr_floor;
    c.seed = t.seed;
    return c;
}

std::string ExperimentConfig::to_json() const { return config_to_ojson(*this).dump(2) + "\n"; }

void ExperimentConfig::apply_json(std::string_view json)
{
    const auto overlay = parse_json(json, "config");
    if (!overlay.is_object()) throw ConfigError("config must be a JSON object");
    auto merged = config_to_ojson(*this);
    for (const auto& [key, value] : overlay.items()) {
        if (!merged.contains(key)) throw ConfigError("unknown config key '" + key + "'");
        merged[key] = value;
    }
    *this = config_from_ojson(merged);
}

void ExperimentConfig::apply_assignment(std::string_view assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
    }
    const std::string key(assignment.substr(0, eq));
    const std::string raw(assignment.substr(eq + 1));
    ojson value;
    try {
        value = ojson::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
        value = raw;
    }
    ojson overlay;
    overlay[key] = value;
    apply_json(overlay.dump());
}

TrainConfig ExperimentConfig::train_config() const
{
    TrainConfig t;
    t.modality = mode;
    t.lr = lr;
    t.batch_size = batch_size;
    t.max_epochs = max_epochs;
    t.patience = patience;
    t.plateau_patience = plateau_patience;
    t.plateau_factor = plateau_factor;
    t.min_lr = min_lr;
    t.stop_counts_at_lr_floor = stop_counts_at_lr_floor;
    t.seed = seed;
    t.target_dev_accuracy = target_dev_accuracy;
    return t;
}

ModelConfig ExperimentConfig::model_config(Task task, std::size_t vocab_size) const
{
    ModelConfig m;
    m.modality = mode;
    m.num_classes = TaskSchema::get(task).classes.size();
    m.max_len = max_len;
    m.text.vocab_size = std::max<std::size_t>(vocab_size, 2);
    m.text.embed_dim = embed_dim;
    m.text.filters = filters;
    m.text.windows = windows;
    m.text.hidden = text_hidden;
    m.text.hidden2 = text_hidden2;
    m.text.num_classes = m.num_classes;
    m.text.dropout = text_dropout;
    m.text.train_embeddings = train_embeddings;
    m.image.num_classes = m.num_classes;
    m.image.width_scale = width_scale;
    m.image.image_size = image_size;
    m.image.fc_dropout = fc_dropout;
    m.fusion.projection = fusion_projection;
    m.fusion.hidden = fusion_hidden;
    return m;
}

ExperimentConfig resolve_config(const std::optional<std::string>& config_file,
                                const std::vector<std::string>& assignments)
{
    ojson file = ojson::object();
    if (config_file) {
        file = parse_json(read_file(*config_file), *config_file);
        if (!file.is_object()) throw ConfigError(*config_file + ": config must be a JSON object");
    }
    Modality mode = Modality::text;
    if (file.contains("mode")) mode = parse_modality(file["mode"].get<std::string>());
    for (const auto& a : assignments) {
        if (a.rfind("mode=", 0) == 0) {
            ExperimentConfig probe;
            probe.apply_assignment(a);
            mode = probe.mode;
        }
    }
    auto config = ExperimentConfig::defaults_for(mode);
    if (config_file) config.apply_json(file.dump());
    for (const auto& a : assignments) config.apply_assignment(a);
    return config;
}

fs::path default_data_root()
{
    const char* env = std::getenv("CRISISFUSE_DATA_ROOT");
    return env != nullptr && *env != '\0' ? fs::path(env) : fs::path(".");
}

DatasetSplits cmd_prepare(const PrepareOptions& options, std::ostream& log)
{
    if (!fs::exists(options.annotations)) throw InputError("annotations file not found: " + options.annotations.string());
    const auto records = parse_annotations(options.annotations, options.task);
    auto splits = curate(records, options.task, options.seed, {}, options.max_len);
    for (const auto& w : splits.warnings) log << "warning: " << w << '\n';
    write_splits(options.out, splits);
    log << "parsed " << records.size() << " rows; " << splits.train.size() + splits.dev.size() + splits.test.size()
        << " kept after agreement filtering\n";
    log << format_count_table(splits.manifest);
    return splits;
}

TrainSummary cmd_train(const ExperimentConfig& input, std::ostream& log)
{
    ExperimentConfig config = input;
    if (config.out.empty()) throw ConfigError("output directory (out) is required");
    if (config.splits.empty()) throw ConfigError("split directory (splits) is required");
    const fs::path data_root = config.data_root.empty() ? default_data_root() : fs::path(config.data_root);
    const fs::path split_dir = resolve(config.splits, data_root);
    const fs::path image_root = resolve(config.image_root, data_root);
    const fs::path run_dir = config.out;
    if (fs::exists(run_dir / "checkpoint.cfck")) {
        throw ConfigError("run directory " + run_dir.string() + " already holds a finished run");
    }

    const auto manifest = load_manifest(split_dir);
    if (!config.task.empty() && parse_task(config.task) != manifest.task) {
        throw IncompatibilityError("config task " + config.task + " does not match split task " +
                                   to_string(manifest.task));
    }
    config.task = to_string(manifest.task);
    const auto& schema = TaskSchema::get(manifest.task);
    const auto train_records = read_split_tsv(split_dir / "train.tsv", manifest.task);
    const auto dev_records = read_split_tsv(split_dir / "dev.tsv", manifest.task);

    Rng root(config.seed);
    const bool uses_text = config.mode != Modality::image;
    Vocabulary vocab;
    std::optional<EmbeddingTable> table;
    std::optional<Checkpoint> warm_text, warm_image;
    if (!config.warm_text.empty()) {
        const fs::path path = resolve(config.warm_text, data_root);
        warm_text = Checkpoint::load(path);
        vocab = Vocabulary::load(path.parent_path() / "vocab.txt");
    } else if (uses_text) {
        std::vector<TokenList> docs;
        std::set<std::string> seen;
        for (const auto& r : train_records) {
            if (seen.insert(r.tweet_id).second) docs.push_back(preprocess_tweet(r.tweet_text));
        }
        std::optional<EmbeddingFile> pretrained;
        if (!config.embeddings.empty()) {
            const auto keep = Vocabulary::build(docs);
            pretrained = load_embeddings(resolve(config.embeddings, data_root), config.embed_dim, &keep);
        }
        Rng vocab_rng = root.fork(11);
        auto built = build_vocab(docs, pretrained ? &*pretrained : nullptr, config.embed_dim, vocab_rng);
        vocab = std::move(built.vocab);
        table = std::move(built.table);
        if (pretrained) log << "pretrained embeddings cover " << table->pretrained_hits << " of " << vocab.size() << " tokens\n";
    }
    if (!config.warm_image.empty()) warm_image = Checkpoint::load(resolve(config.warm_image, data_root));

    const auto model_cfg = config.model_config(manifest.task, vocab.size());
    Rng init = root.fork(10);
    auto model = build_model(model_cfg, init, WarmStart{warm_text ? &*warm_text : nullptr,
                                                        warm_image ? &*warm_image : nullptr, false, false});
    if (table && model.text) model.text->set_embeddings(*table);
    if (!config.pretrained_vgg.empty()) {
        if (!model.image) throw IncompatibilityError("pretrained VGG weights given for a text-only model");
        load_pretrained_vgg(*model.image, Checkpoint::load(resolve(config.pretrained_vgg, data_root)));
    }
    if (config.freeze_text) model.params().freeze_prefix("text/");
    if (config.freeze_image) model.params().freeze_prefix("image/");

    const bool text_only = config.mode == Modality::text;
    const auto train_set = make_samples(train_records, schema, uses_text ? &vocab : nullptr, config.max_len,
                                        image_root, text_only);
    const auto dev_set = make_samples(dev_records, schema, uses_text ? &vocab : nullptr, config.max_len, image_root,
                                      text_only);
    ImageLoader loader(DecoderRegistry::with_defaults(), config.image_size);

    fs::create_directories(run_dir);
    write_file(run_dir / "config.json", config.to_json());
    write_file(run_dir / "manifest.json", manifest.to_json());
    if (uses_text) vocab.save(run_dir / "vocab.txt");
    std::ofstream history(run_dir / "history.jsonl", std::ios::binary | std::ios::trunc);
    if (!history) throw InputError("cannot write " + (run_dir / "history.jsonl").string());

    log << "training " << to_string(config.mode) << " model on " << train_set.size() << " examples ("
        << model.params().trainable_count() << " trainable values)\n";
    TrainSummary summary;
    summary.run_dir = run_dir;
    summary.result = train(model, config.train_config(), train_set, dev_set, &loader, [&](const EpochRecord& e) {
        ojson line;
        line["epoch"] = e.epoch;
        line["train_loss"] = e.train_loss;
        line["dev_accuracy"] = e.dev_accuracy;
        line["lr"] = e.lr;
        history << line.dump() << '\n';
        history.flush();
        log << "epoch " << e.epoch << "  loss " << e.train_loss << "  dev_acc " << e.dev_accuracy << "  lr " << e.lr
            << '\n';
    });

    const auto preds = predict_all(model, train_set, &loader, config.batch_size);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i].label == train_set[i].label ? 1 : 0;
    summary.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());

    Checkpoint ckpt;
    model.params().save_to(ckpt);
    summary.result.optimizer.save_to(ckpt, model.params());
    ckpt.save(run_dir / "checkpoint.cfck");

    ojson s;
    s["task"] = config.task;
    s["mode"] = to_string(config.mode);
    s["epochs_run"] = summary.result.history.size();
    s["best_epoch"] = summary.result.best_epoch;
    s["best_dev_accuracy"] = summary.result.best_dev_accuracy;
    s["train_accuracy"] = summary.train_accuracy;
    s["stopped_early"] = summary.result.stopped_early;
    write_file(run_dir / "summary.json", s.dump(2) + "\n");
    log << "best dev accuracy " << summary.result.best_dev_accuracy << " at epoch " << summary.result.best_epoch
        << "; train accuracy " << summary.train_accuracy << '\n';
    return summary;
}

Evaluation cmd_evaluate(const EvaluateOptions& options, std::ostream& log)
{
    if (options.split != "train" && options.split != "dev" && options.split != "test") {
        throw ConfigError("split must be train, dev or test");
    }
    auto run = load_run(options.run_dir);
    const fs::path data_root = !options.data_root.empty()       ? fs::path(options.data_root)
                               : !run.config.data_root.empty() ? fs::path(run.config.data_root)
                                                               : default_data_root();
    const fs::path split_dir = options.splits.empty() ? resolve(run.config.splits, data_root)
                                                      : resolve(options.splits.string(), data_root);
    const auto split_manifest = load_manifest(split_dir);
    if (split_manifest.task != run.manifest.task) {
        throw IncompatibilityError("checkpoint was trained for the " + to_string(run.manifest.task) +
                                   " task but the split is for " + to_string(split_manifest.task));
    }
    const auto& schema = TaskSchema::get(run.manifest.task);
    const fs::path image_root = resolve(options.image_root.empty() ? run.config.image_root : options.image_root, data_root);
    const auto records = read_split_tsv(split_dir / (options.split + ".tsv"), split_manifest.task);
    const bool uses_text = run.config.mode != Modality::image;
    const auto samples = make_samples(records, schema, uses_text ? &run.vocab : nullptr, run.config.max_len, image_root,
                                      run.config.mode == Modality::text && options.split == "train");
    ImageLoader loader(DecoderRegistry::with_defaults(), run.config.image_size);
    auto eval = evaluate(*run.model, samples, &loader, run.config.batch_size);

    const fs::path out = options.out.empty() ? options.run_dir / ("eval_" + options.split) : options.out;
    fs::create_directories(out);
    write_file(out / "report.json", report_to_json(eval.report, schema.classes));
    write_file(out / "confusion_matrix.txt", render_confusion_matrix(eval.matrix, schema.classes));
    std::ostringstream preds;
    preds << "id\tgold\tpredicted";
    for (const auto& c : schema.classes) preds << "\tp_" << c;
    preds << '\n';
    for (std::size_t i = 0; i < samples.size(); ++i) {
        preds << samples[i].id << '\t' << schema.classes[static_cast<std::size_t>(samples[i].label)] << '\t'
              << schema.classes[static_cast<std::size_t>(eval.predictions[i].label)];
        for (const float p : eval.predictions[i].probabilities) preds << '\t' << p;
        preds << '\n';
    }
    write_file(out / "predictions.tsv", preds.str());

    char line[200];
    std::snprintf(line, sizeof line, "accuracy %.1f  weighted P/R/F1 %.1f/%.1f/%.1f  macro P/R/F1 %.1f/%.1f/%.1f\n",
                  as_percent(eval.report.accuracy), as_percent(eval.report.weighted.precision),
                  as_percent(eval.report.weighted.recall), as_percent(eval.report.weighted.f1),
                  as_percent(eval.report.macro.precision), as_percent(eval.report.macro.recall),
                  as_percent(eval.report.macro.f1));
    log << line << render_confusion_matrix(eval.matrix, schema.classes);
    return eval;
}

std::string cmd_predict(const PredictOptions& options)
{
    auto run = load_run(options.run_dir);
    const auto& schema = TaskSchema::get(run.manifest.task);
    Sample s;
    s.id = "input";
    if (run.config.mode != Modality::image) {
        s.token_ids = encode_tokens(preprocess_tweet(options.text), run.vocab, run.config.max_len);
    }
    if (run.config.mode != Modality::text) {
        if (options.image.empty()) throw InputError(to_string(run.config.mode) + " model requires an image");
        s.image_path = options.image;
    }
    ImageLoader loader(DecoderRegistry::with_defaults(), run.config.image_size);
    const auto p = predict(*run.model, s, &loader);
    ojson j;
    j["label"] = schema.classes[static_cast<std::size_t>(p.label)];
    j["label_id"] = p.label;
    ojson probs = ojson::object();
    for (std::size_t k = 0; k < schema.classes.size(); ++k) probs[schema.classes[k]] = p.probabilities[k];
    j["probabilities"] = probs;
    return j.dump();
}

bool cmd_gradcheck(std::ostream& log)
{
    const auto cases = run_gradcheck_suite();
    log << format_gradcheck_table(cases);
    const bool ok = all_passed(cases);
    log << (ok ? "all gradient checks passed\n" : "gradient check FAILED\n");
    return ok;
}

std::string cmd_report(const fs::path& matrix_file, std::ostream& log)
{
    std::vector<std::string> names;
    const auto cm = parse_confusion_matrix(read_file(matrix_file), &names);
    const auto report = classification_report(cm);
    char line[160];
    std::snprintf(line, sizeof line, "%-40s %9s %9s %9s %8s\n", "class", "precision", "recall", "f1", "support");
    log << line;
    for (std::size_t k = 0; k < names.size(); ++k) {
        const auto& m = report.per_class[k];
        std::snprintf(line, sizeof line, "%-40s %9.1f %9.1f %9.1f %8llu\n", names[k].c_str(), as_percent(m.precision),
                      as_percent(m.recall), as_percent(m.f1), static_cast<unsigned long long>(m.support));
        log << line;
    }
    for (const auto& [label, m] : {std::pair{"weighted avg", report.weighted}, std::pair{"macro avg", report.macro}}) {
        std::snprintf(line, sizeof line, "%-40s %9.1f %9.1f %9.1f %8llu\n", label, as_percent(m.precision),
                      as_percent(m.recall), as_percent(m.f1), static_cast<unsigned long long>(report.total));
        log << line;
    }
    std::snprintf(line, sizeof line, "accuracy %.1f (%llu/%llu)\n", as_percent(report.accuracy),
                  static_cast<unsigned long long>(cm.trace()), static_cast<unsigned long long>(cm.total()));
    log << line;
    return report_to_json(report, names);
}

int run_cli(int argc, char** argv)
{
    CLI::App app{"crisisfuse: multimodal crisis tweet classification"};
    app.require_subcommand(1);

    PrepareOptions prep;
    std::string prep_task = "informative";
    auto* prepare = app.add_subcommand("prepare", "filter, merge and split an annotation file");
    prepare->add_option("--annotations,-i", prep.annotations, "tab-separated annotations")->required();
    prepare->add_option("--out,-o", prep.out, "output directory for splits")->required();
    prepare->add_option("--task", prep_task, "informative or humanitarian");
    prepare->add_option("--seed", prep.seed, "split seed");
    prepare->add_option("--max-len", prep.max_len, "token length recorded in the manifest");

    std::optional<std::string> config_file;
    std::vector<std::string> sets;
    std::optional<std::string> mode, splits, out, embeddings, warm_text, warm_image;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<double> lr;
    auto* trainc = app.add_subcommand("train", "train a text, image or multimodal model");
    trainc->add_option("--config,-c", config_file, "JSON config file");
    trainc->add_option("--set", sets, "override any config key: key=value");
    trainc->add_option("--mode", mode, "text, image or multimodal");
    trainc->add_option("--splits", splits, "prepared split directory");
    trainc->add_option("--out,-o", out, "run directory");
    trainc->add_option("--seed", seed);
    trainc->add_option("--epochs", epochs);
    trainc->add_option("--lr", lr);
    trainc->add_option("--embeddings", embeddings, "word vectors, text format");
    trainc->add_option("--warm-text", warm_text, "checkpoint of a text run");
    trainc->add_option("--warm-image", warm_image, "checkpoint of an image run");

    EvaluateOptions eval_opts;
    auto* evalc = app.add_subcommand("evaluate", "score a trained run on a split");
    evalc->add_option("--run,-r", eval_opts.run_dir, "run directory")->required();
    evalc->add_option("--splits", eval_opts.splits, "split directory (defaults to the run's)");
    evalc->add_option("--split", eval_opts.split, "train, dev or test");
    evalc->add_option("--out,-o", eval_opts.out, "report directory");
    evalc->add_option("--image-root", eval_opts.image_root);

    PredictOptions pred_opts;
    auto* predictc = app.add_subcommand("predict", "classify one tweet and/or image");
    predictc->add_option("--run,-r", pred_opts.run_dir, "run directory")->required();
    predictc->add_option("--text", pred_opts.text);
    predictc->add_option("--image", pred_opts.image);

    auto* gradc = app.add_subcommand("gradcheck", "finite-difference check of every op and model graph");

    fs::path matrix_file;
    auto* reportc = app.add_subcommand("report", "metrics from a rendered confusion matrix");
    reportc->add_option("matrix", matrix_file, "confusion matrix text file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*prepare) {
            prep.task = parse_task(prep_task);
            cmd_prepare(prep, std::cout);
        } else if (*trainc) {
            std::vector<std::string> all = sets;
            const auto flag = [&](const char* key, const auto& value) {
                if (!value) return;
                ojson v = *value;
                all.push_back(std::string(key) + "=" + v.dump());
            };
            flag("mode", mode);
            flag("splits", splits);
            flag("out", out);
            flag("seed", seed);
            flag("max_epochs", epochs);
            flag("lr", lr);
            flag("embeddings", embeddings);
            flag("warm_text", warm_text);
            flag("warm_image", warm_image);
            cmd_train(resolve_config(config_file, all), std::cout);
        } else if (*evalc) {
            cmd_evaluate(eval_opts, std::cout);
        } else if (*predictc) {
            std::cout << cmd_predict(pred_opts) << '\n';
        } else if (*gradc) {
            return cmd_gradcheck(std::cout) ? 0 : 1;
        } else if (*reportc) {
            std::cout << cmd_report(matrix_file, std::cout);
        }
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const LabelError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const DuplicateError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const IncompatibilityError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace crisisfuse
