#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "crisisfuse/dataset.hpp"
#include "crisisfuse/evaluation.hpp"
#include "crisisfuse/fusion.hpp"

namespace crisisfuse {

/// Everything a training run needs. Serialized verbatim into the run
/// directory as config.json.
struct ExperimentConfig {
    std::string task;  // taken from the split manifest when empty
    Modality mode = Modality::text;
    std::string splits;     // directory holding train/dev/test.tsv and manifest.json
    std::string data_root;  // base for relative paths; $CRISISFUSE_DATA_ROOT by default
    std::string image_root; // base for relative image paths; data_root when empty
    std::string out;
    std::uint64_t seed = 42;

    double lr = 0.01;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 50;
    std::size_t patience = 10;
    std::optional<std::size_t> plateau_patience;
    double plateau_factor = 0.1;
    double min_lr = 1e-9;
    bool stop_counts_at_lr_floor = false;
    std::optional<double> target_dev_accuracy;

    std::size_t max_len = 25;
    std::string embeddings;
    std::size_t embed_dim = 300;
    std::vector<std::size_t> filters{100, 150, 200};
    std::vector<std::size_t> windows{2, 3, 4};
    std::size_t text_hidden = 1000;
    std::size_t text_hidden2 = 500;
    double text_dropout = 0.02;
    bool train_embeddings = true;

    double width_scale = 1.0;
    std::size_t image_size = kImageSize;
    double fc_dropout = 0.5;

    std::size_t fusion_projection = 1000;
    std::size_t fusion_hidden = 512;

    std::string warm_text;       // checkpoint of a text run (its vocab.txt is reused)
    std::string warm_image;      // checkpoint of an image run
    std::string pretrained_vgg;  // converted ImageNet weights, full width only
    bool freeze_text = false;
    bool freeze_image = false;

    /// Mode-specific training defaults.
    static ExperimentConfig defaults_for(Modality mode);

    std::string to_json() const;
    /// Overlays the keys present in `json` onto this config; unknown keys are an error.
    void apply_json(std::string_view json);
    /// Overlays one "key=value" assignment; value is read as JSON, falling back to a string.
    void apply_assignment(std::string_view assignment);

    TrainConfig train_config() const;
    ModelConfig model_config(Task task, std::size_t vocab_size) const;
};

/// Builds a config with precedence flag > file > default. The mode is
/// resolved first because defaults depend on it.
ExperimentConfig resolve_config(const std::optional<std::string>& config_file,
                                const std::vector<std::string>& assignments);

/// $CRISISFUSE_DATA_ROOT, or "." when unset.
std::filesystem::path default_data_root();

struct PrepareOptions {
    std::filesystem::path annotations;
    std::filesystem::path out;
    Task task = Task::informative;
    std::uint64_t seed = 42;
    std::size_t max_len = 25;
};

/// Curation end to end. Nothing is written unless every row parses.
DatasetSplits cmd_prepare(const PrepareOptions& options, std::ostream& log);

struct TrainSummary {
    TrainResult result;
    double train_accuracy = 0.0;
    std::filesystem::path run_dir;
};

/// Trains per config and writes config.json, manifest.json, vocab.txt,
/// checkpoint.cfck, history.jsonl and summary.json into config.out.
TrainSummary cmd_train(const ExperimentConfig& config, std::ostream& log);

struct EvaluateOptions {
    std::filesystem::path run_dir;
    std::filesystem::path splits;
    std::string split = "test";
    std::filesystem::path out;
    std::string data_root;
    std::string image_root;
};

/// Writes report.json, confusion_matrix.txt and predictions.tsv.
Evaluation cmd_evaluate(const EvaluateOptions& options, std::ostream& log);

struct PredictOptions {
    std::filesystem::path run_dir;
    std::string text;
    std::string image;
};

/// Returns the prediction as a JSON line.
std::string cmd_predict(const PredictOptions& options);

/// Prints the gradient-check table; true when every check passes.
bool cmd_gradcheck(std::ostream& log);

/// Metrics for a rendered confusion matrix, as text and JSON.
std::string cmd_report(const std::filesystem::path& matrix_file, std::ostream& log);

/// Full command-line entry point. Exit codes: 0 success, 1 runtime failure,
/// 2 usage or input error.
int run_cli(int argc, char** argv);

}  // namespace crisisfuse
