#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "crisisfuse/image.hpp"
#include "crisisfuse/optimizer.hpp"
#include "crisisfuse/text.hpp"

namespace crisisfuse {

enum class Modality { text, image, multimodal };

std::string to_string(Modality m);
Modality parse_modality(std::string_view name);

struct FusionConfig {
    std::size_t projection = 1000;  // per-modality width before concatenation
    std::size_t hidden = 512;       // post-concat hidden layer
};

struct ModelConfig {
    Modality modality = Modality::multimodal;
    std::size_t num_classes = 2;
    std::size_t max_len = 25;
    TextCnnConfig text;
    VggConfig image;
    FusionConfig fusion;

    bool uses_text() const { return modality != Modality::image; }
    bool uses_image() const { return modality != Modality::text; }
};

/// Text-only, image-only, or feature-level fusion classifier. Unimodal modes
/// use the branch's own head; multimodal projects both branch features to
/// `projection` units, concatenates, and applies one hidden layer and a head.
template <typename T>
class Classifier {
public:
    Classifier(const ModelConfig& config, Rng& rng);
    Classifier(const Classifier&) = delete;
    Classifier& operator=(const Classifier&) = delete;
    Classifier(Classifier&&) = default;
    Classifier& operator=(Classifier&&) = default;

    /// tokens/images may be null for the modality the mode does not use.
    Tensor<T> logits(const TokenBatch* tokens, const Tensor<T>* images, bool training, Rng& rng);

    const ModelConfig& config() const { return config_; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }

    std::optional<TextCnn<T>> text;
    std::optional<Vgg16<T>> image;
    Tensor<T> text_proj_weight, text_proj_bias;
    Tensor<T> image_proj_weight, image_proj_bias;
    Tensor<T> hidden_weight, hidden_bias;
    Tensor<T> head_weight, head_bias;

private:
    ModelConfig config_;
    ParameterSet<T> params_;
};

struct WarmStart {
    const Checkpoint* text = nullptr;   // reuses "text/..." tensors
    const Checkpoint* image = nullptr;  // reuses "image/..." tensors (head excluded)
    bool freeze_text = false;
    bool freeze_image = false;
};

/// Builds a classifier and applies warm starts / freezing.
Classifier<float> build_model(const ModelConfig& config, Rng& rng, const WarmStart& warm = {});

/// Preprocessed images keyed by path; keeps at most `capacity` entries.
class ImageLoader {
public:
    explicit ImageLoader(DecoderRegistry registry = DecoderRegistry::with_defaults(), std::size_t size = kImageSize,
                         std::size_t capacity = 4096);

    std::shared_ptr<const std::vector<float>> load(const std::string& path);
    std::size_t size() const { return size_; }

private:
    DecoderRegistry registry_;
    std::size_t size_;
    std::size_t capacity_;
    std::map<std::string, std::shared_ptr<const std::vector<float>>> cache_;
};

/// One training/evaluation example. Unused modalities may stay empty.
struct Sample {
    std::string id;
    std::vector<std::int32_t> token_ids;            // length == max_len
    std::shared_ptr<const std::vector<float>> image;  // [3,S,S] when already preprocessed
    std::string image_path;                         // resolved through ImageLoader otherwise
    int label = 0;
};

template <typename T>
struct Batch {
    std::optional<TokenBatch> tokens;
    std::optional<Tensor<T>> images;
    std::vector<int> labels;
};

/// Gathers the requested samples, checking that every modality the model needs
/// is present.
template <typename T>
Batch<T> make_batch(const ModelConfig& config, const std::vector<Sample>& samples,
                    std::span<const std::size_t> indices, ImageLoader* loader);

struct TrainConfig {
    Modality modality = Modality::text;
    double lr = 0.01;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 50;
    std::size_t patience = 10;
    std::optional<std::size_t> plateau_patience;
    double plateau_factor = 0.1;
    double min_lr = 1e-9;
    bool stop_counts_at_lr_floor = false;
    std::uint64_t seed = 42;
    /// Stop as soon as dev accuracy reaches this value (off when empty).
    std::optional<double> target_dev_accuracy;

    static TrainConfig defaults_for(Modality modality);
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double dev_accuracy = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_dev_accuracy = 0.0;
    bool stopped_early = false;
    AdamState optimizer;
};

/// Epoch loop: seeded shuffle, minibatch Adam steps, dev evaluation, plateau
/// LR reduction and early stopping. The model is left holding the parameters
/// of the best dev epoch; among epochs tied on dev accuracy, the one with the
/// lowest training loss.
TrainResult train(Classifier<float>& model, const TrainConfig& config, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& dev_set, ImageLoader* loader,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

struct Prediction {
    int label = 0;
    std::vector<float> probabilities;
};

/// Inference-mode predictions for every sample, batched.
std::vector<Prediction> predict_all(Classifier<float>& model, const std::vector<Sample>& samples, ImageLoader* loader,
                                    std::size_t batch_size = 32);

Prediction predict(Classifier<float>& model, const Sample& sample, ImageLoader* loader);

/// Index of the largest probability; ties resolve to the lowest index.
int argmax(std::span<const float> probabilities);

extern template class Classifier<float>;
extern template class Classifier<double>;

}  // namespace crisisfuse
