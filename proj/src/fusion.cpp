#include "crisisfuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace crisisfuse {

std::string to_string(Modality m)
{
    switch (m) {
    case Modality::text: return "text";
    case Modality::image: return "image";
    case Modality::multimodal: return "multimodal";
    }
    return "unknown";
}

Modality parse_modality(std::string_view name)
{
    if (name == "text") return Modality::text;
    if (name == "image") return Modality::image;
    if (name == "multimodal") return Modality::multimodal;
    throw ConfigError("unknown mode \"" + std::string(name) + "\" (expected text, image or multimodal)");
}

template <typename T>
Classifier<T>::Classifier(const ModelConfig& config, Rng& rng) : config_(config)
{
    if (config_.num_classes < 2) throw ConfigError("classifier needs at least 2 classes");
    if (config_.uses_text()) {
        auto text_cfg = config_.text;
        text_cfg.num_classes = config_.num_classes;
        text.emplace(text_cfg, config_.max_len, rng);
        text->collect(params_);
    }
    if (config_.uses_image()) {
        auto image_cfg = config_.image;
        image_cfg.num_classes = config_.num_classes;
        image.emplace(image_cfg, rng);
        image->collect(params_);
    }
    if (config_.modality == Modality::multimodal) {
        const std::size_t proj = config_.fusion.projection;
        const std::size_t text_in = text->feature_width();
        const std::size_t image_in = image->feature_width();
        text_proj_weight = he_normal<T>({text_in, proj}, text_in, rng);
        text_proj_bias = Tensor<T>(Shape{proj}, T(0));
        image_proj_weight = he_normal<T>({image_in, proj}, image_in, rng);
        image_proj_bias = Tensor<T>(Shape{proj}, T(0));
        hidden_weight = he_normal<T>({2 * proj, config_.fusion.hidden}, 2 * proj, rng);
        hidden_bias = Tensor<T>(Shape{config_.fusion.hidden}, T(0));
        head_weight = he_normal<T>({config_.fusion.hidden, config_.num_classes}, config_.fusion.hidden, rng);
        head_bias = Tensor<T>(Shape{config_.num_classes}, T(0));
        params_.add("fusion/text_proj/weight", text_proj_weight);
        params_.add("fusion/text_proj/bias", text_proj_bias);
        params_.add("fusion/image_proj/weight", image_proj_weight);
        params_.add("fusion/image_proj/bias", image_proj_bias);
        params_.add("fusion/hidden/weight", hidden_weight);
        params_.add("fusion/hidden/bias", hidden_bias);
        params_.add("fusion/head/weight", head_weight);
        params_.add("fusion/head/bias", head_bias);
    }
}

template <typename T>
Tensor<T> Classifier<T>::logits(const TokenBatch* tokens, const Tensor<T>* images, bool training, Rng& rng)
{
    if (config_.uses_text() && tokens == nullptr) {
        throw InputError(to_string(config_.modality) + " model requires text input");
    }
    if (config_.uses_image() && images == nullptr) {
        throw InputError(to_string(config_.modality) + " model requires image input");
    }
    switch (config_.modality) {
    case Modality::text: return text->forward(*tokens, TextOutput::logits, training, rng);
    case Modality::image: return image->forward(*images, ImageOutput::logits, training, rng);
    case Modality::multimodal: break;
    }
    if (tokens->batch != images->dim(0)) {
        throw DimensionError("multimodal batch mismatch: " + std::to_string(tokens->batch) + " texts vs " +
                             std::to_string(images->dim(0)) + " images");
    }
    const auto text_features = text->forward(*tokens, TextOutput::features, training, rng);
    const auto image_features = image->forward(*images, ImageOutput::fc2, training, rng);
    const auto text_side = relu(dense(text_features, text_proj_weight, text_proj_bias));
    const auto image_side = relu(dense(image_features, image_proj_weight, image_proj_bias));
    const auto joint = relu(dense(concat<T>({text_side, image_side}), hidden_weight, hidden_bias));
    return dense(joint, head_weight, head_bias);
}

Classifier<float> build_model(const ModelConfig& config, Rng& rng, const WarmStart& warm)
{
    Classifier<float> model(config, rng);
    if (warm.text != nullptr) {
        if (!config.uses_text()) throw IncompatibilityError("text warm start given for an image-only model");
        // The unimodal head is K-way and stays valid; feature widths must match.
        model.params().load_from(*warm.text, "text/", true);
    }
    if (warm.image != nullptr) {
        if (!config.uses_image()) throw IncompatibilityError("image warm start given for a text-only model");
        model.params().load_from(*warm.image, "image/", true);
    }
    if (warm.freeze_text) model.params().freeze_prefix("text/");
    if (warm.freeze_image) model.params().freeze_prefix("image/");
    return model;
}

ImageLoader::ImageLoader(DecoderRegistry registry, std::size_t size, std::size_t capacity)
    : registry_(std::move(registry)), size_(size), capacity_(capacity)
{
}

std::shared_ptr<const std::vector<float>> ImageLoader::load(const std::string& path)
{
    const auto it = cache_.find(path);
    if (it != cache_.end()) return it->second;
    auto pixels = std::make_shared<const std::vector<float>>(preprocess_image(registry_.decode(path), size_));
    if (cache_.size() < capacity_) cache_.emplace(path, pixels);
    return pixels;
}

template <typename T>
Batch<T> make_batch(const ModelConfig& config, const std::vector<Sample>& samples,
                    std::span<const std::size_t> indices, ImageLoader* loader)
{
    Batch<T> batch;
    const std::size_t n = indices.size();
    batch.labels.reserve(n);
    for (const auto i : indices) batch.labels.push_back(samples.at(i).label);
    if (config.uses_text()) {
        TokenBatch tokens;
        tokens.batch = n;
        tokens.length = config.max_len;
        tokens.ids.reserve(n * config.max_len);
        for (const auto i : indices) {
            const auto& ids = samples[i].token_ids;
            if (ids.size() != config.max_len) {
                throw InputError("sample " + samples[i].id + " has " + std::to_string(ids.size()) +
                                 " token ids, model expects " + std::to_string(config.max_len));
            }
            tokens.ids.insert(tokens.ids.end(), ids.begin(), ids.end());
        }
        batch.tokens = std::move(tokens);
    }
    if (config.uses_image()) {
        const std::size_t size = config.image.image_size;
        const std::size_t per_image = 3 * size * size;
        std::vector<T> pixels;
        pixels.reserve(n * per_image);
        for (const auto i : indices) {
            const auto& s = samples[i];
            std::shared_ptr<const std::vector<float>> img = s.image;
            if (!img) {
                if (s.image_path.empty()) throw InputError("sample " + s.id + " has no image");
                if (loader == nullptr) throw InputError("sample " + s.id + " needs an image loader");
                img = loader->load(s.image_path);
            }
            if (img->size() != per_image) {
                throw InputError("sample " + s.id + " image has " + std::to_string(img->size()) + " values, expected " +
                                 std::to_string(per_image));
            }
            pixels.insert(pixels.end(), img->begin(), img->end());
        }
        batch.images = Tensor<T>(Shape{n, 3, size, size}, std::move(pixels));
    }
    return batch;
}

TrainConfig TrainConfig::defaults_for(Modality modality)
{
    TrainConfig cfg;
    cfg.modality = modality;
    cfg.batch_size = 32;
    switch (modality) {
    case Modality::text:
        cfg.lr = 0.01;
        cfg.max_epochs = 50;
        cfg.patience = 10;
        break;
    case Modality::image:
        cfg.lr = 1e-6;
        cfg.max_epochs = 1000;
        cfg.patience = 100;
        cfg.plateau_patience = 100;
        cfg.plateau_factor = 0.1;
        cfg.stop_counts_at_lr_floor = true;
        break;
    case Modality::multimodal:
        cfg.lr = 1e-4;
        cfg.max_epochs = 1000;
        cfg.patience = 100;
        cfg.plateau_patience = 100;
        cfg.plateau_factor = 0.1;
        cfg.stop_counts_at_lr_floor = true;
        break;
    }
    return cfg;
}

namespace {

std::vector<std::vector<std::size_t>> minibatches(std::vector<std::size_t> order, std::size_t batch_size)
{
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    // Batch norm cannot train on a single example; fold a lone tail into the previous batch.
    if (out.size() > 1 && out.back().size() == 1) {
        out[out.size() - 2].push_back(out.back().front());
        out.pop_back();
    }
    return out;
}

double accuracy_of(const std::vector<Prediction>& preds, const std::vector<Sample>& samples)
{
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i].label == samples[i].label ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace

TrainResult train(Classifier<float>& model, const TrainConfig& config, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& dev_set, ImageLoader* loader,
                  const std::function<void(const EpochRecord&)>& on_epoch)
{
    if (train_set.empty()) throw ConfigError("training split is empty");
    if (dev_set.empty()) throw ConfigError("development split is empty");
    if (config.batch_size == 0) throw ConfigError("batch size must be positive");
    if (config.max_epochs == 0) throw ConfigError("max_epochs must be positive");
    if (config.modality != model.config().modality) {
        throw ConfigError("training mode " + to_string(config.modality) + " does not match model mode " +
                          to_string(model.config().modality));
    }
    for (const auto& s : train_set) {
        if (s.label < 0 || static_cast<std::size_t>(s.label) >= model.config().num_classes) {
            throw LabelError("sample " + s.id + " has label " + std::to_string(s.label) + " outside the " +
                             std::to_string(model.config().num_classes) + "-way head");
        }
    }

    MonitorConfig monitor_cfg;
    monitor_cfg.initial_lr = config.lr;
    monitor_cfg.patience = config.patience;
    monitor_cfg.plateau_patience = config.plateau_patience;
    monitor_cfg.plateau_factor = config.plateau_factor;
    monitor_cfg.min_lr = config.min_lr;
    monitor_cfg.stop_counts_at_lr_floor = config.stop_counts_at_lr_floor;
    TrainingMonitor monitor(monitor_cfg);

    TrainResult result;
    AdamState adam(AdamConfig{config.lr});
    Rng root(config.seed);
    Rng shuffle_rng = root.fork(1);
    Rng dropout_rng = root.fork(2);

    auto& params = model.params();
    std::vector<std::vector<float>> best_values = params.snapshot();
    AdamState best_adam = adam;
    // Kept weights: best dev accuracy, ties broken by lower training loss.
    std::size_t kept_epoch = 0;
    double kept_acc = -1.0, kept_loss = 0.0;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order.begin(), order.end());
        const double epoch_lr = monitor.lr();
        adam.config.lr = epoch_lr;
        double loss_sum = 0.0;
        std::size_t seen = 0;
        std::size_t batch_no = 0;
        for (const auto& idx : minibatches(order, config.batch_size)) {
            ++batch_no;
            auto batch = make_batch<float>(model.config(), train_set, idx, loader);
            params.zero_grad();
            try {
                const auto logits = model.logits(batch.tokens ? &*batch.tokens : nullptr,
                                                 batch.images ? &*batch.images : nullptr, true, dropout_rng);
                const auto ce = softmax_cross_entropy(logits, batch.labels);
                if (!std::isfinite(ce.loss.item())) throw NumericError("non-finite loss");
                backward(ce.loss);
                loss_sum += static_cast<double>(ce.loss.item()) * static_cast<double>(idx.size());
                seen += idx.size();
            } catch (const NumericError& e) {
                throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(batch_no) + ": " + e.what());
            }
            adam_step(params, adam);
        }

        const double dev_acc = accuracy_of(predict_all(model, dev_set, loader, config.batch_size), dev_set);
        EpochRecord rec{epoch, loss_sum / static_cast<double>(seen), dev_acc, epoch_lr};
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);

        monitor.record(dev_acc);
        if (dev_acc > kept_acc || (dev_acc == kept_acc && rec.train_loss < kept_loss)) {
            best_values = params.snapshot();
            best_adam = adam;
            kept_epoch = epoch;
            kept_acc = dev_acc;
            kept_loss = rec.train_loss;
        }
        if (config.plateau_patience) monitor.plateau_lr();
        if (monitor.should_stop()) {
            result.stopped_early = true;
            break;
        }
        if (config.target_dev_accuracy && dev_acc >= *config.target_dev_accuracy) break;
    }

    params.restore(best_values);
    params.zero_grad();
    result.best_epoch = kept_epoch;
    result.best_dev_accuracy = kept_acc;
    result.optimizer = std::move(best_adam);
    return result;
}

int argmax(std::span<const float> probabilities)
{
    int best = 0;
    for (std::size_t k = 1; k < probabilities.size(); ++k) {
        if (probabilities[k] > probabilities[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
    }
    return best;
}

std::vector<Prediction> predict_all(Classifier<float>& model, const std::vector<Sample>& samples, ImageLoader* loader,
                                    std::size_t batch_size)
{
    std::vector<Prediction> out;
    out.reserve(samples.size());
    Rng unused(0);
    const std::size_t k = model.config().num_classes;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        std::vector<std::size_t> idx(std::min(batch_size, samples.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        auto batch = make_batch<float>(model.config(), samples, idx, loader);
        const auto logits = model.logits(batch.tokens ? &*batch.tokens : nullptr,
                                         batch.images ? &*batch.images : nullptr, false, unused);
        const auto probs = softmax_rows(logits);
        for (std::size_t n = 0; n < idx.size(); ++n) {
            Prediction p;
            p.probabilities.assign(probs.begin() + static_cast<std::ptrdiff_t>(n * k),
                                   probs.begin() + static_cast<std::ptrdiff_t>((n + 1) * k));
            p.label = argmax(p.probabilities);
            out.push_back(std::move(p));
        }
    }
    return out;
}

Prediction predict(Classifier<float>& model, const Sample& sample, ImageLoader* loader)
{
    return predict_all(model, std::vector<Sample>{sample}, loader, 1).front();
}

template class Classifier<float>;
template class Classifier<double>;
template Batch<float> make_batch<float>(const ModelConfig&, const std::vector<Sample>&, std::span<const std::size_t>,
                                        ImageLoader*);
template Batch<double> make_batch<double>(const ModelConfig&, const std::vector<Sample>&,
                                          std::span<const std::size_t>, ImageLoader*);

}  // namespace crisisfuse
