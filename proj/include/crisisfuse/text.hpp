#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "crisisfuse/ops.hpp"
#include "crisisfuse/params.hpp"
#include "crisisfuse/rng.hpp"

namespace crisisfuse {

using TokenList = std::vector<std::string>;

/// Normalizes a tweet into tokens. Rules, in order: lowercase; drop URLs
/// (scheme://..., www...., t.co/...); drop <placeholder> tags; strip non-ASCII
/// bytes; remove '#' keeping the word; punctuation to spaces; split on
/// whitespace; drop all-digit tokens and stopwords.
TokenList preprocess_tweet(std::string_view text);

const std::unordered_set<std::string>& stopwords();
/// Version tag of the bundled stopword list.
std::string_view stopword_list_version();

class Vocabulary {
public:
    static constexpr std::int32_t kPadding = 0;
    static constexpr std::int32_t kUnknown = 1;
    static constexpr std::string_view kPaddingToken = "<pad>";
    static constexpr std::string_view kUnknownToken = "<unk>";

    Vocabulary();

    /// Tokens ordered by descending frequency, ties lexicographic.
    static Vocabulary build(const std::vector<TokenList>& documents);

    std::int32_t index(std::string_view token) const;
    const std::string& token(std::int32_t index) const { return tokens_.at(static_cast<std::size_t>(index)); }
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    /// One token per line; line number is the index.
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> lookup_;
};

/// Pretrained vectors keyed by token. Text format: first line "<count> <dim>",
/// then one token followed by dim decimals per line.
struct EmbeddingFile {
    std::size_t dim = 0;
    std::unordered_map<std::string, std::vector<float>> vectors;
};

/// Reads an embedding file. When `keep` is given, only those tokens are kept.
EmbeddingFile load_embeddings(const std::filesystem::path& path, std::size_t expected_dim,
                              const Vocabulary* keep = nullptr);
void save_embeddings(const std::filesystem::path& path, const EmbeddingFile& file);

struct EmbeddingTable {
    std::size_t dim = 300;
    std::size_t rows = 0;
    std::vector<float> values;  // [rows, dim]
    bool trainable = true;
    std::size_t pretrained_hits = 0;

    std::span<const float> row(std::int32_t index) const
    {
        return {values.data() + static_cast<std::size_t>(index) * dim, dim};
    }
};

struct VocabBuild {
    Vocabulary vocab;
    EmbeddingTable table;
};

/// Vocabulary over training documents plus its embedding matrix: pretrained
/// rows where the file has the token, uniform(-0.25, 0.25) otherwise, zeros
/// for padding.
VocabBuild build_vocab(const std::vector<TokenList>& train_documents, const EmbeddingFile* pretrained,
                       std::size_t dim, Rng& rng);

/// Token ids [batch, length], row-major.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t length = 0;
    std::vector<std::int32_t> ids;
};

std::vector<std::int32_t> encode_tokens(const TokenList& tokens, const Vocabulary& vocab, std::size_t max_len);

/// Right-pads with the padding index, truncates at the tail, maps unseen
/// tokens to the unknown index.
TokenBatch encode_batch(const std::vector<TokenList>& documents, const Vocabulary& vocab, std::size_t max_len);

struct TextCnnConfig {
    std::size_t vocab_size = 2;
    std::size_t embed_dim = 300;
    std::vector<std::size_t> filters{100, 150, 200};
    std::vector<std::size_t> windows{2, 3, 4};
    std::size_t hidden = 1000;  // width of the feature layer handed to fusion
    std::size_t hidden2 = 500;
    std::size_t num_classes = 2;
    double dropout = 0.02;
    bool train_embeddings = true;

    /// Shortest sequence for which every branch yields at least one pooled window.
    std::size_t min_length() const;
    std::size_t pooled_width(std::size_t length) const;
};

enum class TextOutput { features, logits };

/// Convolutional sentence encoder: embedding -> parallel conv1d+ReLU branches
/// -> max-pool (pool length = window) -> concat -> dense+BN+ReLU (features)
/// -> dropout -> dense+ReLU -> dropout -> dense (logits).
template <typename T>
class TextCnn {
public:
    TextCnn(const TextCnnConfig& config, std::size_t max_len, Rng& rng);

    /// Overwrites the embedding matrix (rows/dim must match the config).
    void set_embeddings(const EmbeddingTable& table);

    Tensor<T> forward(const TokenBatch& tokens, TextOutput mode, bool training, Rng& rng);

    void collect(ParameterSet<T>& set, const std::string& prefix = "text/");

    const TextCnnConfig& config() const { return config_; }
    std::size_t max_len() const { return max_len_; }
    std::size_t feature_width() const { return config_.hidden; }

    Tensor<T> embedding;
    std::vector<Tensor<T>> conv_kernels;
    std::vector<Tensor<T>> conv_biases;
    Tensor<T> fc1_weight, fc1_bias;
    Tensor<T> bn_gamma, bn_beta;
    BatchNormState<T> bn_state;
    Tensor<T> fc2_weight, fc2_bias;
    Tensor<T> head_weight, head_bias;

private:
    TextCnnConfig config_;
    std::size_t max_len_;
};

/// He-normal initialised [fan_in, fan_out] weight.
template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng);

extern template class TextCnn<float>;
extern template class TextCnn<double>;

}  // namespace crisisfuse
