#include "crisisfuse/text.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace crisisfuse {

// Generated at configure time from assets/stopwords_en_v1.txt.
extern const char* const kStopwordAsset;

namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool scheme_char(char c) { return is_alnum(c) || c == '+' || c == '.' || c == '-'; }

std::size_t run_end(const std::string& s, std::size_t pos)
{
    while (pos < s.size() && !is_space(s[pos])) ++pos;
    return pos;
}

bool boundary_before(const std::string& s, std::size_t pos) { return pos == 0 || !is_alnum(s[pos - 1]); }

/// Blanks every URL: "<scheme>://...", "www.<...>" and "t.co/<...>", each up to
/// the next whitespace.
std::string remove_urls(std::string s)
{
    std::size_t pos = 0;
    while (pos < s.size()) {
        std::size_t start = std::string::npos;
        if (s.compare(pos, 3, "://") == 0) {
            std::size_t b = pos;
            while (b > 0 && scheme_char(s[b - 1])) --b;
            if (b < pos) start = b;
        } else if (boundary_before(s, pos) && (s.compare(pos, 4, "www.") == 0 || s.compare(pos, 5, "t.co/") == 0)) {
            start = pos;
        }
        if (start == std::string::npos) {
            ++pos;
            continue;
        }
        const std::size_t end = run_end(s, pos);
        std::fill(s.begin() + static_cast<std::ptrdiff_t>(start), s.begin() + static_cast<std::ptrdiff_t>(end), ' ');
        pos = end;
    }
    return s;
}

std::string remove_placeholders(std::string s)
{
    std::size_t pos = 0;
    while ((pos = s.find('<', pos)) != std::string::npos) {
        std::size_t end = pos + 1;
        while (end < s.size() && s[end] != '<' && s[end] != '>' && !is_space(s[end])) ++end;
        if (end < s.size() && s[end] == '>' && end > pos + 1) {
            std::fill(s.begin() + static_cast<std::ptrdiff_t>(pos), s.begin() + static_cast<std::ptrdiff_t>(end + 1),
                      ' ');
            pos = end + 1;
        } else {
            pos = end;
        }
    }
    return s;
}

bool all_digits(const std::string& token)
{
    return std::all_of(token.begin(), token.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

}  // namespace

const std::unordered_set<std::string>& stopwords()
{
    static const std::unordered_set<std::string> words = [] {
        std::unordered_set<std::string> out;
        std::istringstream in(kStopwordAsset);
        std::string line;
        while (std::getline(in, line)) {
            while (!line.empty() && (line.back() == '\r' || is_space(line.back()))) line.pop_back();
            if (line.empty() || line.front() == '#') continue;
            out.insert(line);
        }
        return out;
    }();
    return words;
}

std::string_view stopword_list_version() { return "en-v1"; }

TokenList preprocess_tweet(std::string_view text)
{
    std::string s(text);
    for (auto& c : s) {
        if (static_cast<unsigned char>(c) < 0x80) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    s = remove_urls(std::move(s));
    s = remove_placeholders(std::move(s));
    std::erase_if(s, [](char c) { return static_cast<unsigned char>(c) >= 0x80 || c == '#'; });
    for (auto& c : s) {
        if (std::ispunct(static_cast<unsigned char>(c)) || std::iscntrl(static_cast<unsigned char>(c))) c = ' ';
    }

    const auto& stop = stopwords();
    TokenList tokens;
    std::istringstream in(s);
    std::string token;
    while (in >> token) {
        if (all_digits(token) || stop.contains(token)) continue;
        tokens.push_back(token);
    }
    return tokens;
}

Vocabulary::Vocabulary()
{
    tokens_ = {std::string(kPaddingToken), std::string(kUnknownToken)};
    lookup_.emplace(tokens_[0], kPadding);
    lookup_.emplace(tokens_[1], kUnknown);
}

Vocabulary Vocabulary::build(const std::vector<TokenList>& documents)
{
    std::map<std::string, std::size_t> counts;
    for (const auto& doc : documents) {
        for (const auto& t : doc) ++counts[t];
    }
    std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary vocab;
    for (const auto& [token, count] : ordered) {
        if (vocab.lookup_.contains(token)) continue;
        vocab.lookup_.emplace(token, static_cast<std::int32_t>(vocab.tokens_.size()));
        vocab.tokens_.push_back(token);
    }
    return vocab;
}

std::int32_t Vocabulary::index(std::string_view token) const
{
    const auto it = lookup_.find(std::string(token));
    return it == lookup_.end() ? kUnknown : it->second;
}

void Vocabulary::save(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot write vocabulary " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw InputError("cannot open vocabulary " + path.string());
    Vocabulary vocab;
    vocab.tokens_.clear();
    vocab.lookup_.clear();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": empty token");
        if (!vocab.lookup_.emplace(line, static_cast<std::int32_t>(vocab.tokens_.size())).second) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": duplicate token " + line);
        }
        vocab.tokens_.push_back(line);
    }
    if (vocab.tokens_.size() < 2 || vocab.tokens_[0] != kPaddingToken || vocab.tokens_[1] != kUnknownToken) {
        throw FormatError(path.string() + ": vocabulary must start with <pad> and <unk>");
    }
    return vocab;
}

EmbeddingFile load_embeddings(const std::filesystem::path& path, std::size_t expected_dim, const Vocabulary* keep)
{
    std::ifstream in(path);
    if (!in) throw InputError("cannot open embedding file " + path.string());
    auto fail = [&](std::size_t line_no, const std::string& what) {
        return FormatError(path.string() + ":" + std::to_string(line_no) + ": " + what);
    };

    std::string line;
    if (!std::getline(in, line)) throw fail(1, "missing header line");
    std::size_t count = 0, dim = 0;
    {
        std::istringstream header(line);
        std::string extra;
        if (!(header >> count >> dim) || (header >> extra)) throw fail(1, "header must be \"<count> <dim>\"");
    }
    if (dim != expected_dim) {
        throw fail(1, "dimension " + std::to_string(dim) + " does not match expected " + std::to_string(expected_dim));
    }

    EmbeddingFile file;
    file.dim = dim;
    std::size_t line_no = 1;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const char* p = line.data();
        const char* end = p + line.size();
        const char* tok_end = std::find(p, end, ' ');
        if (tok_end == p || tok_end == end) throw fail(line_no, "expected a token followed by values");
        std::string token(p, tok_end);
        std::vector<float> values;
        values.reserve(dim);
        p = tok_end;
        while (p < end) {
            while (p < end && *p == ' ') ++p;
            if (p == end) break;
            float v = 0.0f;
            const auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc{} || (next < end && *next != ' ') || !std::isfinite(v)) {
                throw fail(line_no, "bad number for token " + token);
            }
            values.push_back(v);
            p = next;
        }
        if (values.size() != dim) {
            throw fail(line_no, "token " + token + " has " + std::to_string(values.size()) + " values, expected " +
                                    std::to_string(dim));
        }
        ++rows;
        if (keep == nullptr || keep->index(token) != Vocabulary::kUnknown) {
            file.vectors.insert_or_assign(std::move(token), std::move(values));
        }
    }
    if (rows != count) {
        throw fail(line_no, "header announces " + std::to_string(count) + " rows, found " + std::to_string(rows));
    }
    return file;
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingFile& file)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot write embedding file " + path.string());
    out << file.vectors.size() << ' ' << file.dim << '\n';
    std::vector<const std::string*> keys;
    for (const auto& kv : file.vectors) keys.push_back(&kv.first);
    std::sort(keys.begin(), keys.end(), [](const auto* a, const auto* b) { return *a < *b; });
    char buf[64];
    for (const auto* key : keys) {
        out << *key;
        for (const float v : file.vectors.at(*key)) {
            // Shortest representation that round-trips exactly.
            const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
            out << ' ' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
        }
        out << '\n';
    }
}

VocabBuild build_vocab(const std::vector<TokenList>& train_documents, const EmbeddingFile* pretrained,
                       std::size_t dim, Rng& rng)
{
    if (pretrained != nullptr && pretrained->dim != dim) {
        throw IncompatibilityError("embedding file dimension " + std::to_string(pretrained->dim) +
                                   " differs from model dimension " + std::to_string(dim));
    }
    VocabBuild out{Vocabulary::build(train_documents), {}};
    auto& table = out.table;
    table.dim = dim;
    table.rows = out.vocab.size();
    table.values.assign(table.rows * dim, 0.0f);
    for (std::size_t r = 1; r < table.rows; ++r) {
        float* row = table.values.data() + r * dim;
        const std::vector<float>* hit = nullptr;
        if (pretrained != nullptr && r != static_cast<std::size_t>(Vocabulary::kUnknown)) {
            const auto it = pretrained->vectors.find(out.vocab.token(static_cast<std::int32_t>(r)));
            if (it != pretrained->vectors.end()) hit = &it->second;
        }
        if (hit != nullptr) {
            std::copy(hit->begin(), hit->end(), row);
            ++table.pretrained_hits;
        } else {
            for (std::size_t j = 0; j < dim; ++j) row[j] = static_cast<float>(rng.uniform(-0.25, 0.25));
        }
    }
    return out;
}

std::vector<std::int32_t> encode_tokens(const TokenList& tokens, const Vocabulary& vocab, std::size_t max_len)
{
    std::vector<std::int32_t> ids(max_len, Vocabulary::kPadding);
    for (std::size_t i = 0; i < std::min(max_len, tokens.size()); ++i) ids[i] = vocab.index(tokens[i]);
    return ids;
}

TokenBatch encode_batch(const std::vector<TokenList>& documents, const Vocabulary& vocab, std::size_t max_len)
{
    if (max_len < 2) {
        throw ConfigError("max_len " + std::to_string(max_len) + " is shorter than the smallest convolution window (2)");
    }
    TokenBatch batch;
    batch.batch = documents.size();
    batch.length = max_len;
    batch.ids.reserve(documents.size() * max_len);
    for (const auto& doc : documents) {
        const auto ids = encode_tokens(doc, vocab, max_len);
        batch.ids.insert(batch.ids.end(), ids.begin(), ids.end());
    }
    return batch;
}

std::size_t TextCnnConfig::min_length() const
{
    std::size_t need = 0;
    for (auto w : windows) need = std::max(need, 2 * w - 1);
    return need;
}

std::size_t TextCnnConfig::pooled_width(std::size_t length) const
{
    std::size_t width = 0;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        if (length < windows[i]) return 0;
        width += filters[i] * ((length - windows[i] + 1) / windows[i]);
    }
    return width;
}

template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng)
{
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<T> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<T>(rng.normal() * stddev);
    return Tensor<T>(std::move(shape), std::move(values));
}

template <typename T>
TextCnn<T>::TextCnn(const TextCnnConfig& config, std::size_t max_len, Rng& rng) : config_(config), max_len_(max_len)
{
    if (config_.filters.size() != config_.windows.size() || config_.filters.empty()) {
        throw ConfigError("text CNN needs one filter count per window size");
    }
    if (max_len_ < config_.min_length()) {
        throw ConfigError("text CNN max_len " + std::to_string(max_len_) + " is below the minimum " +
                          std::to_string(config_.min_length()) + " for windows up to " +
                          std::to_string(*std::max_element(config_.windows.begin(), config_.windows.end())));
    }
    if (config_.vocab_size < 2) throw ConfigError("vocabulary must contain padding and unknown rows");

    const std::size_t dim = config_.embed_dim;
    std::vector<T> table(config_.vocab_size * dim, T(0));
    for (std::size_t i = dim; i < table.size(); ++i) table[i] = static_cast<T>(rng.uniform(-0.25, 0.25));
    embedding = Tensor<T>(Shape{config_.vocab_size, dim}, std::move(table));

    for (std::size_t i = 0; i < config_.windows.size(); ++i) {
        const std::size_t w = config_.windows[i];
        conv_kernels.push_back(he_normal<T>({config_.filters[i], w, dim}, w * dim, rng));
        conv_biases.emplace_back(Shape{config_.filters[i]}, T(0));
    }
    const std::size_t pooled = config_.pooled_width(max_len_);
    fc1_weight = he_normal<T>({pooled, config_.hidden}, pooled, rng);
    fc1_bias = Tensor<T>(Shape{config_.hidden}, T(0));
    bn_gamma = Tensor<T>(Shape{config_.hidden}, T(1));
    bn_beta = Tensor<T>(Shape{config_.hidden}, T(0));
    bn_state = BatchNormState<T>(config_.hidden);
    fc2_weight = he_normal<T>({config_.hidden, config_.hidden2}, config_.hidden, rng);
    fc2_bias = Tensor<T>(Shape{config_.hidden2}, T(0));
    head_weight = he_normal<T>({config_.hidden2, config_.num_classes}, config_.hidden2, rng);
    head_bias = Tensor<T>(Shape{config_.num_classes}, T(0));
}

template <typename T>
void TextCnn<T>::set_embeddings(const EmbeddingTable& table)
{
    if (table.rows != config_.vocab_size || table.dim != config_.embed_dim) {
        throw IncompatibilityError("embedding table [" + std::to_string(table.rows) + "," + std::to_string(table.dim) +
                                   "] does not match text CNN [" + std::to_string(config_.vocab_size) + "," +
                                   std::to_string(config_.embed_dim) + "]");
    }
    auto dst = embedding.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(table.values[i]);
    std::fill(dst.begin(), dst.begin() + static_cast<std::ptrdiff_t>(config_.embed_dim), T(0));
}

template <typename T>
Tensor<T> TextCnn<T>::forward(const TokenBatch& tokens, TextOutput mode, bool training, Rng& rng)
{
    if (tokens.length != max_len_) {
        throw DimensionError("text CNN built for length " + std::to_string(max_len_) + ", got batch of length " +
                             std::to_string(tokens.length));
    }
    const std::size_t batch = tokens.batch;
    const Tensor<T> embedded = crisisfuse::embedding(this->embedding, tokens.ids, batch, tokens.length);

    std::vector<Tensor<T>> branches;
    for (std::size_t i = 0; i < conv_kernels.size(); ++i) {
        const auto activated = relu(conv1d(embedded, conv_kernels[i], conv_biases[i]));
        const auto pooled = maxpool1d(activated, config_.windows[i]);
        branches.push_back(reshape(pooled, {batch, pooled.dim(1) * pooled.dim(2)}));
    }
    const auto merged = concat(branches);
    const auto features = relu(batchnorm(dense(merged, fc1_weight, fc1_bias), bn_gamma, bn_beta, bn_state, training));
    if (mode == TextOutput::features) {
        return features;
    }
    const auto hidden = dropout(features, config_.dropout, training, rng);
    const auto second = dropout(relu(dense(hidden, fc2_weight, fc2_bias)), config_.dropout, training, rng);
    return dense(second, head_weight, head_bias);
}

template <typename T>
void TextCnn<T>::collect(ParameterSet<T>& set, const std::string& prefix)
{
    set.add(prefix + "embedding", embedding, config_.train_embeddings ? ParamKind::trainable : ParamKind::frozen);
    for (std::size_t i = 0; i < conv_kernels.size(); ++i) {
        const std::string name = prefix + "conv" + std::to_string(config_.windows[i]);
        set.add(name + "/kernel", conv_kernels[i]);
        set.add(name + "/bias", conv_biases[i]);
    }
    set.add(prefix + "fc1/weight", fc1_weight);
    set.add(prefix + "fc1/bias", fc1_bias);
    set.add(prefix + "bn/gamma", bn_gamma);
    set.add(prefix + "bn/beta", bn_beta);
    set.add(prefix + "bn/running_mean", bn_state.running_mean, ParamKind::buffer);
    set.add(prefix + "bn/running_var", bn_state.running_var, ParamKind::buffer);
    set.add(prefix + "fc2/weight", fc2_weight);
    set.add(prefix + "fc2/bias", fc2_bias);
    set.add(prefix + "head/weight", head_weight);
    set.add(prefix + "head/bias", head_bias);
}

template Tensor<float> he_normal<float>(Shape, std::size_t, Rng&);
template Tensor<double> he_normal<double>(Shape, std::size_t, Rng&);
template class TextCnn<float>;
template class TextCnn<double>;

}  // namespace crisisfuse
