#include "crisisfuse/gradcheck_suite.hpp"

#include <chrono>
#include <cstdio>
#include <sstream>

#include "crisisfuse/fusion.hpp"
#include "crisisfuse/ops.hpp"

namespace crisisfuse {

namespace {

using T = double;
using Tensor64 = Tensor<double>;

constexpr double kSmooth = 1e-5;
constexpr double kKinked = 1e-4;
// Whole networks have enough ReLU/max-pool units that a 1e-3 step crosses
// kinks on most coordinates (several per step in the scaled VGG), so the
// composite graphs use a step that stays inside one linear region.
constexpr double kDeepStep = 1e-5;

Tensor64 randn(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true)
{
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor64(std::move(shape), std::move(v), requires_grad);
}

// Random readout weights make every output coordinate matter with a distinct sign.
Tensor64 readout(const Tensor64& y, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<double> w(y.numel());
    for (auto& x : w) x = rng.uniform(-1.0, 1.0);
    return weighted_sum(y, std::span<const double>(w));
}

std::vector<NamedTensor> trainable(const ParameterSet<T>& set)
{
    std::vector<NamedTensor> out;
    for (const auto& p : set.items()) {
        if (p.kind == ParamKind::trainable) out.push_back({p.name, p.tensor});
    }
    return out;
}

// Zero biases put all-padding windows exactly on the ReLU kink; move the check
// point to a generic location.
void jitter_biases(ParameterSet<T>& set, std::uint64_t seed)
{
    Rng rng(seed);
    for (auto& p : set.items()) {
        const auto& n = p.name;
        if (p.kind != ParamKind::trainable || n.size() < 5 || n.compare(n.size() - 5, 5, "/bias") != 0) continue;
        for (auto& v : p.tensor.values()) v = 0.1 * rng.normal();
    }
}

TokenBatch toy_tokens(std::size_t batch, std::size_t length, std::size_t vocab, Rng& rng)
{
    TokenBatch tb{batch, length, {}};
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t used = length - b % 3;  // trailing padding on some rows
        for (std::size_t l = 0; l < length; ++l) {
            tb.ids.push_back(l < used ? static_cast<std::int32_t>(1 + rng.below(vocab - 1)) : 0);
        }
    }
    return tb;
}

TextCnnConfig toy_text_config()
{
    TextCnnConfig c;
    c.vocab_size = 12;
    c.embed_dim = 5;
    c.filters = {3, 4, 5};
    c.windows = {2, 3, 4};
    c.hidden = 8;
    c.hidden2 = 6;
    c.num_classes = 3;
    c.dropout = 0.25;
    return c;
}

VggConfig toy_vgg_config()
{
    VggConfig c;
    c.num_classes = 3;
    c.width_scale = 1.0 / 16.0;
    c.image_size = 32;
    c.fc_dropout = 0.5;
    return c;
}

struct Runner {
    std::vector<GradCheckCase> cases;
    const std::function<void(const GradCheckCase&)>& on_case;

    void run(const std::string& name, bool smooth, const std::vector<NamedTensor>& params,
             const std::function<Tensor64()>& loss, GradCheckOptions options = {})
    {
        if (options.tolerance == GradCheckOptions{}.tolerance) options.tolerance = smooth ? kSmooth : kKinked;
        const auto start = std::chrono::steady_clock::now();
        GradCheckCase c{name, smooth, {}, 0.0};
        try {
            c.report = gradient_check(params, loss, options);
        } catch (const std::exception& e) {
            c.report.tolerance = options.tolerance;
            c.report.params.push_back({"<graph>", 0.0, 0, 0, false, e.what()});
        }
        c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (on_case) on_case(c);
        cases.push_back(std::move(c));
    }
};

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(const std::function<void(const GradCheckCase&)>& on_case)
{
    Runner r{{}, on_case};
    Rng rng(20240611);

    {
        auto x = randn({3, 4}, rng), w = randn({4, 5}, rng), b = randn({5}, rng);
        r.run("dense", true, {{"x", x}, {"weight", w}, {"bias", b}}, [=] { return readout(dense(x, w, b), 1); });
    }
    {
        auto x = randn({2, 7, 3}, rng), k = randn({2, 3, 3}, rng), b = randn({2}, rng);
        r.run("conv1d", true, {{"x", x}, {"kernels", k}, {"bias", b}}, [=] { return readout(conv1d(x, k, b), 2); });
    }
    {
        auto x = randn({2, 9, 3}, rng);
        r.run("maxpool1d", false, {{"x", x}}, [=] { return readout(maxpool1d(x, 3), 3); });
    }
    {
        auto x = randn({2, 2, 5, 5}, rng), k = randn({3, 2, 3, 3}, rng), b = randn({3}, rng);
        r.run("conv2d", true, {{"x", x}, {"kernels", k}, {"bias", b}}, [=] { return readout(conv2d(x, k, b), 4); });
    }
    {
        auto x = randn({2, 2, 6, 6}, rng);
        r.run("maxpool2d", false, {{"x", x}}, [=] { return readout(maxpool2d(x), 5); });
    }
    {
        auto x = randn({4, 6}, rng);
        r.run("relu", false, {{"x", x}}, [=] { return readout(relu(x), 6); });
    }
    {
        auto x = randn({6, 5}, rng);
        r.run("dropout", true, {{"x", x}}, [=] {
            Rng mask(99);
            return readout(dropout(x, 0.3, true, mask), 7);
        });
    }
    {
        auto x = randn({5, 4}, rng), g = randn({4}, rng), b = randn({4}, rng);
        auto state = std::make_shared<BatchNormState<T>>(4);
        r.run("batchnorm", false, {{"x", x}, {"gamma", g}, {"beta", b}},
              [=] { return readout(batchnorm(x, g, b, *state, true), 8); });
    }
    {
        auto a = randn({3, 2}, rng), b = randn({3, 4}, rng);
        r.run("concat", true, {{"a", a}, {"b", b}}, [=] { return readout(concat<T>({a, b}), 9); });
    }
    {
        auto x = randn({3, 6}, rng);
        r.run("slice", true, {{"x", x}}, [=] { return readout(slice(x, 1, 4), 10); });
        r.run("reshape", true, {{"x", x}}, [=] { return readout(reshape(x, Shape{2, 9}), 11); });
    }
    {
        auto table = randn({6, 4}, rng);
        const std::vector<std::int32_t> ids = {1, 2, 0, 5, 2, 3, 4, 0};
        r.run("embedding", true, {{"table", table}},
              [=] { return readout(embedding(table, std::span<const std::int32_t>(ids), 2, 4), 12); });
    }
    {
        auto logits = randn({4, 3}, rng, 2.0);
        const std::vector<int> labels = {0, 2, 1, 2};
        r.run("softmax_cross_entropy", true, {{"logits", logits}},
              [=] { return softmax_cross_entropy(logits, std::span<const int>(labels)).loss; });
    }
    {
        auto x = randn({7}, rng);
        GradCheckOptions exact;
        exact.tolerance = 1e-8;
        r.run("sum_squares", true, {{"x", x}}, [=] { return sum_squares(x); }, exact);
    }
    {
        auto x = randn({3, 4}, rng), w = randn({4, 5}, rng), b = randn({5}, rng);
        const std::vector<int> labels = {4, 0, 2};
        r.run("dense_relu_chain", true, {{"x", x}, {"weight", w}, {"bias", b}}, [=] {
            return softmax_cross_entropy(relu(dense(x, w, b)), std::span<const int>(labels)).loss;
        });
    }
    {
        Rng init(31);
        auto model = std::make_shared<TextCnn<T>>(toy_text_config(), 9, init);
        auto set = std::make_shared<ParameterSet<T>>();
        model->collect(*set);
        jitter_biases(*set, 34);
        Rng data(32);
        const auto tokens = toy_tokens(8, 9, 12, data);
        const std::vector<int> labels = {0, 1, 2, 1, 2, 0, 1, 0};
        GradCheckOptions opts;
        opts.step = kDeepStep;
        r.run("text_cnn", false, trainable(*set), [=] {
            Rng drop(33);
            auto logits = model->forward(tokens, TextOutput::logits, true, drop);
            return softmax_cross_entropy(logits, std::span<const int>(labels)).loss;
        }, opts);
    }
    {
        Rng init(41);
        auto model = std::make_shared<Vgg16<T>>(toy_vgg_config(), init);
        auto set = std::make_shared<ParameterSet<T>>();
        model->collect(*set);
        jitter_biases(*set, 44);
        Rng data(42);
        const auto images = randn({2, 3, 32, 32}, data, 1.0, false);
        const std::vector<int> labels = {2, 0};
        GradCheckOptions opts;
        opts.max_coords = 24;
        opts.step = kDeepStep;
        r.run("vgg16_scaled", false, trainable(*set), [=] {
            Rng drop(43);
            auto logits = model->forward(images, ImageOutput::logits, true, drop);
            return softmax_cross_entropy(logits, std::span<const int>(labels)).loss;
        }, opts);
    }
    {
        ModelConfig cfg;
        cfg.modality = Modality::multimodal;
        cfg.num_classes = 3;
        cfg.max_len = 9;
        cfg.text = toy_text_config();
        cfg.image = toy_vgg_config();
        cfg.fusion = {6, 5};
        Rng init(51);
        auto model = std::make_shared<Classifier<T>>(cfg, init);
        jitter_biases(model->params(), 54);
        Rng data(52);
        const auto tokens = toy_tokens(4, 9, 12, data);
        const auto images = randn({4, 3, 32, 32}, data, 1.0, false);
        const std::vector<int> labels = {1, 0, 2, 1};
        GradCheckOptions opts;
        opts.max_coords = 12;
        opts.step = kDeepStep;
        r.run("fusion", false, trainable(model->params()), [=] {
            Rng drop(53);
            auto logits = model->logits(&tokens, &images, true, drop);
            return softmax_cross_entropy(logits, std::span<const int>(labels)).loss;
        }, opts);
    }
    return std::move(r.cases);
}

std::string format_gradcheck_table(const std::vector<GradCheckCase>& cases)
{
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-24s %9s %12s %8s  %s\n", "check", "tolerance", "max_rel_err", "seconds", "result");
    out << line;
    for (const auto& c : cases) {
        std::snprintf(line, sizeof line, "%-24s %9.0e %12.3e %8.2f  %s\n", c.name.c_str(), c.report.tolerance,
                      c.report.max_rel_error(), c.seconds, c.report.passed() ? "PASS" : "FAIL");
        out << line;
        for (const auto& p : c.report.params) {
            if (!p.passed) out << "    " << p.name << ": " << p.failure << '\n';
        }
    }
    return out.str();
}

bool all_passed(const std::vector<GradCheckCase>& cases)
{
    for (const auto& c : cases) {
        if (!c.report.passed()) return false;
    }
    return !cases.empty();
}

}  // namespace crisisfuse
