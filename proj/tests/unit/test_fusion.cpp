#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "crisisfuse/fusion.hpp"
#include "../support/synthetic.hpp"

using namespace crisisfuse;

namespace {

ModelConfig small_config(Modality mode, std::size_t classes, std::size_t vocab)
{
    ModelConfig mc;
    mc.modality = mode;
    mc.num_classes = classes;
    mc.max_len = 8;
    mc.text.vocab_size = vocab;
    mc.text.num_classes = classes;
    mc.text.embed_dim = 8;
    mc.text.filters = {4, 4, 4};
    mc.text.hidden = 16;
    mc.text.hidden2 = 8;
    mc.image.num_classes = classes;
    mc.image.width_scale = 1.0 / 16.0;
    mc.image.image_size = 32;
    mc.fusion.projection = 12;
    mc.fusion.hidden = 10;
    return mc;
}

TokenBatch tokens(std::size_t batch, std::size_t length, std::int32_t vocab, std::uint64_t seed)
{
    Rng rng(seed);
    TokenBatch t{batch, length, std::vector<std::int32_t>(batch * length)};
    for (auto& id : t.ids) id = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(vocab)));
    return t;
}

Tensor<float> images(std::size_t batch, std::size_t size, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<float> v(batch * 3 * size * size);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return Tensor<float>(Shape{batch, 3, size, size}, v);
}

std::vector<Sample> text_samples(std::size_t n, std::uint64_t seed, crisisfuse::testing::TextCorpus* out = nullptr,
                                 Vocabulary* vocab_out = nullptr)
{
    Rng rng(seed);
    const auto corpus = crisisfuse::testing::separable_text(n, 2, 8, rng);
    const auto vocab = Vocabulary::build(corpus.documents);
    if (out) *out = corpus;
    if (vocab_out) *vocab_out = vocab;
    return crisisfuse::testing::make_samples(corpus, &vocab, 8, 0, rng, false);
}

TrainConfig quick(Modality mode, std::size_t epochs)
{
    TrainConfig cfg = TrainConfig::defaults_for(mode);
    cfg.max_epochs = epochs;
    cfg.batch_size = 8;
    cfg.seed = 3;
    return cfg;
}

}  // namespace

TEST_SUITE("fusion")
{
    TEST_CASE("documented widths")
    {
        Rng rng(1);
        ModelConfig mc;
        mc.modality = Modality::multimodal;
        mc.text.vocab_size = 20;
        mc.image.image_size = 32;
        Classifier<float> model(mc, rng);
        CHECK(model.head_weight.shape() == Shape{512, 2});
        CHECK(model.text_proj_weight.shape() == Shape{1000, 1000});
        CHECK(model.image_proj_weight.shape() == Shape{4096, 1000});
        CHECK(model.hidden_weight.shape() == Shape{2000, 512});
    }

    TEST_CASE("mode defaults")
    {
        const auto text = TrainConfig::defaults_for(Modality::text);
        CHECK(text.lr == 0.01);
        CHECK(text.max_epochs == 50);
        CHECK(text.patience == 10);
        const auto image = TrainConfig::defaults_for(Modality::image);
        CHECK(image.lr == 1e-6);
        CHECK(image.max_epochs == 1000);
        CHECK(image.plateau_factor == 0.1);
        CHECK(image.plateau_patience == std::optional<std::size_t>(100));
        CHECK(image.patience == 100);
        CHECK(TrainConfig::defaults_for(Modality::multimodal).batch_size == 32);
        CHECK(parse_modality("multimodal") == Modality::multimodal);
        CHECK_THROWS_AS(parse_modality("audio"), ConfigError);
    }

    TEST_CASE("multimodal logits shape, batch mismatch and missing modality")
    {
        Rng rng(2);
        auto mc = small_config(Modality::multimodal, 5, 30);
        Classifier<float> model(mc, rng);
        const auto t = tokens(32, 8, 30, 1);
        const auto im = images(32, 32, 2);
        CHECK(model.logits(&t, &im, false, rng).shape() == Shape{32, 5});
        const auto fewer = images(31, 32, 3);
        CHECK_THROWS_AS(model.logits(&t, &fewer, false, rng), DimensionError);
        CHECK_THROWS_AS(model.logits(&t, nullptr, false, rng), InputError);
        CHECK_THROWS_AS(model.logits(nullptr, &im, false, rng), InputError);
    }

    TEST_CASE("unimodal modes use their own head")
    {
        Rng rng(3);
        Classifier<float> text(small_config(Modality::text, 3, 30), rng);
        const auto t = tokens(4, 8, 30, 4);
        CHECK(text.logits(&t, nullptr, false, rng).shape() == Shape{4, 3});
        CHECK_FALSE(text.image.has_value());
        Classifier<float> image(small_config(Modality::image, 3, 30), rng);
        const auto im = images(4, 32, 5);
        CHECK(image.logits(nullptr, &im, false, rng).shape() == Shape{4, 3});
        CHECK_FALSE(image.text.has_value());
    }

    TEST_CASE("zeroed image projection makes logits independent of the image")
    {
        Rng rng(4);
        Classifier<float> model(small_config(Modality::multimodal, 2, 30), rng);
        std::fill(model.image_proj_weight.values().begin(), model.image_proj_weight.values().end(), 0.0f);
        const auto t = tokens(3, 8, 30, 6);
        const auto a = images(3, 32, 7);
        const auto b = images(3, 32, 8);
        CHECK(model.logits(&t, &a, false, rng).values() == model.logits(&t, &b, false, rng).values());
    }

    TEST_CASE("warm start copies branch tensors bit for bit")
    {
        Rng rng(5);
        auto text_model = build_model(small_config(Modality::text, 2, 30), rng);
        Checkpoint text_ck;
        text_model.params().save_to(text_ck);
        auto image_model = build_model(small_config(Modality::image, 2, 30), rng);
        Checkpoint image_ck;
        image_model.params().save_to(image_ck);

        Rng other(6);
        auto fused = build_model(small_config(Modality::multimodal, 2, 30), other,
                                 WarmStart{&text_ck, &image_ck, true, false});
        CHECK(fused.text->embedding.values() == text_model.text->embedding.values());
        CHECK(fused.text->fc1_weight.values() == text_model.text->fc1_weight.values());
        CHECK(fused.image->conv_kernels[3].values() == image_model.image->conv_kernels[3].values());
        CHECK(fused.image->fc2_weight.values() == image_model.image->fc2_weight.values());
        CHECK(fused.params().find("text/embedding")->kind == ParamKind::frozen);

        CHECK_THROWS_AS(build_model(small_config(Modality::image, 2, 30), other, WarmStart{&text_ck}),
                        IncompatibilityError);
        auto wrong_vocab = small_config(Modality::multimodal, 2, 31);
        CHECK_THROWS_AS(build_model(wrong_vocab, other, WarmStart{&text_ck}), IncompatibilityError);
    }

    TEST_CASE("same seed, config and data give the same loss sequence")
    {
        const auto samples = text_samples(24, 7);
        std::vector<double> losses[2];
        for (auto& run : losses) {
            Rng init(8);
            auto model = build_model(small_config(Modality::text, 2, 40), init);
            for (const auto& e : train(model, quick(Modality::text, 4), samples, samples, nullptr).history) {
                run.push_back(e.train_loss);
            }
        }
        CHECK(losses[0] == losses[1]);
        CHECK(losses[0].size() <= 4);
    }

    TEST_CASE("frozen dev accuracy stops at best epoch plus patience")
    {
        const auto train_set = text_samples(16, 9);
        // Two identical inputs with different labels: accuracy is exactly 0.5 forever.
        std::vector<Sample> dev{train_set[0], train_set[0]};
        dev[1].label = 1 - dev[0].label;
        Rng init(10);
        auto model = build_model(small_config(Modality::text, 2, 40), init);
        auto cfg = quick(Modality::text, 50);
        cfg.patience = 4;
        const auto res = train(model, cfg, train_set, dev, nullptr);
        CHECK(res.history.size() == 5);
        CHECK(res.stopped_early);
        for (const auto& e : res.history) CHECK(e.dev_accuracy == 0.5);
    }

    TEST_CASE("kept parameters reach the best recorded dev accuracy")
    {
        const auto samples = text_samples(32, 11);
        const std::vector<Sample> train_set(samples.begin(), samples.begin() + 24);
        const std::vector<Sample> dev(samples.begin() + 24, samples.end());
        Rng init(12);
        auto model = build_model(small_config(Modality::text, 2, 40), init);
        const auto res = train(model, quick(Modality::text, 8), train_set, dev, nullptr);
        double best = 0;
        for (const auto& e : res.history) best = std::max(best, e.dev_accuracy);
        CHECK(res.best_dev_accuracy == best);
        CHECK(crisisfuse::testing::train_accuracy(model, dev) == best);
        CHECK(res.history.size() <= 8);
    }

    TEST_CASE("plateau reduction applies in image mode")
    {
        Rng rng(13);
        crisisfuse::testing::TextCorpus corpus;
        for (int i = 0; i < 6; ++i) {
            corpus.documents.emplace_back();
            corpus.labels.push_back(i % 2);
        }
        const auto samples = crisisfuse::testing::make_samples(corpus, nullptr, 0, 32, rng, true);
        std::vector<Sample> dev{samples[0], samples[0]};
        dev[1].label = 1 - dev[0].label;
        Rng init(14);
        auto model = build_model(small_config(Modality::image, 2, 10), init);
        auto cfg = quick(Modality::image, 5);
        cfg.plateau_patience = 2;
        const auto res = train(model, cfg, samples, dev, nullptr);
        REQUIRE(res.history.size() == 5);
        CHECK(res.history[2].lr == doctest::Approx(1e-6));
        CHECK(res.history[3].lr == doctest::Approx(1e-7));
        CHECK(res.history[4].lr == doctest::Approx(1e-7));
    }

    TEST_CASE("training errors")
    {
        const auto samples = text_samples(8, 15);
        Rng init(16);
        auto model = build_model(small_config(Modality::text, 2, 40), init);
        CHECK_THROWS_AS(train(model, quick(Modality::text, 2), {}, samples, nullptr), ConfigError);
        CHECK_THROWS_AS(train(model, quick(Modality::image, 2), samples, samples, nullptr), ConfigError);
        auto bad = samples;
        bad[0].label = 4;
        CHECK_THROWS_AS(train(model, quick(Modality::text, 2), bad, samples, nullptr), LabelError);

        std::fill(model.text->embedding.values().begin(), model.text->embedding.values().end(), 3e38f);
        try {
            train(model, quick(Modality::text, 2), samples, samples, nullptr);
            FAIL("expected DivergenceError");
        } catch (const DivergenceError& e) {
            CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
        }
    }

    TEST_CASE("prediction ties go to the lowest class")
    {
        const std::vector<float> uniform{0.5f, 0.5f};
        CHECK(argmax(uniform) == 0);

        Rng init(17);
        auto model = build_model(small_config(Modality::text, 2, 40), init);
        std::fill(model.text->head_weight.values().begin(), model.text->head_weight.values().end(), 0.0f);
        std::fill(model.text->head_bias.values().begin(), model.text->head_bias.values().end(), 0.0f);
        const auto samples = text_samples(4, 18);
        const auto p = predict(model, samples[1], nullptr);
        CHECK(p.label == 0);
        CHECK(p.probabilities[0] == doctest::Approx(0.5f));
        CHECK(std::fabs(p.probabilities[0] + p.probabilities[1] - 1.0f) < 1e-6);

        Sample no_image = samples[0];
        auto mm = build_model(small_config(Modality::multimodal, 2, 40), init);
        CHECK_THROWS_AS(predict(mm, no_image, nullptr), InputError);
    }
}
