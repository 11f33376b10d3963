#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "crisisfuse/image.hpp"
#include "../support/synthetic.hpp"

using namespace crisisfuse;
using crisisfuse::testing::solid_raster;

TEST_SUITE("image")
{
    TEST_CASE("all-zero image normalizes to -mean/std per channel")
    {
        const auto t = preprocess_image(solid_raster(0, 0, 0, 10), 224);
        REQUIRE(t.size() == 3 * 224 * 224);
        for (std::size_t c = 0; c < 3; ++c) {
            const float expected = -kImageNetMean[c] / kImageNetStd[c];
            for (std::size_t i = 0; i < 224 * 224; i += 997) {
                CHECK(t[c * 224 * 224 + i] == doctest::Approx(expected).epsilon(1e-6));
            }
        }
    }

    TEST_CASE("pixel value 255 scales to 1 before normalization")
    {
        const auto t = preprocess_image(solid_raster(255, 255, 255, 3), 32);
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(t[c * 32 * 32] * kImageNetStd[c] + kImageNetMean[c] == doctest::Approx(1.0f).epsilon(1e-6));
        }
    }

    TEST_CASE("output shape is fixed regardless of input size")
    {
        for (std::size_t side : {1u, 7u, 224u, 300u}) {
            CHECK(preprocess_image(solid_raster(10, 20, 30, side)).size() == 3 * 224 * 224);
        }
        Raster gray{4, 4, 1, std::vector<std::uint8_t>(16, 0)};
        CHECK_THROWS_AS(preprocess_image(gray), InputError);
        CHECK_THROWS_AS(preprocess_image(Raster{0, 0, 3, {}}), InputError);
    }

    TEST_CASE("bilinear resize interpolates between neighbours")
    {
        Raster r{2, 1, 3, {0, 0, 0, 255, 255, 255}};
        const auto t = preprocess_image(r, 32);
        // Left edge stays dark, right edge bright, middle in between.
        const float left = t[16 * 32 + 0], mid = t[16 * 32 + 16], right = t[16 * 32 + 31];
        CHECK(left < mid);
        CHECK(mid < right);
    }

    TEST_CASE("PPM round trip through the decoder registry")
    {
        const auto dir = crisisfuse::testing::scratch_dir("ppm");
        Rng rng(1);
        const auto raster = solid_raster(12, 200, 77, 5, 10, &rng);
        write_ppm(dir / "a.ppm", raster);
        const auto registry = DecoderRegistry::with_defaults();
        const auto back = registry.decode(dir / "a.ppm");
        CHECK(back.width == 5);
        CHECK(back.height == 5);
        CHECK(back.pixels == raster.pixels);

        {
            std::ofstream out(dir / "b.ppm");
            out << "P3\n# comment\n2 1\n255\n1 2 3 4 5 6\n";
        }
        CHECK(registry.decode(dir / "b.ppm").pixels == std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6});
        CHECK_THROWS_AS(registry.decode(dir / "missing.ppm"), InputError);
        {
            std::ofstream out(dir / "c.ppm");
            out << "P5\n1 1\n255\n";
        }
        CHECK_THROWS_AS(registry.decode(dir / "c.ppm"), InputError);
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("VGG widths follow the scale")
    {
        VggConfig full;
        CHECK(full.conv_widths() ==
              std::vector<std::size_t>{64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512});
        CHECK(full.fc_width() == 4096);
        CHECK(full.flatten_width() == 512 * 49);

        VggConfig eighth;
        eighth.width_scale = 1.0 / 8.0;
        CHECK(eighth.conv_widths().front() == 8);
        CHECK(eighth.fc_width() == 512);
        CHECK(eighth.flatten_width() == 64 * 49);
        CHECK(vgg_conv_names().size() == 13);
    }

    TEST_CASE("VGG head shape at full width")
    {
        Rng rng(2);
        VggConfig cfg;
        cfg.image_size = 32;  // spatial size only changes fc1's input
        Vgg16<float> model(cfg, rng);
        CHECK(model.head_weight.shape() == Shape{4096, 2});
        CHECK(model.fc2_weight.shape() == Shape{4096, 4096});
    }

    TEST_CASE("VGG forward shapes")
    {
        Rng rng(3);
        VggConfig cfg;
        cfg.width_scale = 1.0 / 8.0;
        cfg.num_classes = 5;
        Vgg16<float> model(cfg, rng);
        Tensor<float> images(Shape{4, 3, 224, 224}, 0.1f);
        CHECK(model.forward(images, ImageOutput::logits, false, rng).shape() == Shape{4, 5});
        const auto f = model.forward(Tensor<float>(Shape{1, 3, 224, 224}, 0.2f), ImageOutput::fc2, false, rng);
        CHECK(f.shape() == Shape{1, 512});
        CHECK_THROWS_AS(model.forward(Tensor<float>(Shape{1, 3, 64, 64}), ImageOutput::fc2, false, rng),
                        DimensionError);
    }

    TEST_CASE("VGG forward is deterministic with dropout off")
    {
        Rng rng(4);
        VggConfig cfg;
        cfg.width_scale = 1.0 / 16.0;
        cfg.image_size = 32;
        Vgg16<float> model(cfg, rng);
        Rng data(5);
        std::vector<float> v(2 * 3 * 32 * 32);
        for (auto& x : v) x = static_cast<float>(data.normal());
        Tensor<float> images(Shape{2, 3, 32, 32}, v);
        CHECK(model.forward(images, ImageOutput::logits, false, rng).values() ==
              model.forward(images, ImageOutput::logits, false, rng).values());
    }

    TEST_CASE("VGG rejects bad configuration")
    {
        Rng rng(6);
        VggConfig cfg;
        cfg.width_scale = 0.0;
        CHECK_THROWS_AS(Vgg16<float>(cfg, rng), ConfigError);
        cfg.width_scale = 1.0 / 8.0;
        cfg.image_size = 100;
        CHECK_THROWS_AS(Vgg16<float>(cfg, rng), ConfigError);
    }

    TEST_CASE("pretrained weights load, head stays fresh, wrong shapes are rejected")
    {
        Rng rng(7);
        VggConfig cfg;
        cfg.image_size = 32;
        Vgg16<float> source(cfg, rng);
        ParameterSet<float> src;
        source.collect(src);
        Checkpoint ck;
        src.save_to(ck);

        Rng other(8);
        Vgg16<float> target(cfg, other);
        const auto head_before = target.head_weight.values();
        load_pretrained_vgg(target, ck);
        CHECK(target.conv_kernels[0].values() == source.conv_kernels[0].values());
        CHECK(target.fc2_weight.values() == source.fc2_weight.values());
        CHECK(target.head_weight.values() == head_before);

        Checkpoint bad = ck;
        bad.put("image/fc1/weight", Shape{10, 4096}, std::vector<float>(10 * 4096, 0.0f));
        try {
            load_pretrained_vgg(target, bad);
            FAIL("expected IncompatibilityError");
        } catch (const IncompatibilityError& e) {
            CHECK(std::string(e.what()).find("image/fc1/weight") != std::string::npos);
        }

        VggConfig small = cfg;
        small.width_scale = 0.5;
        Vgg16<float> half(small, rng);
        CHECK_THROWS_AS(load_pretrained_vgg(half, ck), IncompatibilityError);
    }

    TEST_CASE("save then load reproduces tensor payloads byte for byte")
    {
        Rng rng(9);
        VggConfig cfg;
        cfg.width_scale = 1.0 / 16.0;
        cfg.image_size = 32;
        Vgg16<float> model(cfg, rng);
        ParameterSet<float> set;
        model.collect(set);
        Checkpoint ck;
        set.save_to(ck);
        const auto bytes = ck.serialize();

        Rng other(10);
        Vgg16<float> copy(cfg, other);
        ParameterSet<float> copy_set;
        copy.collect(copy_set);
        copy_set.load_from(Checkpoint::deserialize(bytes));
        Checkpoint again;
        copy_set.save_to(again);
        CHECK(again.serialize() == bytes);
    }
}
