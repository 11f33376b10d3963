#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "crisisfuse/checkpoint.hpp"
#include "crisisfuse/ops.hpp"
#include "crisisfuse/params.hpp"

namespace crisisfuse {

/// Decoded 8-bit raster, interleaved channels, row-major.
struct Raster {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;
};

/// Decode boundary. Implementations turn a file into an RGB raster.
class ImageDecoder {
public:
    virtual ~ImageDecoder() = default;
    virtual std::string name() const = 0;
    virtual bool can_decode(const std::filesystem::path& path) const = 0;
    virtual Raster decode(const std::filesystem::path& path) const = 0;
};

/// Binary (P6) and ASCII (P3) PPM.
class PpmDecoder : public ImageDecoder {
public:
    std::string name() const override { return "ppm"; }
    bool can_decode(const std::filesystem::path& path) const override;
    Raster decode(const std::filesystem::path& path) const override;
};

void write_ppm(const std::filesystem::path& path, const Raster& raster);

/// Ordered decoder list; the first decoder accepting a path wins. The default
/// registry holds the PPM decoder and, when built with OpenCV, a decoder for
/// JPEG/PNG/BMP and friends.
class DecoderRegistry {
public:
    static DecoderRegistry with_defaults();

    void add(std::shared_ptr<const ImageDecoder> decoder) { decoders_.push_back(std::move(decoder)); }
    Raster decode(const std::filesystem::path& path) const;
    std::vector<std::string> names() const;

private:
    std::vector<std::shared_ptr<const ImageDecoder>> decoders_;
};

inline constexpr std::array<float, 3> kImageNetMean{0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kImageNetStd{0.229f, 0.224f, 0.225f};
inline constexpr std::size_t kImageSize = 224;

/// Bilinear resize to size x size, scale to [0,1], then per-channel ImageNet
/// standardization. Returns planar [3, size, size].
std::vector<float> preprocess_image(const Raster& raster, std::size_t size = kImageSize);

struct VggConfig {
    std::size_t num_classes = 2;
    double width_scale = 1.0;
    std::size_t image_size = kImageSize;
    double fc_dropout = 0.5;

    /// Output channels of the 13 convolutions, block by block.
    std::vector<std::size_t> conv_widths() const;
    std::size_t fc_width() const;
    std::size_t flatten_width() const;
};

enum class ImageOutput { fc2, logits };

/// VGG16 layout: conv3x3+ReLU blocks of {2,2,3,3,3} layers, 2x2 max pool after
/// each block, fc1+ReLU+dropout, fc2+ReLU, K-way head.
template <typename T>
class Vgg16 {
public:
    Vgg16(const VggConfig& config, Rng& rng);

    Tensor<T> forward(const Tensor<T>& images, ImageOutput mode, bool training, Rng& rng);

    void collect(ParameterSet<T>& set, const std::string& prefix = "image/");

    const VggConfig& config() const { return config_; }
    std::size_t feature_width() const { return config_.fc_width(); }

    std::vector<Tensor<T>> conv_kernels;
    std::vector<Tensor<T>> conv_biases;
    Tensor<T> fc1_weight, fc1_bias;
    Tensor<T> fc2_weight, fc2_bias;
    Tensor<T> head_weight, head_bias;

private:
    VggConfig config_;
};

/// Layer names in checkpoint order, e.g. "image/conv1_1/kernel".
std::vector<std::string> vgg_conv_names();

/// Copies pretrained convolution and fc weights into a full-width model; the
/// head stays freshly initialised.
void load_pretrained_vgg(Vgg16<float>& model, const Checkpoint& ckpt);

extern template class Vgg16<float>;
extern template class Vgg16<double>;

}  // namespace crisisfuse
