#include "crisisfuse/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "crisisfuse/text.hpp"

#ifdef CRISISFUSE_WITH_OPENCV
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#endif

namespace crisisfuse {

namespace {

std::string lower_extension(const std::filesystem::path& path)
{
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

/// Reads the next header integer, skipping whitespace and '#' comments.
std::size_t ppm_number(const std::string& bytes, std::size_t& pos, const std::string& where)
{
    for (;;) {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (pos < bytes.size() && bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    const std::size_t start = pos;
    std::size_t value = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
        value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
        ++pos;
    }
    if (pos == start) throw FormatError(where + ": malformed PPM header");
    return value;
}

#ifdef CRISISFUSE_WITH_OPENCV
class OpenCvDecoder : public ImageDecoder {
public:
    std::string name() const override { return "opencv"; }

    bool can_decode(const std::filesystem::path& path) const override
    {
        static const std::vector<std::string> known{".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff", ".webp"};
        return std::find(known.begin(), known.end(), lower_extension(path)) != known.end();
    }

    Raster decode(const std::filesystem::path& path) const override
    {
        cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
        if (bgr.empty()) throw InputError("cannot decode image " + path.string());
        cv::Mat rgb;
        cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
        Raster r;
        r.width = static_cast<std::size_t>(rgb.cols);
        r.height = static_cast<std::size_t>(rgb.rows);
        r.channels = 3;
        r.pixels.resize(r.width * r.height * 3);
        for (int y = 0; y < rgb.rows; ++y) {
            const auto* row = rgb.ptr<std::uint8_t>(y);
            std::copy(row, row + r.width * 3, r.pixels.data() + static_cast<std::size_t>(y) * r.width * 3);
        }
        return r;
    }
};
#endif

}  // namespace

bool PpmDecoder::can_decode(const std::filesystem::path& path) const
{
    const auto ext = lower_extension(path);
    return ext == ".ppm" || ext == ".pnm";
}

Raster PpmDecoder::decode(const std::filesystem::path& path) const
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open image " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = path.string();
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '3')) {
        throw InputError(where + ": not an RGB PPM (P3/P6) image");
    }
    const bool binary = bytes[1] == '6';
    std::size_t pos = 2;
    Raster r;
    r.width = ppm_number(bytes, pos, where);
    r.height = ppm_number(bytes, pos, where);
    const std::size_t maxval = ppm_number(bytes, pos, where);
    if (maxval == 0 || maxval > 255) throw FormatError(where + ": only 8-bit PPM is supported");
    r.channels = 3;
    const std::size_t count = r.width * r.height * 3;
    r.pixels.resize(count);
    if (binary) {
        ++pos;  // single whitespace byte before the raster
        if (bytes.size() < pos + count) throw FormatError(where + ": truncated PPM raster");
        for (std::size_t i = 0; i < count; ++i) {
            r.pixels[i] = static_cast<std::uint8_t>(static_cast<unsigned char>(bytes[pos + i]) * 255 / maxval);
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            r.pixels[i] = static_cast<std::uint8_t>(ppm_number(bytes, pos, where) * 255 / maxval);
        }
    }
    return r;
}

void write_ppm(const std::filesystem::path& path, const Raster& raster)
{
    if (raster.channels != 3 || raster.pixels.size() != raster.width * raster.height * 3) {
        throw InputError("write_ppm needs an RGB raster");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write image " + path.string());
    out << "P6\n" << raster.width << ' ' << raster.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(raster.pixels.data()), static_cast<std::streamsize>(raster.pixels.size()));
}

DecoderRegistry DecoderRegistry::with_defaults()
{
    DecoderRegistry registry;
    registry.add(std::make_shared<PpmDecoder>());
#ifdef CRISISFUSE_WITH_OPENCV
    registry.add(std::make_shared<OpenCvDecoder>());
#endif
    return registry;
}

Raster DecoderRegistry::decode(const std::filesystem::path& path) const
{
    if (!std::filesystem::exists(path)) throw InputError("image not found: " + path.string());
    for (const auto& d : decoders_) {
        if (d->can_decode(path)) return d->decode(path);
    }
    throw InputError("no decoder for " + path.string());
}

std::vector<std::string> DecoderRegistry::names() const
{
    std::vector<std::string> out;
    for (const auto& d : decoders_) out.push_back(d->name());
    return out;
}

std::vector<float> preprocess_image(const Raster& raster, std::size_t size)
{
    if (raster.channels != 3) {
        throw InputError("preprocess_image: expected 3 RGB channels, got " + std::to_string(raster.channels));
    }
    if (raster.width == 0 || raster.height == 0 || raster.pixels.size() != raster.width * raster.height * 3) {
        throw InputError("preprocess_image: empty or inconsistent raster");
    }
    if (size == 0) throw ParameterError("preprocess_image: target size must be positive");

    std::vector<float> out(3 * size * size);
    const double sx = static_cast<double>(raster.width) / static_cast<double>(size);
    const double sy = static_cast<double>(raster.height) / static_cast<double>(size);
    const auto px = [&](std::size_t x, std::size_t y, std::size_t c) {
        return static_cast<double>(raster.pixels[(y * raster.width + x) * 3 + c]);
    };
    for (std::size_t oy = 0; oy < size; ++oy) {
        // Half-pixel centres, clamped at the border.
        const double fy = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0,
                                     static_cast<double>(raster.height - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, raster.height - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t ox = 0; ox < size; ++ox) {
            const double fx = std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0,
                                         static_cast<double>(raster.width - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, raster.width - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = px(x0, y0, c) * (1.0 - wx) + px(x1, y0, c) * wx;
                const double bottom = px(x0, y1, c) * (1.0 - wx) + px(x1, y1, c) * wx;
                const double value = (top * (1.0 - wy) + bottom * wy) / 255.0;
                out[(c * size + oy) * size + ox] =
                    static_cast<float>((value - kImageNetMean[c]) / kImageNetStd[c]);
            }
        }
    }
    return out;
}

namespace {

constexpr std::array<std::size_t, 5> kBlockDepth{2, 2, 3, 3, 3};
constexpr std::array<std::size_t, 5> kBlockWidth{64, 128, 256, 512, 512};
constexpr std::size_t kFcWidth = 4096;

std::size_t scaled(std::size_t base, double scale)
{
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(base) * scale)));
}

}  // namespace

std::vector<std::size_t> VggConfig::conv_widths() const
{
    std::vector<std::size_t> widths;
    for (std::size_t b = 0; b < kBlockDepth.size(); ++b) {
        for (std::size_t l = 0; l < kBlockDepth[b]; ++l) widths.push_back(scaled(kBlockWidth[b], width_scale));
    }
    return widths;
}

std::size_t VggConfig::fc_width() const { return scaled(kFcWidth, width_scale); }

std::size_t VggConfig::flatten_width() const
{
    const std::size_t spatial = image_size / 32;
    return scaled(kBlockWidth.back(), width_scale) * spatial * spatial;
}

std::vector<std::string> vgg_conv_names()
{
    std::vector<std::string> names;
    for (std::size_t b = 0; b < kBlockDepth.size(); ++b) {
        for (std::size_t l = 0; l < kBlockDepth[b]; ++l) {
            names.push_back("conv" + std::to_string(b + 1) + "_" + std::to_string(l + 1));
        }
    }
    return names;
}

template <typename T>
Vgg16<T>::Vgg16(const VggConfig& config, Rng& rng) : config_(config)
{
    if (!(config_.width_scale > 0.0 && config_.width_scale <= 1.0)) {
        throw ConfigError("width_scale must be in (0, 1], got " + std::to_string(config_.width_scale));
    }
    if (config_.image_size == 0 || config_.image_size % 32 != 0) {
        throw ConfigError("image size " + std::to_string(config_.image_size) + " must be a positive multiple of 32");
    }
    if (config_.num_classes < 2) throw ConfigError("VGG head needs at least 2 classes");

    std::size_t in_channels = 3;
    for (const std::size_t width : config_.conv_widths()) {
        conv_kernels.push_back(he_normal<T>({width, in_channels, 3, 3}, in_channels * 9, rng));
        conv_biases.emplace_back(Shape{width}, T(0));
        in_channels = width;
    }
    const std::size_t flat = config_.flatten_width();
    const std::size_t fc = config_.fc_width();
    // Every block halves the spatial size: 224 -> 112 -> 56 -> 28 -> 14 -> 7.
    if (flat != in_channels * (config_.image_size >> 5) * (config_.image_size >> 5)) {
        throw ContractError("VGG flatten width does not match the conv stack");
    }
    fc1_weight = he_normal<T>({flat, fc}, flat, rng);
    fc1_bias = Tensor<T>(Shape{fc}, T(0));
    fc2_weight = he_normal<T>({fc, fc}, fc, rng);
    fc2_bias = Tensor<T>(Shape{fc}, T(0));
    head_weight = he_normal<T>({fc, config_.num_classes}, fc, rng);
    head_bias = Tensor<T>(Shape{config_.num_classes}, T(0));
}

template <typename T>
Tensor<T> Vgg16<T>::forward(const Tensor<T>& images, ImageOutput mode, bool training, Rng& rng)
{
    if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != config_.image_size ||
        images.dim(3) != config_.image_size) {
        throw DimensionError("VGG expects images [B,3," + std::to_string(config_.image_size) + "," +
                             std::to_string(config_.image_size) + "], got " + shape_to_string(images.shape()));
    }
    Tensor<T> x = images;
    std::size_t layer = 0;
    for (const std::size_t depth : kBlockDepth) {
        for (std::size_t l = 0; l < depth; ++l, ++layer) {
            x = relu(conv2d(x, conv_kernels[layer], conv_biases[layer]));
        }
        x = maxpool2d(x);
    }
    const std::size_t batch = images.dim(0);
    x = reshape(x, {batch, config_.flatten_width()});
    x = dropout(relu(dense(x, fc1_weight, fc1_bias)), config_.fc_dropout, training, rng);
    x = relu(dense(x, fc2_weight, fc2_bias));
    if (mode == ImageOutput::fc2) {
        return x;
    }
    return dense(x, head_weight, head_bias);
}

template <typename T>
void Vgg16<T>::collect(ParameterSet<T>& set, const std::string& prefix)
{
    const auto names = vgg_conv_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        set.add(prefix + names[i] + "/kernel", conv_kernels[i]);
        set.add(prefix + names[i] + "/bias", conv_biases[i]);
    }
    set.add(prefix + "fc1/weight", fc1_weight);
    set.add(prefix + "fc1/bias", fc1_bias);
    set.add(prefix + "fc2/weight", fc2_weight);
    set.add(prefix + "fc2/bias", fc2_bias);
    set.add(prefix + "head/weight", head_weight);
    set.add(prefix + "head/bias", head_bias);
}

void load_pretrained_vgg(Vgg16<float>& model, const Checkpoint& ckpt)
{
    if (model.config().width_scale != 1.0) {
        throw IncompatibilityError("pretrained VGG weights require width_scale = 1");
    }
    ParameterSet<float> set;
    model.collect(set);
    set.load_from(ckpt, "image/", true, {"image/head/weight", "image/head/bias"});
}

template class Vgg16<float>;
template class Vgg16<double>;

}  // namespace crisisfuse
