#include "crisisfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace crisisfuse {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'F', 'C', 'K'};

template <typename U>
void put_le(std::string& out, U value)
{
    char bytes[sizeof(U)];
    std::memcpy(bytes, &value, sizeof(U));
    out.append(bytes, sizeof(U));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename U>
    U get(const char* what)
    {
        need(sizeof(U), what);
        U value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return value;
    }

    std::string_view take(std::size_t n, const char* what)
    {
        need(n, what);
        auto view = bytes_.substr(pos_, n);
        pos_ += n;
        return view;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n, const char* what) const
    {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                              std::to_string(pos_));
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::put(std::string name, Shape shape, std::vector<float> values)
{
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("checkpoint entry " + name + ": shape " + shape_to_string(shape) + " holds " +
                             std::to_string(shape_numel(shape)) + " values, got " + std::to_string(values.size()));
    }
    if (shape.size() > 255) {
        throw DimensionError("checkpoint entry " + name + ": rank too large");
    }
    for (auto& e : entries_) {
        if (e.name == name) {
            e.shape = std::move(shape);
            e.values = std::move(values);
            return;
        }
    }
    entries_.push_back({std::move(name), std::move(shape), std::move(values)});
}

const Checkpoint::Entry* Checkpoint::find(std::string_view name) const
{
    for (const auto& e : entries_) {
        if (e.name == name) {
            return &e;
        }
    }
    return nullptr;
}

std::string Checkpoint::serialize() const
{
    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint16_t>(out, kVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out += e.name;
        put_le<std::uint8_t>(out, kFloat32);
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
        for (auto d : e.shape) {
            put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        }
        out.append(reinterpret_cast<const char*>(e.values.data()), e.values.size() * sizeof(float));
    }
    return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes)
{
    Reader in(bytes);
    if (in.take(4, "magic") != std::string_view(kMagic, 4)) {
        throw FormatError("not a checkpoint: bad magic bytes");
    }
    const auto version = in.get<std::uint16_t>("version");
    if (version != kVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = in.get<std::uint32_t>("entry count");
    Checkpoint ckpt;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = in.get<std::uint32_t>("name length");
        std::string name(in.take(name_len, "name"));
        const auto dtype = in.get<std::uint8_t>("dtype");
        if (dtype != kFloat32) {
            throw FormatError("checkpoint entry " + name + ": unsupported dtype code " + std::to_string(dtype));
        }
        const auto rank = in.get<std::uint8_t>("rank");
        Shape shape;
        for (std::uint8_t r = 0; r < rank; ++r) {
            shape.push_back(in.get<std::uint32_t>("dims"));
        }
        const std::size_t n = shape_numel(shape);
        const auto payload = in.take(n * sizeof(float), "payload");
        std::vector<float> values(n);
        std::memcpy(values.data(), payload.data(), payload.size());
        if (ckpt.contains(name)) {
            throw FormatError("checkpoint has duplicate entry " + name);
        }
        ckpt.entries_.push_back({std::move(name), std::move(shape), std::move(values)});
    }
    if (!in.done()) {
        throw FormatError("checkpoint has trailing bytes");
    }
    return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw InputError("cannot write checkpoint " + path.string());
    }
    const auto bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw InputError("failed writing checkpoint " + path.string());
    }
}

Checkpoint Checkpoint::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open checkpoint " + path.string());
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace crisisfuse
