#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "crisisfuse/tensor.hpp"

namespace crisisfuse {

/// Named-tensor container, little-endian throughout:
///
///   "CFCK" | u16 version | u32 entry count
///   per entry: u32 name length | UTF-8 name | u8 dtype (0 = f32) | u8 rank
///              | rank x u32 dims | f32 payload
class Checkpoint {
public:
    static constexpr std::uint16_t kVersion = 1;
    static constexpr std::uint8_t kFloat32 = 0;

    struct Entry {
        std::string name;
        Shape shape;
        std::vector<float> values;
    };

    /// Adds or replaces an entry.
    void put(std::string name, Shape shape, std::vector<float> values);
    const Entry* find(std::string_view name) const;
    bool contains(std::string_view name) const { return find(name) != nullptr; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::string serialize() const;
    static Checkpoint deserialize(std::string_view bytes);

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

private:
    std::vector<Entry> entries_;
};

}  // namespace crisisfuse
