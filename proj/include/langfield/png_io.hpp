#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace langfield::png {

/// Decoded image; samples hold the raw values (0..1 for 1-bit, 0..255, or 0..65535).
struct Image {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t channels = 0;
    std::uint32_t bit_depth = 0;
    std::vector<std::uint16_t> samples;
};

Image read(const std::filesystem::path& path);

void write_gray8(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height,
                 std::span<const std::uint8_t> pixels);
void write_gray16(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height,
                  std::span<const std::uint16_t> pixels);
void write_rgb8(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height,
                std::span<const std::uint8_t> pixels);
// 1-bit grayscale; nonzero input means set.
void write_mask1(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height,
                 std::span<const std::uint8_t> pixels);

} // namespace langfield::png
