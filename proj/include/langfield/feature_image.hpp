#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace langfield {

/// H x W x k channel grid plus the accumulated opacity plane.
/// Pixel-major layout: data[(y * width + x) * channels + c].
struct FeatureImage {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t channels = 0;
    std::vector<double> data;
    std::vector<double> alpha;

    FeatureImage() = default;
    FeatureImage(std::uint32_t w, std::uint32_t h, std::uint32_t k)
        : width(w), height(h), channels(k), data(std::size_t{w} * h * k, 0.0),
          alpha(std::size_t{w} * h, 0.0) {}

    std::size_t pixel_count() const { return std::size_t{width} * height; }

    std::span<double> pixel(std::size_t x, std::size_t y) {
        return {data.data() + (y * width + x) * channels, channels};
    }
    std::span<const double> pixel(std::size_t x, std::size_t y) const {
        return {data.data() + (y * width + x) * channels, channels};
    }
    std::span<const double> pixel(std::size_t p) const {
        return {data.data() + p * channels, channels};
    }
    double at(std::size_t x, std::size_t y, std::size_t c) const {
        return data[(y * width + x) * channels + c];
    }
};

/// Writes the "LFIM" format: magic, width u32, height u32, channels u32, then f32 data.
void write_lfim(const FeatureImage& img, const std::filesystem::path& path);

/// Reads an "LFIM" file. The alpha plane is not stored and comes back as all ones.
FeatureImage read_lfim(const std::filesystem::path& path);

} // namespace langfield
