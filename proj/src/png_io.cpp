#include "langfield/png_io.hpp"

#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>

#include <png.h>

#include "langfield/errors.hpp"

namespace langfield::png {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) {
            std::fclose(f);
        }
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    return FilePtr(std::fopen(path.string().c_str(), mode));
}

void write_rows(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height, int bit_depth,
                int color_type, const std::vector<std::vector<png_byte>>& rows) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    FilePtr fp = open_file(path, "wb");
    if (!fp) {
        throw std::runtime_error("cannot open for writing: " + path.string());
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
    if (info == nullptr) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("PNG encoding failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (const auto& row : rows) {
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void check_size(std::size_t got, std::size_t want) {
    if (got != want) {
        throw ShapeError("PNG pixel buffer has " + std::to_string(got) + " samples, expected " +
                         std::to_string(want));
    }
}

} // namespace

Image read(const std::filesystem::path& path) {
    FilePtr fp = open_file(path, "rb");
    if (!fp) {
        throw FormatError("cannot open " + path.string());
    }
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw FormatError(path.string() + ": not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
    if (info == nullptr) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("libpng initialization failed");
    }
    Image img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError(path.string() + ": corrupt PNG");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    const int color_type = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
    }
    if (depth < 8) {
        png_set_packing(png); // one sample per byte, original values preserved
    }
    if (depth == 16) {
        png_set_swap(png); // host little-endian samples
    }
    png_read_update_info(png, info);
    img.channels = png_get_channels(png, info);
    img.bit_depth = static_cast<std::uint32_t>(depth);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<png_byte> row(rowbytes);
    img.samples.reserve(std::size_t{img.width} * img.height * img.channels);
    for (std::uint32_t y = 0; y < img.height; ++y) {
        png_read_row(png, row.data(), nullptr);
        const std::size_t n = std::size_t{img.width} * img.channels;
        for (std::size_t i = 0; i < n; ++i) {
            if (depth == 16) {
                img.samples.push_back(static_cast<std::uint16_t>(row[2 * i] | (row[2 * i + 1] << 8)));
            } else {
                img.samples.push_back(row[i]);
            }
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_gray8(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height,
                 std::span<const std::uint8_t> pixels) {
    check_size(pixels.size(), std::size_t{width} * height);
    std::vector<std::vector<png_byte>> rows(height);
    for (std::uint32_t y = 0; y < height; ++y) {
        rows[y].assign(pixels.begin() + std::size_t{y} * width, pixels.begin() + std::size_t{y + 1} * width);
    }
    write_rows(path, width, height, 8, PNG_COLOR_TYPE_GRAY, rows);
}

void write_gray16(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height,
                  std::span<const std::uint16_t> pixels) {
    check_size(pixels.size(), std::size_t{width} * height);
    std::vector<std::vector<png_byte>> rows(height, std::vector<png_byte>(std::size_t{width} * 2));
    for (std::uint32_t y = 0; y < height; ++y) {
        for (std::uint32_t x = 0; x < width; ++x) {
            const std::uint16_t v = pixels[std::size_t{y} * width + x];
            rows[y][2 * x] = static_cast<png_byte>(v >> 8); // PNG is big-endian
            rows[y][2 * x + 1] = static_cast<png_byte>(v & 0xff);
        }
    }
    write_rows(path, width, height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

void write_rgb8(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height,
                std::span<const std::uint8_t> pixels) {
    check_size(pixels.size(), std::size_t{width} * height * 3);
    std::vector<std::vector<png_byte>> rows(height);
    for (std::uint32_t y = 0; y < height; ++y) {
        rows[y].assign(pixels.begin() + std::size_t{y} * width * 3,
                       pixels.begin() + std::size_t{y + 1} * width * 3);
    }
    write_rows(path, width, height, 8, PNG_COLOR_TYPE_RGB, rows);
}

void write_mask1(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height,
                 std::span<const std::uint8_t> pixels) {
    check_size(pixels.size(), std::size_t{width} * height);
    std::vector<std::vector<png_byte>> rows(height, std::vector<png_byte>((width + 7) / 8, 0));
    for (std::uint32_t y = 0; y < height; ++y) {
        for (std::uint32_t x = 0; x < width; ++x) {
            if (pixels[std::size_t{y} * width + x] != 0) {
                rows[y][x / 8] |= static_cast<png_byte>(0x80 >> (x % 8));
            }
        }
    }
    write_rows(path, width, height, 1, PNG_COLOR_TYPE_GRAY, rows);
}

} // namespace langfield::png
