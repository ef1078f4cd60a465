#include "langfield/feature_image.hpp"

#include <cmath>

#include "binary_io.hpp"

namespace langfield {

void write_lfim(const FeatureImage& img, const std::filesystem::path& path) {
    detail::BinaryWriter out;
    out.magic("LFIM");
    out.put<std::uint32_t>(img.width);
    out.put<std::uint32_t>(img.height);
    out.put<std::uint32_t>(img.channels);
    for (double v : img.data) {
        out.put(static_cast<float>(v));
    }
    out.write_file(path);
}

FeatureImage read_lfim(const std::filesystem::path& path) {
    detail::BinaryReader in(path);
    in.expect_magic("LFIM");
    const auto w = in.get<std::uint32_t>();
    const auto h = in.get<std::uint32_t>();
    const auto k = in.get<std::uint32_t>();
    const std::size_t n = std::size_t{w} * h * k;
    if (in.remaining() != n * sizeof(float)) {
        throw FormatError(in.name() + ": payload size does not match header " + std::to_string(w) + "x" +
                          std::to_string(h) + "x" + std::to_string(k));
    }
    FeatureImage img(w, h, k);
    for (std::size_t i = 0; i < n; ++i) {
        const float v = in.get<float>();
        if (!std::isfinite(v)) {
            throw FormatError(in.name() + ": non-finite value at element " + std::to_string(i));
        }
        img.data[i] = v;
    }
    std::fill(img.alpha.begin(), img.alpha.end(), 1.0);
    return img;
}

} // namespace langfield
