// Shared fixtures and reference implementations for the test suites. The references are
// deliberately naive and share no code with the library beyond its data types.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Geometry>

#include "langfield/query.hpp"
#include "langfield/rasterizer.hpp"
#include "langfield/scene.hpp"

namespace lft {

using namespace langfield;

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("langfield_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline Camera simple_camera(std::uint32_t w, std::uint32_t h, double f = 100.0) {
    Camera c;
    c.id = "cam";
    c.width = w;
    c.height = h;
    c.fx = f;
    c.fy = f;
    c.cx = (w - 1) / 2.0;
    c.cy = (h - 1) / 2.0;
    c.world_to_camera = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
    return c;
}

inline std::array<float, 4> random_quat(std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    Eigen::Vector4d q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return {static_cast<float>(q[0]), static_cast<float>(q[1]), static_cast<float>(q[2]), static_cast<float>(q[3])};
}

/// Random Gaussians in front of an identity camera, sized so splats cover a few to a
/// few dozen pixels at the given focal length.
inline GaussianScene random_scene(std::mt19937_64& rng, std::size_t n, std::uint32_t d, double depth_lo = 2.0,
                                  double depth_hi = 6.0, double spread = 1.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Gaussian> gs(n);
    for (auto& g : gs) {
        const double z = depth_lo + (depth_hi - depth_lo) * u(rng);
        g.mean = {static_cast<float>((2 * u(rng) - 1) * spread * z / 2),
                  static_cast<float>((2 * u(rng) - 1) * spread * z / 2), static_cast<float>(z)};
        for (auto& s : g.scale) {
            s = static_cast<float>(0.01 + 0.08 * u(rng));
        }
        g.rotation = random_quat(rng);
        g.opacity = static_cast<float>(0.05 + 0.95 * u(rng));
        g.color = {static_cast<float>(u(rng)), static_cast<float>(u(rng)), static_cast<float>(u(rng))};
    }
    GaussianScene scene(std::move(gs), d);
    std::normal_distribution<double> nd;
    for (SemanticLevel l : kLevels) {
        for (float& v : scene.latents(l)) {
            v = static_cast<float>(nd(rng));
        }
    }
    return scene;
}

/// Per-pixel compositing over one global (depth, index) order, alpha evaluated straight
/// from the conic with std::exp.
inline FeatureImage naive_composite(const std::vector<Splat2D>& splats, const std::vector<double>& channels,
                                    std::size_t k, std::uint32_t w, std::uint32_t h, const RasterConfig& cfg = {}) {
    std::vector<const Splat2D*> order;
    for (const auto& s : splats) {
        order.push_back(&s);
    }
    std::stable_sort(order.begin(), order.end(), [](const Splat2D* a, const Splat2D* b) {
        return a->depth < b->depth || (a->depth == b->depth && a->gaussian_index < b->gaussian_index);
    });
    FeatureImage img(w, h, static_cast<std::uint32_t>(k));
    for (std::uint32_t y = 0; y < h; ++y) {
        for (std::uint32_t x = 0; x < w; ++x) {
            double t = 1.0;
            for (const Splat2D* s : order) {
                const double dx = x - s->center[0];
                const double dy = y - s->center[1];
                const double m2 = s->conic[0] * dx * dx + 2 * s->conic[1] * dx * dy + s->conic[2] * dy * dy;
                if (m2 > cfg.sigma_extent * cfg.sigma_extent) {
                    continue;
                }
                const double a = std::min(cfg.alpha_clamp, s->opacity * std::exp(-0.5 * m2));
                if (a <= 0) {
                    continue;
                }
                for (std::size_t c = 0; c < k; ++c) {
                    img.data[(std::size_t{y} * w + x) * k + c] += a * t * channels[s->gaussian_index * k + c];
                }
                t *= 1 - a;
                if (t < cfg.min_transmittance) {
                    break;
                }
            }
            img.alpha[std::size_t{y} * w + x] = 1 - t;
        }
    }
    return img;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return a.size() == b.size() ? m : std::numeric_limits<double>::infinity();
}

inline std::vector<double> unit_vector(std::mt19937_64& rng, std::size_t d) {
    std::normal_distribution<double> n;
    std::vector<double> v(d);
    double s = 0;
    for (auto& x : v) {
        x = n(rng);
        s += x * x;
    }
    for (auto& x : v) {
        x /= std::sqrt(s);
    }
    return v;
}

/// Relevancy straight from the min-over-softmax definition in long double.
inline long double relevancy_oracle(const std::vector<double>& img, const std::vector<double>& qry,
                                    const CanonicalSet& canon) {
    auto dot = [&](const std::vector<double>& a) {
        long double s = 0;
        for (std::size_t i = 0; i < img.size(); ++i) {
            s += static_cast<long double>(img[i]) * a[i];
        }
        return s;
    };
    const long double q = dot(qry);
    long double best = std::numeric_limits<long double>::infinity();
    for (const auto& c : canon.phrases) {
        const long double cd = dot(c);
        best = std::min(best, std::exp(q) / (std::exp(q) + std::exp(cd)));
    }
    return best;
}

inline RelevancyMap make_map(std::uint32_t w, std::uint32_t h, std::vector<double> v, SemanticLevel l) {
    RelevancyMap m;
    m.width = w;
    m.height = h;
    m.values = std::move(v);
    m.level = l;
    return m;
}

/// Edge-replicated box mean computed window by window: each window row is summed left to
/// right, the row sums top to bottom, and the total scaled by 1 / size^2.
inline std::vector<double> naive_smooth(const RelevancyMap& m, std::uint32_t size) {
    const int lo = -static_cast<int>(size / 2);
    const int hi = static_cast<int>(size) - 1 - static_cast<int>(size / 2);
    std::vector<double> out(m.values.size());
    for (int y = 0; y < static_cast<int>(m.height); ++y) {
        for (int x = 0; x < static_cast<int>(m.width); ++x) {
            double s = 0;
            for (int dy = lo; dy <= hi; ++dy) {
                const int yy = std::clamp(y + dy, 0, static_cast<int>(m.height) - 1);
                double row = 0;
                for (int dx = lo; dx <= hi; ++dx) {
                    const int xx = std::clamp(x + dx, 0, static_cast<int>(m.width) - 1);
                    row += m.values[yy * m.width + xx];
                }
                s += row;
            }
            out[y * m.width + x] = s * (1.0 / (double(size) * size));
        }
    }
    return out;
}

struct LocalizeRef {
    std::uint32_t x = 0, y = 0;
    std::size_t level = 0;
    double score = 0;
};

inline LocalizeRef localize_oracle(const MapTriple& maps, std::uint32_t size) {
    LocalizeRef best;
    best.score = -std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < 3; ++l) {
        const auto s = naive_smooth(maps[l], size);
        for (std::uint32_t y = 0; y < maps[l].height; ++y) {
            for (std::uint32_t x = 0; x < maps[l].width; ++x) {
                const double v = s[y * maps[l].width + x];
                if (v > best.score) {
                    best = {x, y, l, v};
                }
            }
        }
    }
    return best;
}

inline std::vector<std::uint8_t> segment_lerf_oracle(const MapTriple& maps, double threshold, std::uint32_t size) {
    std::array<std::vector<double>, 3> sm;
    double top = -std::numeric_limits<double>::infinity();
    std::size_t pick = 0;
    for (std::size_t l = 0; l < 3; ++l) {
        sm[l] = naive_smooth(maps[l], size);
        const double mx = *std::max_element(sm[l].begin(), sm[l].end());
        if (mx > top) {
            top = mx;
            pick = l;
        }
    }
    const auto& v = sm[pick];
    const double mn = *std::min_element(v.begin(), v.end());
    const double mx = *std::max_element(v.begin(), v.end());
    std::vector<std::uint8_t> mask(v.size(), 0);
    if (mx > mn) {
        for (std::size_t p = 0; p < v.size(); ++p) {
            mask[p] = (v[p] - mn) / (mx - mn) >= threshold;
        }
    }
    return mask;
}

inline std::vector<std::uint8_t> segment_ovs_oracle(const MapTriple& maps, double threshold, int* level = nullptr) {
    double best = -std::numeric_limits<double>::infinity();
    int pick = -1;
    for (int l = 0; l < 3; ++l) {
        double sum = 0;
        std::size_t n = 0;
        for (double v : maps[l].values) {
            if (v >= threshold) {
                sum += v;
                ++n;
            }
        }
        if (n > 0 && sum / n > best) {
            best = sum / n;
            pick = l;
        }
    }
    if (level) {
        *level = pick;
    }
    std::vector<std::uint8_t> mask(maps[0].values.size(), 0);
    if (pick >= 0) {
        for (std::size_t p = 0; p < mask.size(); ++p) {
            mask[p] = maps[pick].values[p] >= threshold;
        }
    }
    return mask;
}

/// Random map triple with plateaus and exact ties so tie rules get exercised.
inline MapTriple random_triple(std::mt19937_64& rng, std::uint32_t w, std::uint32_t h) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> mode(0, 3);
    MapTriple t;
    for (std::size_t l = 0; l < 3; ++l) {
        std::vector<double> v(std::size_t{w} * h);
        const int m = mode(rng);
        for (auto& x : v) {
            x = m == 0 ? std::round(u(rng) * 4) / 4 : u(rng);
        }
        if (m == 3) {
            // A bright blob.
            const double cx = u(rng) * w, cy = u(rng) * h, r = 2 + u(rng) * w / 3;
            for (std::uint32_t y = 0; y < h; ++y) {
                for (std::uint32_t x = 0; x < w; ++x) {
                    const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    v[y * w + x] = 0.3 * v[y * w + x] + 0.7 * std::exp(-d2 / (r * r));
                }
            }
        }
        t[l] = make_map(w, h, std::move(v), kLevels[l]);
    }
    return t;
}

} // namespace lft
