#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace langfield {

/// SAM mask granularity. Iteration order is subpart < part < whole everywhere.
enum class SemanticLevel : std::uint8_t { subpart = 0, part = 1, whole = 2 };

inline constexpr std::array<SemanticLevel, 3> kLevels{SemanticLevel::subpart, SemanticLevel::part,
                                                      SemanticLevel::whole};

constexpr std::size_t level_index(SemanticLevel l) { return static_cast<std::size_t>(l); }
std::string_view level_name(SemanticLevel l);
std::optional<SemanticLevel> parse_level(std::string_view name);

/// Geometry and appearance of one primitive. Latent features live in GaussianScene.
struct Gaussian {
    std::array<float, 3> mean{};
    std::array<float, 3> scale{1.0f, 1.0f, 1.0f};
    std::array<float, 4> rotation{1.0f, 0.0f, 0.0f, 0.0f}; // (w, x, y, z)
    float opacity = 1.0f;
    std::array<float, 3> color{};

    friend bool operator==(const Gaussian&, const Gaussian&) = default;
};

/// World-space covariance R * diag(scale^2) * R^T.
Eigen::Matrix3d covariance(const Gaussian& g);

/// Ordered Gaussians plus one d-dimensional latent per Gaussian and semantic level.
///
/// Latents are stored level-major: latents[level][i * latent_dim + c]. Order of
/// `gaussians` is file order and is never changed after load.
class GaussianScene {
public:
    GaussianScene() = default;
    GaussianScene(std::vector<Gaussian> gaussians, std::uint32_t latent_dim);

    std::size_t size() const { return gaussians_.size(); }
    std::uint32_t latent_dim() const { return latent_dim_; }

    const std::vector<Gaussian>& gaussians() const { return gaussians_; }
    const Gaussian& gaussian(std::size_t i) const { return gaussians_[i]; }

    std::span<const float> latents(SemanticLevel l) const { return latents_[level_index(l)]; }
    std::span<float> latents(SemanticLevel l) { return latents_[level_index(l)]; }

    std::span<const float> latent(SemanticLevel l, std::size_t i) const {
        return latents(l).subspan(i * latent_dim_, latent_dim_);
    }
    std::span<float> latent(SemanticLevel l, std::size_t i) {
        return latents(l).subspan(i * latent_dim_, latent_dim_);
    }

    // Throws FormatError naming the first offending Gaussian.
    void validate() const;

    friend bool operator==(const GaussianScene&, const GaussianScene&) = default;

private:
    std::vector<Gaussian> gaussians_;
    std::uint32_t latent_dim_ = 0;
    std::array<std::vector<float>, 3> latents_;
};

/// Pinhole camera; pixel centers sit at integer coordinates.
struct Camera {
    std::string id;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    std::array<double, 16> world_to_camera{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}; // row-major

    Eigen::Matrix3d rotation() const;
    Eigen::Vector3d translation() const;
    std::size_t pixel_count() const { return std::size_t{width} * height; }

    void validate() const;

    friend bool operator==(const Camera&, const Camera&) = default;
};

/// Camera at `eye` looking at `target`, +y image axis pointing away from `up`.
Camera look_at_camera(std::string id, std::uint32_t width, std::uint32_t height, double focal,
                      const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                      const Eigen::Vector3d& up = Eigen::Vector3d(0, 1, 0));

inline constexpr std::uint32_t kSceneVersion = 1;

GaussianScene load_scene(const std::filesystem::path& path);
void save_scene(const GaussianScene& scene, const std::filesystem::path& path);

std::vector<Camera> load_cameras(const std::filesystem::path& path);
void save_cameras(std::span<const Camera> cameras, const std::filesystem::path& path);

} // namespace langfield
