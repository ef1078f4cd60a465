#include "langfield/scene.hpp"

#include <cmath>
#include <fstream>

#include <Eigen/Geometry>
#include "json.hpp"

#include "binary_io.hpp"
#include "langfield/errors.hpp"

namespace langfield {

namespace {

bool all_finite(std::span<const float> v) {
    for (float x : v) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

std::string at(std::size_t i) { return " at " + std::to_string(i); }

} // namespace

std::string_view level_name(SemanticLevel l) {
    switch (l) {
    case SemanticLevel::subpart:
        return "subpart";
    case SemanticLevel::part:
        return "part";
    case SemanticLevel::whole:
        return "whole";
    }
    return "unknown";
}

std::optional<SemanticLevel> parse_level(std::string_view name) {
    for (SemanticLevel l : kLevels) {
        if (level_name(l) == name) {
            return l;
        }
    }
    return std::nullopt;
}

Eigen::Matrix3d covariance(const Gaussian& g) {
    const Eigen::Quaterniond q(g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3]);
    const Eigen::Matrix3d r = q.normalized().toRotationMatrix();
    const Eigen::Vector3d s(g.scale[0], g.scale[1], g.scale[2]);
    return r * s.cwiseAbs2().asDiagonal() * r.transpose();
}

GaussianScene::GaussianScene(std::vector<Gaussian> gaussians, std::uint32_t latent_dim)
    : gaussians_(std::move(gaussians)), latent_dim_(latent_dim) {
    for (auto& level : latents_) {
        level.assign(gaussians_.size() * latent_dim_, 0.0f);
    }
}

void GaussianScene::validate() const {
    if (gaussians_.empty()) {
        throw FormatError("scene has no Gaussians");
    }
    if (latent_dim_ < 1) {
        throw FormatError("latent_dim must be >= 1");
    }
    for (const auto& level : latents_) {
        if (level.size() != gaussians_.size() * latent_dim_) {
            throw FormatError("latent storage does not match Gaussian count");
        }
    }
    for (std::size_t i = 0; i < gaussians_.size(); ++i) {
        const Gaussian& g = gaussians_[i];
        if (!all_finite(g.mean) || !all_finite(g.scale) || !all_finite(g.rotation) ||
            !std::isfinite(g.opacity) || !all_finite(g.color)) {
            throw FormatError("non-finite field" + at(i));
        }
        for (SemanticLevel l : kLevels) {
            if (!all_finite(latent(l, i))) {
                throw FormatError("non-finite latent" + at(i));
            }
        }
        if (g.opacity < 0.0f || g.opacity > 1.0f) {
            throw FormatError("opacity out of range" + at(i));
        }
        for (float s : g.scale) {
            if (!(s > 0.0f)) {
                throw FormatError("scale must be positive" + at(i));
            }
        }
        double n2 = 0.0;
        for (float q : g.rotation) {
            n2 += double{q} * q;
        }
        if (std::abs(std::sqrt(n2) - 1.0) > 1e-6) {
            throw FormatError("rotation quaternion not unit" + at(i));
        }
    }
}

Eigen::Matrix3d Camera::rotation() const {
    Eigen::Matrix3d r;
    for (int row = 0; row < 3; ++row) {
        for (int col = 0; col < 3; ++col) {
            r(row, col) = world_to_camera[row * 4 + col];
        }
    }
    return r;
}

Eigen::Vector3d Camera::translation() const {
    return {world_to_camera[3], world_to_camera[7], world_to_camera[11]};
}

void Camera::validate() const {
    if (width == 0 || height == 0) {
        throw FormatError("camera " + id + ": width and height must be positive");
    }
    if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(cx) || !std::isfinite(cy)) {
        throw FormatError("camera " + id + ": invalid intrinsics");
    }
    for (double v : world_to_camera) {
        if (!std::isfinite(v)) {
            throw FormatError("camera " + id + ": non-finite pose");
        }
    }
    const Eigen::Matrix3d r = rotation();
    if (!((r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-5) || r.determinant() < 0.0) {
        throw FormatError("camera " + id + ": rotation block is not orthonormal");
    }
    if (world_to_camera[12] != 0.0 || world_to_camera[13] != 0.0 || world_to_camera[14] != 0.0 ||
        world_to_camera[15] != 1.0) {
        throw FormatError("camera " + id + ": last row of world_to_camera must be (0, 0, 0, 1)");
    }
}

Camera look_at_camera(std::string id, std::uint32_t width, std::uint32_t height, double focal,
                      const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                      const Eigen::Vector3d& up) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    Eigen::Matrix3d r;
    r.row(0) = right;
    r.row(1) = down;
    r.row(2) = forward;
    const Eigen::Vector3d t = -r * eye;

    Camera cam;
    cam.id = std::move(id);
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = focal;
    cam.cx = (width - 1) / 2.0;
    cam.cy = (height - 1) / 2.0;
    for (int row = 0; row < 3; ++row) {
        for (int col = 0; col < 3; ++col) {
            cam.world_to_camera[row * 4 + col] = r(row, col);
        }
        cam.world_to_camera[row * 4 + 3] = t(row);
    }
    return cam;
}

GaussianScene load_scene(const std::filesystem::path& path) {
    detail::BinaryReader in(path);
    in.expect_magic("LSPL");
    const auto version = in.get<std::uint32_t>();
    if (version != kSceneVersion) {
        throw FormatError(in.name() + ": unsupported scene version " + std::to_string(version));
    }
    const auto count = in.get<std::uint64_t>();
    const auto latent_dim = in.get<std::uint32_t>();
    if (latent_dim == 0) {
        throw FormatError(in.name() + ": latent_dim must be >= 1");
    }
    const std::size_t record_floats = 3 + 3 + 4 + 1 + 3 + 3 * std::size_t{latent_dim};
    if (in.remaining() / (record_floats * sizeof(float)) < count) {
        throw FormatError(in.name() + ": truncated file, header declares " + std::to_string(count) +
                          " Gaussians");
    }

    std::vector<Gaussian> gaussians(count);
    GaussianScene scene;
    {
        std::vector<float> latent_buf(3 * std::size_t{latent_dim});
        std::array<std::vector<float>, 3> latents;
        for (auto& l : latents) {
            l.resize(count * latent_dim);
        }
        for (std::size_t i = 0; i < count; ++i) {
            Gaussian& g = gaussians[i];
            in.get_all(std::span<float>(g.mean));
            in.get_all(std::span<float>(g.scale));
            in.get_all(std::span<float>(g.rotation));
            g.opacity = in.get<float>();
            in.get_all(std::span<float>(g.color));
            in.get_all(std::span<float>(latent_buf));
            for (std::size_t l = 0; l < 3; ++l) {
                std::copy_n(latent_buf.begin() + l * latent_dim, latent_dim,
                            latents[l].begin() + i * latent_dim);
            }
        }
        if (in.remaining() != 0) {
            throw FormatError(in.name() + ": trailing bytes after last record");
        }
        scene = GaussianScene(std::move(gaussians), latent_dim);
        for (SemanticLevel l : kLevels) {
            std::copy(latents[level_index(l)].begin(), latents[level_index(l)].end(),
                      scene.latents(l).begin());
        }
    }
    try {
        scene.validate();
    } catch (const FormatError& e) {
        throw FormatError(in.name() + ": " + e.what());
    }
    return scene;
}

void save_scene(const GaussianScene& scene, const std::filesystem::path& path) {
    scene.validate();
    detail::BinaryWriter out;
    out.magic("LSPL");
    out.put<std::uint32_t>(kSceneVersion);
    out.put<std::uint64_t>(scene.size());
    out.put<std::uint32_t>(scene.latent_dim());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Gaussian& g = scene.gaussian(i);
        out.put_all<float>(g.mean);
        out.put_all<float>(g.scale);
        out.put_all<float>(g.rotation);
        out.put(g.opacity);
        out.put_all<float>(g.color);
        for (SemanticLevel l : kLevels) {
            out.put_all<float>(scene.latent(l, i));
        }
    }
    out.write_file(path);
}

std::vector<Camera> load_cameras(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open cameras file " + path.string());
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    if (!doc.is_array()) {
        throw FormatError(path.string() + ": expected a JSON array of cameras");
    }
    std::vector<Camera> cameras;
    for (const auto& j : doc) {
        Camera c;
        try {
            c.id = j.at("id").get<std::string>();
            c.width = j.at("width").get<std::uint32_t>();
            c.height = j.at("height").get<std::uint32_t>();
            c.fx = j.at("fx").get<double>();
            c.fy = j.at("fy").get<double>();
            c.cx = j.at("cx").get<double>();
            c.cy = j.at("cy").get<double>();
            const auto& m = j.at("world_to_camera");
            if (!m.is_array() || m.size() != 16) {
                throw FormatError("world_to_camera must hold 16 numbers");
            }
            for (std::size_t k = 0; k < 16; ++k) {
                c.world_to_camera[k] = m[k].get<double>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ": " + e.what());
        }
        c.validate();
        cameras.push_back(std::move(c));
    }
    return cameras;
}

void save_cameras(std::span<const Camera> cameras, const std::filesystem::path& path) {
    nlohmann::json doc = nlohmann::json::array();
    for (const Camera& c : cameras) {
        doc.push_back({{"id", c.id},
                       {"width", c.width},
                       {"height", c.height},
                       {"fx", c.fx},
                       {"fy", c.fy},
                       {"cx", c.cx},
                       {"cy", c.cy},
                       {"world_to_camera", c.world_to_camera}});
    }
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    out << doc.dump(2) << '\n';
}

} // namespace langfield
