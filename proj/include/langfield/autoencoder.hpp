#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace langfield {

/// Fully connected layer y = W x + b, W stored out x in.
struct DenseLayer {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;

    friend bool operator==(const DenseLayer& a, const DenseLayer& b) {
        return a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols() &&
               a.bias.size() == b.bias.size() && a.weight == b.weight && a.bias == b.bias;
    }
};

/// Encoder D -> d and decoder d -> D. Hidden layers use ReLU, the last layer of each
/// stack is linear.
struct AutoencoderParams {
    std::uint32_t input_dim = 0;
    std::uint32_t latent_dim = 0;
    std::vector<DenseLayer> encoder;
    std::vector<DenseLayer> decoder;

    void validate() const;
    std::size_t parameter_count() const;
    void round_to_float();

    friend bool operator==(const AutoencoderParams&, const AutoencoderParams&) = default;
};

enum class AutoencoderInit { he_normal, identity };

struct AutoencoderArch {
    std::vector<std::uint32_t> hidden{256, 128, 64, 32}; // encoder widths; decoder mirrors them
    AutoencoderInit init = AutoencoderInit::he_normal;
};

/// Randomly initialized (or identity) parameters, rounded to float precision.
AutoencoderParams init_autoencoder(std::uint32_t input_dim, std::uint32_t latent_dim,
                                   const AutoencoderArch& arch, std::uint64_t seed);

// Batched evaluation takes one sample per column.
Eigen::MatrixXd encode_batch(const AutoencoderParams& params, const Eigen::MatrixXd& x);
Eigen::MatrixXd decode_batch(const AutoencoderParams& params, const Eigen::MatrixXd& h);
std::vector<double> encode(const AutoencoderParams& params, std::span<const double> x);
std::vector<double> decode(const AutoencoderParams& params, std::span<const double> h);

struct AeLossWeights {
    double l1 = 1.0;
    double cosine = 1.0;
};

struct AeLoss {
    double total = 0.0;
    double l1 = 0.0;     // mean over samples of mean |recon - x|
    double cosine = 0.0; // mean over samples of 1 - cos(recon, x); a zero vector counts as 1
};

AeLoss ae_loss(const AutoencoderParams& params, const Eigen::MatrixXd& batch, const AeLossWeights& w = {});

/// Loss plus the gradient of `total` for every layer.
struct AeGradients {
    AeLoss loss;
    std::vector<DenseLayer> encoder;
    std::vector<DenseLayer> decoder;
};

AeGradients ae_loss_and_gradients(const AutoencoderParams& params, const Eigen::MatrixXd& batch,
                                  const AeLossWeights& w = {});

struct AeTrainConfig {
    std::uint32_t epochs = 200;
    std::uint32_t batch_size = 256;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    AeLossWeights weights;
    AutoencoderArch arch;
    std::uint64_t seed = 0;
};

struct AeEpoch {
    AeLoss loss; // full-data loss of the parameters kept after this epoch
    double lr = 0.0;
    bool rejected = false; // epoch increased the loss and was rolled back
};

struct AeTrainReport {
    AeLoss initial;
    std::vector<AeEpoch> epochs;
    double final_cosine_distance = 0.0;
    std::size_t distinct_samples = 0;
};

/// Trains on the columns of `data` (one L2-normalized embedding per column).
///
/// After every epoch the full-data loss is evaluated; an epoch that increases it is
/// rolled back (parameters and optimizer state) and the learning rate halves, so the
/// reported per-epoch loss never increases.
std::pair<AutoencoderParams, AeTrainReport> train_autoencoder(const Eigen::MatrixXd& data,
                                                              std::uint32_t latent_dim,
                                                              const AeTrainConfig& cfg);

/// Continues from existing parameters instead of a fresh initialization.
AeTrainReport train_autoencoder(AutoencoderParams& params, const Eigen::MatrixXd& data,
                                const AeTrainConfig& cfg);

/// "LAEP" format: D u32, d u32, n_layers u32, then per layer rows u32, cols u32,
/// row-major f32 weights, f32 biases. Encoder layers come first.
void save_autoencoder(const AutoencoderParams& params, const std::filesystem::path& path);
AutoencoderParams load_autoencoder(const std::filesystem::path& path);

} // namespace langfield
