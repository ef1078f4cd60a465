#include "langfield/autoencoder.hpp"

#include <cmath>
#include <random>
#include <set>
#include <string>

#include "binary_io.hpp"
#include "langfield/errors.hpp"
#include "langfield/log.hpp"

namespace langfield {

namespace {

Eigen::MatrixXd forward_layer(const DenseLayer& layer, const Eigen::MatrixXd& x, bool relu) {
    // Every output is one contiguous dot product, so results do not depend on batch size.
    // Columns are processed in blocks to keep the block of samples in cache.
    const Eigen::MatrixXd wt = layer.weight.transpose();
    const Eigen::Index n = x.cols();
    Eigen::MatrixXd y(layer.weight.rows(), n);
    constexpr Eigen::Index kBlock = 32;
    for (Eigen::Index j0 = 0; j0 < n; j0 += kBlock) {
        const Eigen::Index j1 = std::min(n, j0 + kBlock);
        for (Eigen::Index i = 0; i < wt.cols(); ++i) {
            const auto w = wt.col(i);
            for (Eigen::Index j = j0; j < j1; ++j) {
                y(i, j) = w.dot(x.col(j)) + layer.bias[i];
            }
        }
    }
    if (relu) {
        y = y.cwiseMax(0.0);
    }
    return y;
}

Eigen::MatrixXd run_stack(const std::vector<DenseLayer>& stack, const Eigen::MatrixXd& x) {
    Eigen::MatrixXd a = x;
    for (std::size_t i = 0; i < stack.size(); ++i) {
        a = forward_layer(stack[i], a, i + 1 < stack.size());
    }
    return a;
}

void check_rows(const Eigen::MatrixXd& m, std::uint32_t want, const char* what) {
    if (m.rows() != static_cast<Eigen::Index>(want)) {
        throw ShapeError(std::string(what) + " expects " + std::to_string(want) + "-dimensional input, got " +
                         std::to_string(m.rows()));
    }
}

struct SampleTerms {
    double l1 = 0.0;
    double cosine = 0.0;
};

// Per-sample loss terms plus (optionally) d(weighted per-sample loss)/d(recon).
SampleTerms sample_terms(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& x,
                         const AeLossWeights& w, Eigen::VectorXd* grad) {
    const double dim = static_cast<double>(x.size());
    const Eigen::VectorXd diff = y - x;
    SampleTerms t;
    t.l1 = diff.cwiseAbs().sum() / dim;
    const double ny = y.norm();
    const double nx = x.norm();
    const double dot = y.dot(x);
    const bool degenerate = ny < 1e-12 || nx < 1e-12;
    t.cosine = degenerate ? 1.0 : std::clamp(1.0 - dot / (ny * nx), 0.0, 2.0);
    if (grad != nullptr) {
        Eigen::VectorXd g = diff.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
        g *= w.l1 / dim;
        if (!degenerate) {
            g -= w.cosine * (x / (ny * nx) - dot * y / (ny * ny * ny * nx));
        }
        *grad = std::move(g);
    }
    return t;
}

std::vector<DenseLayer> zeros_like(const std::vector<DenseLayer>& stack) {
    std::vector<DenseLayer> out;
    out.reserve(stack.size());
    for (const DenseLayer& l : stack) {
        out.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()), Eigen::VectorXd::Zero(l.bias.size())});
    }
    return out;
}

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

} // namespace

void AutoencoderParams::validate() const {
    if (input_dim == 0 || latent_dim == 0) {
        throw FormatError("autoencoder dimensions must be positive");
    }
    if (encoder.empty() || decoder.empty()) {
        throw FormatError("autoencoder needs at least one encoder and one decoder layer");
    }
    auto check_stack = [](const std::vector<DenseLayer>& stack, std::uint32_t in, std::uint32_t out, const char* name) {
        Eigen::Index prev = in;
        for (std::size_t i = 0; i < stack.size(); ++i) {
            const DenseLayer& l = stack[i];
            if (l.weight.cols() != prev || l.bias.size() != l.weight.rows()) {
                throw FormatError(std::string(name) + " layer " + std::to_string(i) + " has inconsistent shape");
            }
            if (!l.weight.allFinite() || !l.bias.allFinite()) {
                throw FormatError(std::string(name) + " layer " + std::to_string(i) + " has non-finite weights");
            }
            prev = l.weight.rows();
        }
        if (prev != static_cast<Eigen::Index>(out)) {
            throw FormatError(std::string(name) + " output width does not match");
        }
    };
    check_stack(encoder, input_dim, latent_dim, "encoder");
    check_stack(decoder, latent_dim, input_dim, "decoder");
}

std::size_t AutoencoderParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto* stack : {&encoder, &decoder}) {
        for (const DenseLayer& l : *stack) {
            n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        }
    }
    return n;
}

void AutoencoderParams::round_to_float() {
    for (auto* stack : {&encoder, &decoder}) {
        for (DenseLayer& l : *stack) {
            l.weight = l.weight.unaryExpr(&round_f32);
            l.bias = l.bias.unaryExpr(&round_f32);
        }
    }
}

AutoencoderParams init_autoencoder(std::uint32_t input_dim, std::uint32_t latent_dim, const AutoencoderArch& arch,
                                   std::uint64_t seed) {
    if (input_dim == 0 || latent_dim == 0) {
        throw ConfigError("autoencoder dimensions must be positive");
    }
    for (std::uint32_t h : arch.hidden) {
        if (h == 0 || h == latent_dim) {
            throw ConfigError("hidden widths must be positive and differ from the latent dimension");
        }
    }
    AutoencoderParams p;
    p.input_dim = input_dim;
    p.latent_dim = latent_dim;

    std::vector<std::uint32_t> enc_widths{input_dim};
    enc_widths.insert(enc_widths.end(), arch.hidden.begin(), arch.hidden.end());
    enc_widths.push_back(latent_dim);
    std::vector<std::uint32_t> dec_widths(enc_widths.rbegin(), enc_widths.rend());

    std::mt19937_64 rng(seed);
    auto make_stack = [&](const std::vector<std::uint32_t>& widths) {
        std::vector<DenseLayer> stack;
        for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
            const Eigen::Index in = widths[i];
            const Eigen::Index out = widths[i + 1];
            DenseLayer l{Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)};
            if (arch.init == AutoencoderInit::identity) {
                l.weight.setIdentity();
            } else {
                std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(in)));
                for (Eigen::Index c = 0; c < in; ++c) {
                    for (Eigen::Index r = 0; r < out; ++r) {
                        l.weight(r, c) = dist(rng);
                    }
                }
            }
            stack.push_back(std::move(l));
        }
        return stack;
    };
    p.encoder = make_stack(enc_widths);
    p.decoder = make_stack(dec_widths);
    p.round_to_float();
    return p;
}

Eigen::MatrixXd encode_batch(const AutoencoderParams& params, const Eigen::MatrixXd& x) {
    check_rows(x, params.input_dim, "encode");
    return run_stack(params.encoder, x);
}

Eigen::MatrixXd decode_batch(const AutoencoderParams& params, const Eigen::MatrixXd& h) {
    check_rows(h, params.latent_dim, "decode");
    return run_stack(params.decoder, h);
}

std::vector<double> encode(const AutoencoderParams& params, std::span<const double> x) {
    const Eigen::MatrixXd in = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    const Eigen::MatrixXd out = encode_batch(params, in);
    return {out.data(), out.data() + out.size()};
}

std::vector<double> decode(const AutoencoderParams& params, std::span<const double> h) {
    const Eigen::MatrixXd in = Eigen::Map<const Eigen::VectorXd>(h.data(), static_cast<Eigen::Index>(h.size()));
    const Eigen::MatrixXd out = decode_batch(params, in);
    return {out.data(), out.data() + out.size()};
}

AeLoss ae_loss(const AutoencoderParams& params, const Eigen::MatrixXd& batch, const AeLossWeights& w) {
    if (batch.cols() == 0) {
        throw ShapeError("ae_loss needs a non-empty batch");
    }
    const Eigen::MatrixXd recon = decode_batch(params, encode_batch(params, batch));
    AeLoss loss;
    for (Eigen::Index s = 0; s < batch.cols(); ++s) {
        const SampleTerms t = sample_terms(recon.col(s), batch.col(s), w, nullptr);
        loss.l1 += t.l1;
        loss.cosine += t.cosine;
    }
    const double n = static_cast<double>(batch.cols());
    loss.l1 /= n;
    loss.cosine /= n;
    loss.total = w.l1 * loss.l1 + w.cosine * loss.cosine;
    return loss;
}

AeGradients ae_loss_and_gradients(const AutoencoderParams& params, const Eigen::MatrixXd& batch,
                                  const AeLossWeights& w) {
    if (batch.cols() == 0) {
        throw ShapeError("ae_loss needs a non-empty batch");
    }
    check_rows(batch, params.input_dim, "ae_loss");

    // Forward, keeping every activation: layers = encoder then decoder.
    std::vector<const DenseLayer*> layers;
    std::vector<bool> relu;
    for (std::size_t i = 0; i < params.encoder.size(); ++i) {
        layers.push_back(&params.encoder[i]);
        relu.push_back(i + 1 < params.encoder.size());
    }
    for (std::size_t i = 0; i < params.decoder.size(); ++i) {
        layers.push_back(&params.decoder[i]);
        relu.push_back(i + 1 < params.decoder.size());
    }
    std::vector<Eigen::MatrixXd> acts{batch};
    for (std::size_t i = 0; i < layers.size(); ++i) {
        acts.push_back(forward_layer(*layers[i], acts.back(), relu[i]));
    }
    const Eigen::MatrixXd& recon = acts.back();

    AeGradients out;
    const double n = static_cast<double>(batch.cols());
    Eigen::MatrixXd delta(recon.rows(), recon.cols());
    for (Eigen::Index s = 0; s < batch.cols(); ++s) {
        Eigen::VectorXd g;
        const SampleTerms t = sample_terms(recon.col(s), batch.col(s), w, &g);
        out.loss.l1 += t.l1;
        out.loss.cosine += t.cosine;
        delta.col(s) = g / n;
    }
    out.loss.l1 /= n;
    out.loss.cosine /= n;
    out.loss.total = w.l1 * out.loss.l1 + w.cosine * out.loss.cosine;

    std::vector<DenseLayer> grads(layers.size());
    for (std::size_t i = layers.size(); i-- > 0;) {
        if (relu[i]) {
            delta = delta.cwiseProduct((acts[i + 1].array() > 0.0).cast<double>().matrix());
        }
        grads[i].weight.noalias() = delta * acts[i].transpose();
        grads[i].bias = delta.rowwise().sum();
        if (i > 0) {
            delta = layers[i]->weight.transpose() * delta;
        }
    }
    out.encoder.assign(grads.begin(), grads.begin() + static_cast<std::ptrdiff_t>(params.encoder.size()));
    out.decoder.assign(grads.begin() + static_cast<std::ptrdiff_t>(params.encoder.size()), grads.end());
    return out;
}

namespace {

struct AdamState {
    std::vector<DenseLayer> m_enc, v_enc, m_dec, v_dec;
    std::uint64_t step = 0;
};

void adam_update(std::vector<DenseLayer>& params, const std::vector<DenseLayer>& grads, std::vector<DenseLayer>& m,
                 std::vector<DenseLayer>& v, const AeTrainConfig& cfg, double lr, std::uint64_t step) {
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    auto apply = [&](auto& p, const auto& g, auto& mm, auto& vv) {
        mm = cfg.beta1 * mm + (1.0 - cfg.beta1) * g;
        vv = cfg.beta2 * vv + (1.0 - cfg.beta2) * g.cwiseAbs2();
        p.array() -= lr * (mm.array() / c1) / ((vv.array() / c2).sqrt() + cfg.eps);
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
        apply(params[i].weight, grads[i].weight, m[i].weight, v[i].weight);
        apply(params[i].bias, grads[i].bias, m[i].bias, v[i].bias);
    }
}

std::size_t count_distinct(const Eigen::MatrixXd& data) {
    std::set<std::vector<double>> seen;
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
        seen.emplace(data.col(c).data(), data.col(c).data() + data.rows());
    }
    return seen.size();
}

} // namespace

AeTrainReport train_autoencoder(AutoencoderParams& params, const Eigen::MatrixXd& data, const AeTrainConfig& cfg) {
    params.validate();
    check_rows(data, params.input_dim, "train_autoencoder");
    if (data.cols() == 0) {
        throw ShapeError("train_autoencoder needs at least one embedding");
    }
    if (cfg.batch_size == 0) {
        throw ConfigError("batch_size must be >= 1");
    }
    if (!data.allFinite()) {
        throw NumericalError("training embeddings contain non-finite values");
    }

    AeTrainReport report;
    report.distinct_samples = count_distinct(data);
    if (report.distinct_samples == 1) {
        log::warn("autoencoder training data is degenerate: all embeddings are identical");
    } else if (report.distinct_samples < params.latent_dim) {
        log::warn("autoencoder training data has fewer distinct embeddings (" +
                  std::to_string(report.distinct_samples) + ") than the latent dimension");
    }

    AdamState adam;
    adam.m_enc = adam.v_enc = zeros_like(params.encoder);
    adam.m_dec = adam.v_dec = zeros_like(params.decoder);

    report.initial = ae_loss(params, data, cfg.weights);
    AeLoss best = report.initial;
    AutoencoderParams best_params = params;
    AdamState best_adam = adam;
    double lr = cfg.lr;

    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(data.cols()));
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = static_cast<Eigen::Index>(i);
    }

    for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates on raw engine output keeps the permutation library-independent.
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng() % i]);
        }
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            Eigen::MatrixXd batch(data.rows(), static_cast<Eigen::Index>(end - start));
            for (std::size_t j = start; j < end; ++j) {
                batch.col(static_cast<Eigen::Index>(j - start)) = data.col(order[j]);
            }
            const AeGradients g = ae_loss_and_gradients(params, batch, cfg.weights);
            ++adam.step;
            adam_update(params.encoder, g.encoder, adam.m_enc, adam.v_enc, cfg, lr, adam.step);
            adam_update(params.decoder, g.decoder, adam.m_dec, adam.v_dec, cfg, lr, adam.step);
        }

        AeEpoch rec;
        const AeLoss current = ae_loss(params, data, cfg.weights);
        if (!std::isfinite(current.total)) {
            throw NumericalError("autoencoder loss became non-finite at epoch " + std::to_string(epoch));
        }
        if (current.total > best.total) {
            params = best_params;
            adam = best_adam;
            rec.rejected = true;
            rec.lr = lr;
            lr *= 0.5;
        } else {
            best = current;
            best_params = params;
            best_adam = adam;
            rec.lr = lr;
        }
        rec.loss = best;
        report.epochs.push_back(rec);
    }

    params.round_to_float();
    report.final_cosine_distance = ae_loss(params, data, cfg.weights).cosine;
    return report;
}

std::pair<AutoencoderParams, AeTrainReport> train_autoencoder(const Eigen::MatrixXd& data, std::uint32_t latent_dim,
                                                              const AeTrainConfig& cfg) {
    AutoencoderParams params =
        init_autoencoder(static_cast<std::uint32_t>(data.rows()), latent_dim, cfg.arch, cfg.seed);
    AeTrainReport report = train_autoencoder(params, data, cfg);
    return {std::move(params), std::move(report)};
}

void save_autoencoder(const AutoencoderParams& params, const std::filesystem::path& path) {
    params.validate();
    detail::BinaryWriter out;
    out.magic("LAEP");
    out.put<std::uint32_t>(params.input_dim);
    out.put<std::uint32_t>(params.latent_dim);
    out.put<std::uint32_t>(static_cast<std::uint32_t>(params.encoder.size() + params.decoder.size()));
    for (const auto* stack : {&params.encoder, &params.decoder}) {
        for (const DenseLayer& l : *stack) {
            out.put<std::uint32_t>(static_cast<std::uint32_t>(l.weight.rows()));
            out.put<std::uint32_t>(static_cast<std::uint32_t>(l.weight.cols()));
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
                    out.put(static_cast<float>(l.weight(r, c)));
                }
            }
            for (Eigen::Index r = 0; r < l.bias.size(); ++r) {
                out.put(static_cast<float>(l.bias(r)));
            }
        }
    }
    out.write_file(path);
}

AutoencoderParams load_autoencoder(const std::filesystem::path& path) {
    detail::BinaryReader in(path);
    in.expect_magic("LAEP");
    AutoencoderParams p;
    p.input_dim = in.get<std::uint32_t>();
    p.latent_dim = in.get<std::uint32_t>();
    const auto n_layers = in.get<std::uint32_t>();
    bool in_decoder = false;
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        const auto rows = in.get<std::uint32_t>();
        const auto cols = in.get<std::uint32_t>();
        if (in.remaining() / sizeof(float) < std::size_t{rows} * cols + rows) {
            throw FormatError(in.name() + ": truncated file in layer " + std::to_string(i));
        }
        DenseLayer l{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
                l.weight(r, c) = in.get<float>();
            }
        }
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) {
            l.bias(r) = in.get<float>();
        }
        (in_decoder ? p.decoder : p.encoder).push_back(std::move(l));
        // The encoder ends at the first layer producing the latent width.
        if (!in_decoder && rows == p.latent_dim) {
            in_decoder = true;
        }
    }
    if (in.remaining() != 0) {
        throw FormatError(in.name() + ": trailing bytes after last layer");
    }
    try {
        p.validate();
    } catch (const FormatError& e) {
        throw FormatError(in.name() + ": " + e.what());
    }
    return p;
}

} // namespace langfield
