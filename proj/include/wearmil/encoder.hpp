#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wearmil/common.hpp"
#include "wearmil/raster.hpp"

namespace wearmil::encoder {

inline constexpr std::size_t kBranchDim = 96;
inline constexpr std::size_t kEmbeddingDim = 2 * kBranchDim;
inline constexpr double kLayerNormEps = 1e-5;

struct Embedding {
    std::vector<float> values;  // kEmbeddingDim entries
    Modality modality = Modality::Ecg;
    ViewKind view = ViewKind::Recurrence;
    std::string patient_id;
    Timestamp instant{};
    Timestamp span_end{};
};

/// Affine-free layer normalisation with population variance.
std::vector<double> layer_norm(std::span<const double> x, double eps = kLayerNormEps);

/// Gating module g: ELU -> linear (dim x dim) -> Hardtanh(0, 1).
struct GateParams {
    std::size_t dim = kBranchDim;
    std::vector<double> weight;  // dim x dim, row-major
    std::vector<double> bias;    // dim

    static GateParams constant(double bias_value, std::size_t dim = kBranchDim);
    /// Weights U(-1/sqrt(dim), 1/sqrt(dim)), biases U(0.25, 0.75).
    static GateParams seeded(std::uint64_t seed, std::size_t dim = kBranchDim);
};

std::vector<double> gate(std::span<const double> z, const GateParams& p);

/// An image -> vector map with a stable identity. Implementations must be
/// deterministic and safe to call concurrently.
class SubEncoder {
public:
    virtual ~SubEncoder() = default;
    virtual std::string id() const = 0;
    virtual std::size_t dim() const = 0;
    virtual std::vector<double> encode(const Raster& image) const = 0;
};

/// 4x4 average pooling to 56x56, a seeded +-1/sqrt(3136) projection, tanh.
class ReferenceSubEncoder final : public SubEncoder {
public:
    explicit ReferenceSubEncoder(std::uint64_t seed, std::size_t out_dim = kBranchDim);
    std::string id() const override;
    std::size_t dim() const override { return out_dim_; }
    std::vector<double> encode(const Raster& image) const override;

private:
    std::uint64_t seed_;
    std::size_t out_dim_;
    std::vector<double> projection_;  // out_dim x 3136
};

/// LN_k(z_k) * g_k(z_k) per branch, concatenated (before the output norm).
std::vector<double> fuse_pre_norm(std::span<const double> z1, std::span<const double> z2,
                                  const GateParams& g1, const GateParams& g2);
/// LN_out of fuse_pre_norm.
std::vector<double> fuse(std::span<const double> z1, std::span<const double> z2,
                         const GateParams& g1, const GateParams& g2);

/// Two sub-encoders behind an input norm, branch norms, gates and an
/// output norm producing the 192-d instance embedding.
class InstanceEncoder {
public:
    InstanceEncoder(std::shared_ptr<const SubEncoder> branch1, std::shared_ptr<const SubEncoder> branch2,
                    GateParams gate1, GateParams gate2);

    /// Reference configuration: both branches and both gates seeded from
    /// `seed` through derived sub-seeds.
    static InstanceEncoder reference(std::uint64_t seed);

    Embedding encode(const InstanceImage& img) const;
    std::vector<double> encode_values(const Raster& pixels) const;

    const SubEncoder& branch1() const { return *branch1_; }
    const SubEncoder& branch2() const { return *branch2_; }
    const GateParams& gate1() const { return gate1_; }
    const GateParams& gate2() const { return gate2_; }

private:
    std::shared_ptr<const SubEncoder> branch1_, branch2_;
    GateParams gate1_, gate2_;
};

/// Sub-encoder outputs computed by an external process: little-endian
/// float32 n x d matrix plus a JSON sidecar {n, d, encoder_id}.
struct ExternalFeatures {
    std::string encoder_id;
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<float> values;
    std::span<const float> row(std::size_t i) const { return {values.data() + i * d, d}; }
};
ExternalFeatures read_external_features(const std::filesystem::path& f32_path);
void write_external_features(const std::filesystem::path& f32_path, const ExternalFeatures& f);

/// Embeds one instance from two precomputed branch vectors.
std::vector<double> fuse_external(std::span<const float> z1, std::span<const float> z2,
                                  const GateParams& g1, const GateParams& g2);

}  // namespace wearmil::encoder
