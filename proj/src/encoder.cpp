#include "wearmil/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace wearmil::encoder {

namespace {

constexpr std::size_t kPool = 4;
constexpr std::size_t kPooledSide = kRasterSide / kPool;  // 56
constexpr std::size_t kPooledLen = kPooledSide * kPooledSide;

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }

}  // namespace

std::vector<double> layer_norm(std::span<const double> x, double eps) {
    if (x.size() < 2) throw ArgumentError("layer_norm needs at least 2 elements");
    const double n = static_cast<double>(x.size());
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv;
    return out;
}

GateParams GateParams::constant(double bias_value, std::size_t dim) {
    GateParams p;
    p.dim = dim;
    p.weight.assign(dim * dim, 0.0);
    p.bias.assign(dim, bias_value);
    return p;
}

GateParams GateParams::seeded(std::uint64_t seed, std::size_t dim) {
    GateParams p;
    p.dim = dim;
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    p.weight.resize(dim * dim);
    for (double& w : p.weight) w = rng.uniform(-bound, bound);
    p.bias.resize(dim);
    for (double& b : p.bias) b = rng.uniform(0.25, 0.75);
    return p;
}

std::vector<double> gate(std::span<const double> z, const GateParams& p) {
    if (z.size() != p.dim || p.weight.size() != p.dim * p.dim || p.bias.size() != p.dim)
        throw ConfigError("gate dimensions do not match its input");
    std::vector<double> act(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) act[i] = elu(z[i]);
    std::vector<double> out(p.dim);
    for (std::size_t r = 0; r < p.dim; ++r) {
        double s = p.bias[r];
        const double* w = p.weight.data() + r * p.dim;
        for (std::size_t c = 0; c < p.dim; ++c) s += w[c] * act[c];
        out[r] = std::clamp(s, 0.0, 1.0);
    }
    return out;
}

ReferenceSubEncoder::ReferenceSubEncoder(std::uint64_t seed, std::size_t out_dim)
    : seed_(seed), out_dim_(out_dim), projection_(out_dim * kPooledLen) {
    Rng rng(seed);
    const double mag = 1.0 / std::sqrt(static_cast<double>(kPooledLen));
    for (std::size_t i = 0; i < projection_.size(); i += 64) {
        std::uint64_t bits = rng.next_u64();
        for (std::size_t b = 0; b < 64 && i + b < projection_.size(); ++b)
            projection_[i + b] = ((bits >> b) & 1u) ? mag : -mag;
    }
}

std::string ReferenceSubEncoder::id() const {
    return "reference-avgpool4-randproj-tanh/seed=" + std::to_string(seed_);
}

std::vector<double> ReferenceSubEncoder::encode(const Raster& image) const {
    if (image.rows() != kRasterSide || image.cols() != kRasterSide)
        throw ArgumentError("reference sub-encoder expects a 224x224 raster");
    // A single-channel raster replicated to three channels pools to the same
    // values, so the replication is implicit here.
    std::vector<double> pooled(kPooledLen, 0.0);
    for (std::size_t r = 0; r < kPooledSide; ++r)
        for (std::size_t c = 0; c < kPooledSide; ++c) {
            double s = 0.0;
            for (std::size_t dr = 0; dr < kPool; ++dr)
                for (std::size_t dc = 0; dc < kPool; ++dc) s += image(r * kPool + dr, c * kPool + dc);
            pooled[r * kPooledSide + c] = s / static_cast<double>(kPool * kPool);
        }
    std::vector<double> out(out_dim_);
    for (std::size_t k = 0; k < out_dim_; ++k) {
        const double* w = projection_.data() + k * kPooledLen;
        double s = 0.0;
        for (std::size_t i = 0; i < kPooledLen; ++i) s += w[i] * pooled[i];
        out[k] = std::tanh(s);
    }
    return out;
}

std::vector<double> fuse_pre_norm(std::span<const double> z1, std::span<const double> z2,
                                  const GateParams& g1, const GateParams& g2) {
    if (z1.size() != kBranchDim || z2.size() != kBranchDim)
        throw ConfigError("sub-encoder output dimension must be " + std::to_string(kBranchDim));
    std::vector<double> cat;
    cat.reserve(kEmbeddingDim);
    for (auto [z, g] : {std::pair{z1, &g1}, std::pair{z2, &g2}}) {
        const auto normed = layer_norm(z);
        const auto gated = gate(z, *g);
        for (std::size_t i = 0; i < kBranchDim; ++i) cat.push_back(normed[i] * gated[i]);
    }
    return cat;
}

std::vector<double> fuse(std::span<const double> z1, std::span<const double> z2, const GateParams& g1,
                         const GateParams& g2) {
    return layer_norm(fuse_pre_norm(z1, z2, g1, g2));
}

std::vector<double> fuse_external(std::span<const float> z1, std::span<const float> z2,
                                  const GateParams& g1, const GateParams& g2) {
    std::vector<double> a(z1.begin(), z1.end()), b(z2.begin(), z2.end());
    return fuse(a, b, g1, g2);
}

InstanceEncoder::InstanceEncoder(std::shared_ptr<const SubEncoder> branch1,
                                 std::shared_ptr<const SubEncoder> branch2, GateParams gate1,
                                 GateParams gate2)
    : branch1_(std::move(branch1)), branch2_(std::move(branch2)), gate1_(std::move(gate1)),
      gate2_(std::move(gate2)) {
    if (!branch1_ || !branch2_) throw ConfigError("instance encoder needs two sub-encoders");
    if (branch1_->dim() != kBranchDim || branch2_->dim() != kBranchDim)
        throw ConfigError("sub-encoder output dimension must be " + std::to_string(kBranchDim));
    if (gate1_.dim != kBranchDim || gate2_.dim != kBranchDim)
        throw ConfigError("gate dimension must be " + std::to_string(kBranchDim));
}

InstanceEncoder InstanceEncoder::reference(std::uint64_t seed) {
    return InstanceEncoder(std::make_shared<ReferenceSubEncoder>(derive_seed(seed, "encoder/branch1")),
                           std::make_shared<ReferenceSubEncoder>(derive_seed(seed, "encoder/branch2")),
                           GateParams::seeded(derive_seed(seed, "encoder/gate1")),
                           GateParams::seeded(derive_seed(seed, "encoder/gate2")));
}

std::vector<double> InstanceEncoder::encode_values(const Raster& pixels) const {
    Raster normed(pixels.rows(), pixels.cols());
    const auto flat = layer_norm(pixels.values());
    std::copy(flat.begin(), flat.end(), normed.values().begin());
    const auto z1 = branch1_->encode(normed);
    const auto z2 = branch2_->encode(normed);
    return fuse(z1, z2, gate1_, gate2_);
}

Embedding InstanceEncoder::encode(const InstanceImage& img) const {
    const auto v = encode_values(img.pixels);
    Embedding e;
    e.values.assign(v.begin(), v.end());
    e.modality = img.modality;
    e.view = img.view;
    e.patient_id = img.patient_id;
    e.instant = img.instant;
    e.span_end = img.span_end;
    return e;
}

ExternalFeatures read_external_features(const std::filesystem::path& f32_path) {
    auto sidecar = f32_path;
    sidecar.replace_extension(".json");
    std::ifstream meta_in(sidecar);
    if (!meta_in) throw DataError("missing sidecar '" + sidecar.string() + "'");
    ExternalFeatures f;
    try {
        const auto j = nlohmann::json::parse(meta_in);
        f.n = j.at("n").get<std::size_t>();
        f.d = j.at("d").get<std::size_t>();
        f.encoder_id = j.at("encoder_id").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed sidecar '" + sidecar.string() + "': " + e.what());
    }
    if (f.d != kBranchDim)
        throw ConfigError("external encoder '" + f.encoder_id + "' has d=" + std::to_string(f.d) +
                          ", expected " + std::to_string(kBranchDim));
    std::ifstream in(f32_path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + f32_path.string() + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() != f.n * f.d * 4)
        throw FormatError("external feature matrix size does not match n*d", bytes.size());
    f.values.resize(f.n * f.d);
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
        std::memcpy(&f.values[i], &bits, 4);
    }
    return f;
}

void write_external_features(const std::filesystem::path& f32_path, const ExternalFeatures& f) {
    std::ofstream out(f32_path, std::ios::binary);
    for (float v : f.values) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        for (int b = 0; b < 4; ++b) out.put(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
    auto sidecar = f32_path;
    sidecar.replace_extension(".json");
    std::ofstream meta(sidecar);
    meta << nlohmann::json{{"n", f.n}, {"d", f.d}, {"encoder_id", f.encoder_id}}.dump(2) << "\n";
    if (!out || !meta) throw DataError("cannot write '" + f32_path.string() + "'");
}

}  // namespace wearmil::encoder
