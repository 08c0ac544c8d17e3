#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wearmil/bags.hpp"
#include "wearmil/common.hpp"

namespace wearmil::mil {

/// Allocator for buffers handed to vectorised kernels. A fixed base
/// alignment keeps their summation order independent of where the heap
/// happens to place them, so results do not vary between threads.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};
using AlignedDoubles = std::vector<double, AlignedAllocator<double>>;

struct MilShapes {
    std::size_t input = 192;
    std::size_t proj_hidden = 256;
    std::size_t proj_out = 256;
    std::size_t attn_hidden = 128;
    std::size_t head_hidden = 128;
    std::size_t modalities = 3;

    std::size_t parameter_count() const;
    bool operator==(const MilShapes&) const = default;
};

enum class Group : int {
    ModalityTable,
    LnGain,
    LnBias,
    Proj1W,
    Proj1B,
    Proj2W,
    Proj2B,
    Attn1W,
    Attn1B,
    Attn2W,
    Attn2B,
    Head1W,
    Head1B,
    Head2W,
    Head2B,
};
inline constexpr int kGroupCount = 15;
std::string_view group_name(Group g);

/// Every learnable weight in one flat buffer. Weights are row-major
/// (out x in). Any mutable access bumps `version`, which invalidates traces
/// recorded against earlier values.
class MilParams {
public:
    explicit MilParams(const MilShapes& shapes = {});

    /// Linear layers U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and
    /// biases; LN gain 1, bias 0; modality table 0.
    static MilParams init(const MilShapes& shapes, std::uint64_t seed);

    const MilShapes& shapes() const { return shapes_; }
    std::size_t parameter_count() const { return data_.size(); }
    std::uint64_t version() const { return version_; }

    std::span<const double> data() const { return data_; }
    std::span<double> data() {
        ++version_;
        return data_;
    }
    std::span<const double> group(Group g) const;
    std::span<double> group(Group g);
    std::size_t group_offset(Group g) const { return offsets_[static_cast<int>(g)]; }
    std::size_t group_size(Group g) const { return sizes_[static_cast<int>(g)]; }

    // L2 norm per group, for diagnostics.
    std::array<double, kGroupCount> group_norms() const;

private:
    MilShapes shapes_;
    AlignedDoubles data_;
    std::array<std::size_t, kGroupCount> offsets_{};
    std::array<std::size_t, kGroupCount> sizes_{};
    std::uint64_t version_ = 0;
};

struct Dropout {
    double p = 0.15;
    std::uint64_t seed = 0;
};

/// Cached intermediates of one bag's forward pass.
struct ForwardTrace {
    double prediction = 0.0;
    std::vector<double> attention;  // alpha, one per instance
    std::vector<double> logits;
    std::vector<double> pooled;     // attention-weighted sum of h

    struct Cache;
    std::shared_ptr<const Cache> cache;
    const MilParams* params = nullptr;
    std::uint64_t version = 0;
};

/// Eval mode when `dropout` is null; train mode draws inverted-dropout
/// masks from dropout->seed.
ForwardTrace forward(const bags::Bag& b, const MilParams& p, const Dropout* dropout = nullptr);
double predict(const bags::Bag& b, const MilParams& p);

enum class Loss { Mse, Huber };
Loss parse_loss(std::string_view s);
std::string_view loss_name(Loss l);
double loss(double yhat, double y, Loss kind = Loss::Mse);
double loss_derivative(double yhat, double y, Loss kind = Loss::Mse);
double batch_loss(std::span<const std::pair<double, double>> pairs, Loss kind = Loss::Mse);

/// Adds scale * d(prediction)/d(theta) into `grad`. Throws std::logic_error
/// when the trace was recorded against another parameter state.
void accumulate_gradient(const ForwardTrace& t, const MilParams& p, double scale, std::span<double> grad);
/// Gradient of loss(prediction, target) for one bag.
std::vector<double> backward(const ForwardTrace& t, const MilParams& p, double target, Loss kind = Loss::Mse);

enum class TargetScaling { Standardize, None };
TargetScaling parse_target_scaling(std::string_view s);
std::string_view target_scaling_name(TargetScaling t);

struct TrainConfig {
    double lr0 = 5e-4;
    double weight_decay = 1e-4;
    int max_epochs = 150;
    int patience = 15;
    int warmup_epochs = 10;
    std::size_t batch_bags = 8;
    double dropout = 0.15;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    Loss loss = Loss::Mse;
    TargetScaling target_scaling = TargetScaling::Standardize;
    MilShapes shapes;
    std::uint64_t seed = 0;

    void validate() const;
};

double lr_at(int epoch, const TrainConfig& c);

/// AdamW with decoupled weight decay applied before the moment update.
class AdamW {
public:
    AdamW(std::size_t n, double beta1, double beta2, double eps, double weight_decay);
    void step(std::span<double> theta, std::span<const double> grad, double lr);
    std::uint64_t steps() const { return t_; }

private:
    double beta1_, beta2_, eps_, wd_;
    std::uint64_t t_ = 0;
    std::vector<double> m_, v_;
};

struct HistoryRow {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_rmse = 0.0;
};

/// Parameters plus the affine map from model output to PSS units.
struct TrainedModel {
    MilParams params;
    double target_mean = 0.0;
    double target_scale = 1.0;
    int best_epoch = 0;
    double best_val_rmse = 0.0;
    std::uint64_t seed = 0;

    double predict(const bags::Bag& b) const;
};

struct TrainResult {
    TrainedModel model;
    std::vector<HistoryRow> history;
};

/// Optional observer called with the bags of each training batch.
using BatchObserver = std::function<void(int epoch, std::size_t batch, std::span<const bags::Bag* const>)>;

TrainResult train(std::span<const bags::Bag> train_bags, std::span<const bags::Bag> val_bags,
                  const TrainConfig& c, const BatchObserver& observer = {});

double rmse(std::span<const bags::Bag> bags, const TrainedModel& m);

// "WMC1", uint32 LE header length, JSON header, float64 LE parameters.
void write_checkpoint(const std::filesystem::path& path, const TrainedModel& m);
TrainedModel read_checkpoint(const std::filesystem::path& path);
void write_history_csv(const std::filesystem::path& path, std::span<const HistoryRow> h);

}  // namespace wearmil::mil
