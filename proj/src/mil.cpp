#include "wearmil/mil.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace wearmil::mil {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using CMatMap = Eigen::Map<const Mat>;
using MatMap = Eigen::Map<Mat>;
using CVecMap = Eigen::Map<const Vec>;
using VecMap = Eigen::Map<Vec>;

constexpr double kLnEps = 1e-5;

struct GroupShape {
    std::size_t rows, cols;
};

std::array<GroupShape, kGroupCount> group_shapes(const MilShapes& s) {
    return {{
        {s.modalities, s.input},
        {1, s.input},
        {1, s.input},
        {s.proj_hidden, s.input},
        {1, s.proj_hidden},
        {s.proj_out, s.proj_hidden},
        {1, s.proj_out},
        {s.attn_hidden, s.proj_out},
        {1, s.attn_hidden},
        {1, s.attn_hidden},
        {1, 1},
        {s.head_hidden, s.proj_out},
        {1, s.head_hidden},
        {1, s.head_hidden},
        {1, 1},
    }};
}

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

}  // namespace

struct ForwardTrace::Cache {
    std::vector<std::uint8_t> modality;
    Mat xhat;
    Vec inv_std;
    Mat u, a1, mask1, d1, h, s;
    Vec g1, mask2, d2;
    bool train = false;
};

std::size_t MilShapes::parameter_count() const {
    std::size_t n = 0;
    for (const auto& g : group_shapes(*this)) n += g.rows * g.cols;
    return n;
}

std::string_view group_name(Group g) {
    static constexpr std::string_view names[kGroupCount] = {
        "modality_table", "ln_gain", "ln_bias",  "proj1_w", "proj1_b", "proj2_w", "proj2_b", "attn1_w",
        "attn1_b",        "attn2_w", "attn2_b",  "head1_w", "head1_b", "head2_w", "head2_b"};
    return names[static_cast<int>(g)];
}

MilParams::MilParams(const MilShapes& shapes) : shapes_(shapes) {
    const auto gs = group_shapes(shapes);
    std::size_t off = 0;
    for (int i = 0; i < kGroupCount; ++i) {
        offsets_[i] = off;
        sizes_[i] = gs[i].rows * gs[i].cols;
        if (sizes_[i] == 0) throw ConfigError("MIL shapes must be positive");
        off += sizes_[i];
    }
    data_.assign(off, 0.0);
}

MilParams MilParams::init(const MilShapes& shapes, std::uint64_t seed) {
    MilParams p(shapes);
    Rng rng(seed);
    {
        auto g = p.group(Group::LnGain);
        std::fill(g.begin(), g.end(), 1.0);
    }
    const std::pair<Group, std::size_t> linear[] = {
        {Group::Proj1W, shapes.input},     {Group::Proj1B, shapes.input},
        {Group::Proj2W, shapes.proj_hidden}, {Group::Proj2B, shapes.proj_hidden},
        {Group::Attn1W, shapes.proj_out},  {Group::Attn1B, shapes.proj_out},
        {Group::Attn2W, shapes.attn_hidden}, {Group::Attn2B, shapes.attn_hidden},
        {Group::Head1W, shapes.proj_out},  {Group::Head1B, shapes.proj_out},
        {Group::Head2W, shapes.head_hidden}, {Group::Head2B, shapes.head_hidden},
    };
    for (auto [g, fan_in] : linear) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : p.group(g)) v = rng.uniform(-bound, bound);
    }
    return p;
}

std::span<const double> MilParams::group(Group g) const {
    return std::span<const double>(data_).subspan(group_offset(g), group_size(g));
}

std::span<double> MilParams::group(Group g) {
    ++version_;
    return std::span<double>(data_).subspan(group_offset(g), group_size(g));
}

std::array<double, kGroupCount> MilParams::group_norms() const {
    std::array<double, kGroupCount> out{};
    for (int i = 0; i < kGroupCount; ++i) {
        double s = 0.0;
        for (double v : group(static_cast<Group>(i))) s += v * v;
        out[i] = std::sqrt(s);
    }
    return out;
}

ForwardTrace forward(const bags::Bag& b, const MilParams& p, const Dropout* dropout) {
    const MilShapes& S = p.shapes();
    const std::size_t n = b.size();
    if (n == 0) throw ArgumentError("forward on an empty bag");
    if (b.dim != S.input || b.embeddings.size() != n * b.dim)
        throw ArgumentError("bag " + b.id() + " has dimension " + std::to_string(b.dim) + ", model expects " +
                            std::to_string(S.input));
    for (auto m : b.modality_ids)
        if (m >= S.modalities) throw ArgumentError("modality id out of range in bag " + b.id());
    const bool train = dropout && dropout->p > 0.0;

    auto c = std::make_shared<ForwardTrace::Cache>();
    c->modality = b.modality_ids;
    c->train = train;
    const auto V = CMatMap(p.group(Group::ModalityTable).data(), S.modalities, S.input);
    const auto gain = CVecMap(p.group(Group::LnGain).data(), S.input);
    const auto bias = CVecMap(p.group(Group::LnBias).data(), S.input);

    c->xhat.resize(n, S.input);
    c->inv_std.resize(n);
    c->u.resize(n, S.input);
    for (std::size_t i = 0; i < n; ++i) {
        const float* x = b.embeddings.data() + i * S.input;
        double mean = 0.0;
        for (std::size_t k = 0; k < S.input; ++k) mean += x[k];
        mean /= static_cast<double>(S.input);
        double var = 0.0;
        for (std::size_t k = 0; k < S.input; ++k) var += (x[k] - mean) * (x[k] - mean);
        var /= static_cast<double>(S.input);
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        c->inv_std[static_cast<Eigen::Index>(i)] = inv;
        for (std::size_t k = 0; k < S.input; ++k) {
            const double xh = (x[k] - mean) * inv;
            c->xhat(i, k) = xh;
            c->u(i, k) = xh * gain[k] + bias[k] + V(b.modality_ids[i], k);
        }
    }

    std::unique_ptr<Rng> rng;
    const double keep_scale = train ? 1.0 / (1.0 - dropout->p) : 1.0;
    if (train) rng = std::make_unique<Rng>(dropout->seed);

    const auto W1 = CMatMap(p.group(Group::Proj1W).data(), S.proj_hidden, S.input);
    const auto b1 = CVecMap(p.group(Group::Proj1B).data(), S.proj_hidden);
    c->a1.noalias() = c->u * W1.transpose();
    c->a1.rowwise() += b1.transpose();
    c->d1 = c->a1.unaryExpr(&elu);
    if (train) {
        c->mask1.resize(n, S.proj_hidden);
        for (Eigen::Index i = 0; i < c->mask1.size(); ++i)
            c->mask1.data()[i] = rng->uniform() < dropout->p ? 0.0 : keep_scale;
        c->d1.array() *= c->mask1.array();
    }

    const auto W2 = CMatMap(p.group(Group::Proj2W).data(), S.proj_out, S.proj_hidden);
    const auto b2 = CVecMap(p.group(Group::Proj2B).data(), S.proj_out);
    c->h.noalias() = c->d1 * W2.transpose();
    c->h.rowwise() += b2.transpose();

    const auto A1 = CMatMap(p.group(Group::Attn1W).data(), S.attn_hidden, S.proj_out);
    const auto ab1 = CVecMap(p.group(Group::Attn1B).data(), S.attn_hidden);
    const auto a2 = CVecMap(p.group(Group::Attn2W).data(), S.attn_hidden);
    const double ab2 = p.group(Group::Attn2B)[0];
    c->s.noalias() = c->h * A1.transpose();
    c->s.rowwise() += ab1.transpose();
    c->s = c->s.array().tanh();
    Vec logits = c->s * a2;
    logits.array() += ab2;

    ForwardTrace t;
    t.logits.assign(logits.data(), logits.data() + n);
    const double mx = logits.maxCoeff();
    t.attention.resize(n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += (t.attention[i] = std::exp(t.logits[i] - mx));
    for (double& a : t.attention) a /= z;

    const Vec alpha = CVecMap(t.attention.data(), static_cast<Eigen::Index>(n));
    Vec pooled = c->h.transpose() * alpha;
    t.pooled.assign(pooled.data(), pooled.data() + pooled.size());

    const auto H1 = CMatMap(p.group(Group::Head1W).data(), S.head_hidden, S.proj_out);
    const auto hb1 = CVecMap(p.group(Group::Head1B).data(), S.head_hidden);
    const auto h2 = CVecMap(p.group(Group::Head2W).data(), S.head_hidden);
    c->g1 = H1 * pooled + hb1;
    c->d2 = c->g1.unaryExpr(&elu);
    if (train) {
        c->mask2.resize(static_cast<Eigen::Index>(S.head_hidden));
        for (Eigen::Index i = 0; i < c->mask2.size(); ++i)
            c->mask2[i] = rng->uniform() < dropout->p ? 0.0 : keep_scale;
        c->d2.array() *= c->mask2.array();
    }
    t.prediction = h2.dot(c->d2) + p.group(Group::Head2B)[0];
    t.cache = std::move(c);
    t.params = &p;
    t.version = p.version();
    return t;
}

double predict(const bags::Bag& b, const MilParams& p) { return forward(b, p).prediction; }

Loss parse_loss(std::string_view s) {
    if (s == "mse") return Loss::Mse;
    if (s == "huber") return Loss::Huber;
    throw ConfigError("loss must be 'mse' or 'huber', got '" + std::string(s) + "'");
}

std::string_view loss_name(Loss l) { return l == Loss::Mse ? "mse" : "huber"; }

double loss(double yhat, double y, Loss kind) {
    const double r = yhat - y;
    if (kind == Loss::Mse) return r * r;
    return std::abs(r) <= 1.0 ? 0.5 * r * r : std::abs(r) - 0.5;
}

double loss_derivative(double yhat, double y, Loss kind) {
    const double r = yhat - y;
    if (kind == Loss::Mse) return 2.0 * r;
    return std::clamp(r, -1.0, 1.0);
}

double batch_loss(std::span<const std::pair<double, double>> pairs, Loss kind) {
    if (pairs.empty()) throw ArgumentError("batch loss of an empty batch");
    double s = 0.0;
    for (auto [yhat, y] : pairs) s += loss(yhat, y, kind);
    return s / static_cast<double>(pairs.size());
}

void accumulate_gradient(const ForwardTrace& t, const MilParams& p, double scale, std::span<double> grad) {
    if (!t.cache || t.params != &p || t.version != p.version())
        throw std::logic_error("stale forward trace: parameters changed since the forward pass");
    if (grad.size() != p.parameter_count()) throw ArgumentError("gradient buffer has the wrong size");
    if (reinterpret_cast<std::uintptr_t>(grad.data()) % 64 != 0) {
        AlignedDoubles tmp(grad.size(), 0.0);
        accumulate_gradient(t, p, scale, tmp);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += tmp[i];
        return;
    }
    const MilShapes& S = p.shapes();
    const auto& c = *t.cache;
    const auto n = static_cast<Eigen::Index>(t.attention.size());
    auto G = [&](Group g) { return grad.data() + p.group_offset(g); };

    const auto h2 = CVecMap(p.group(Group::Head2W).data(), S.head_hidden);
    const auto H1 = CMatMap(p.group(Group::Head1W).data(), S.head_hidden, S.proj_out);
    const auto a2 = CVecMap(p.group(Group::Attn2W).data(), S.attn_hidden);
    const auto A1 = CMatMap(p.group(Group::Attn1W).data(), S.attn_hidden, S.proj_out);
    const auto W2 = CMatMap(p.group(Group::Proj2W).data(), S.proj_out, S.proj_hidden);
    const auto W1 = CMatMap(p.group(Group::Proj1W).data(), S.proj_hidden, S.input);
    const Vec alpha = CVecMap(t.attention.data(), n);
    const Vec pooled = CVecMap(t.pooled.data(), static_cast<Eigen::Index>(S.proj_out));

    // Regression head.
    G(Group::Head2B)[0] += scale;
    VecMap(G(Group::Head2W), S.head_hidden) += scale * c.d2;
    Vec dg1 = scale * h2;
    if (c.train) dg1.array() *= c.mask2.array();
    dg1.array() *= c.g1.unaryExpr(&elu_grad).array();
    MatMap(G(Group::Head1W), S.head_hidden, S.proj_out).noalias() += dg1 * pooled.transpose();
    VecMap(G(Group::Head1B), S.head_hidden) += dg1;
    const Vec dz = H1.transpose() * dg1;

    // Attention pooling and scorer.
    const Vec dalpha = c.h * dz;
    const double dot = alpha.dot(dalpha);
    const Vec dl = alpha.array() * (dalpha.array() - dot);
    G(Group::Attn2B)[0] += dl.sum();
    VecMap(G(Group::Attn2W), S.attn_hidden).noalias() += c.s.transpose() * dl;
    Mat dpre = dl * a2.transpose();
    dpre.array() *= 1.0 - c.s.array().square();
    MatMap(G(Group::Attn1W), S.attn_hidden, S.proj_out).noalias() += dpre.transpose() * c.h;
    VecMap(G(Group::Attn1B), S.attn_hidden) += dpre.colwise().sum().transpose();
    Mat dh = alpha * dz.transpose();
    dh.noalias() += dpre * A1;

    // Projector.
    MatMap(G(Group::Proj2W), S.proj_out, S.proj_hidden).noalias() += dh.transpose() * c.d1;
    VecMap(G(Group::Proj2B), S.proj_out) += dh.colwise().sum().transpose();
    Mat da1 = dh * W2;
    if (c.train) da1.array() *= c.mask1.array();
    da1.array() *= c.a1.unaryExpr(&elu_grad).array();
    MatMap(G(Group::Proj1W), S.proj_hidden, S.input).noalias() += da1.transpose() * c.u;
    VecMap(G(Group::Proj1B), S.proj_hidden) += da1.colwise().sum().transpose();
    const Mat du = da1 * W1;

    // Instance norm and modality table.
    VecMap(G(Group::LnGain), S.input) += (du.array() * c.xhat.array()).colwise().sum().transpose().matrix();
    VecMap(G(Group::LnBias), S.input) += du.colwise().sum().transpose();
    auto V = MatMap(G(Group::ModalityTable), S.modalities, S.input);
    for (Eigen::Index i = 0; i < n; ++i) V.row(c.modality[static_cast<std::size_t>(i)]) += du.row(i);
}

std::vector<double> backward(const ForwardTrace& t, const MilParams& p, double target, Loss kind) {
    AlignedDoubles g(p.parameter_count(), 0.0);
    accumulate_gradient(t, p, loss_derivative(t.prediction, target, kind), g);
    return {g.begin(), g.end()};
}

TargetScaling parse_target_scaling(std::string_view s) {
    if (s == "standardize") return TargetScaling::Standardize;
    if (s == "none") return TargetScaling::None;
    throw ConfigError("target_scaling must be 'standardize' or 'none', got '" + std::string(s) + "'");
}

std::string_view target_scaling_name(TargetScaling t) {
    return t == TargetScaling::Standardize ? "standardize" : "none";
}

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
    if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    if (patience < 1 || patience >= max_epochs) throw ConfigError("patience must lie in [1, max_epochs)");
    if (warmup_epochs < 0 || warmup_epochs >= max_epochs) throw ConfigError("warmup_epochs must lie in [0, max_epochs)");
    if (batch_bags < 1) throw ConfigError("batch_bags must be at least 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
}

double lr_at(int epoch, const TrainConfig& c) {
    if (epoch < 0 || epoch >= c.max_epochs) throw ArgumentError("epoch outside [0, max_epochs)");
    if (epoch < c.warmup_epochs)
        return c.lr0 * (static_cast<double>(epoch + 1) / static_cast<double>(c.warmup_epochs));
    const double progress =
        static_cast<double>(epoch - c.warmup_epochs) / static_cast<double>(c.max_epochs - c.warmup_epochs);
    return c.lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(std::size_t n, double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay), m_(n, 0.0), v_(n, 0.0) {}

void AdamW::step(std::span<double> theta, std::span<const double> grad, double lr) {
    if (theta.size() != m_.size() || grad.size() != m_.size()) throw ArgumentError("AdamW size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        theta[i] -= lr * wd_ * theta[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
        theta[i] -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
    }
}

double TrainedModel::predict(const bags::Bag& b) const {
    return mil::predict(b, params) * target_scale + target_mean;
}

double rmse(std::span<const bags::Bag> bags, const TrainedModel& m) {
    if (bags.empty()) throw ArgumentError("RMSE over no bags");
    double s = 0.0;
    for (const auto& b : bags) {
        const double r = m.predict(b) - *b.target;
        s += r * r;
    }
    return std::sqrt(s / static_cast<double>(bags.size()));
}

namespace {

std::string norms_text(const MilParams& p) {
    std::ostringstream os;
    const auto norms = p.group_norms();
    for (int i = 0; i < kGroupCount; ++i)
        os << (i ? ", " : "") << group_name(static_cast<Group>(i)) << "=" << format_double(norms[i]);
    return os.str();
}

}  // namespace

TrainResult train(std::span<const bags::Bag> train_bags, std::span<const bags::Bag> val_bags,
                  const TrainConfig& c, const BatchObserver& observer) {
    c.validate();
    if (train_bags.empty() || val_bags.empty()) throw ArgumentError("training needs nonempty train and val sets");
    for (auto set : {train_bags, val_bags})
        for (const auto& b : set)
            if (!b.target) throw ArgumentError("bag " + b.id() + " has no target");

    TrainResult out;
    TrainedModel& best = out.model;
    best.seed = c.seed;
    if (c.target_scaling == TargetScaling::Standardize) {
        double mean = 0.0;
        for (const auto& b : train_bags) mean += *b.target;
        mean /= static_cast<double>(train_bags.size());
        double var = 0.0;
        for (const auto& b : train_bags) var += (*b.target - mean) * (*b.target - mean);
        var /= static_cast<double>(train_bags.size());
        best.target_mean = mean;
        best.target_scale = var > 1e-18 ? std::sqrt(var) : 1.0;
    }

    TrainedModel cur = best;
    cur.params = MilParams::init(c.shapes, derive_seed(c.seed, "mil/init"));
    AdamW opt(cur.params.parameter_count(), c.beta1, c.beta2, c.adam_eps, c.weight_decay);
    AlignedDoubles grad(cur.params.parameter_count());
    std::vector<std::size_t> order(train_bags.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<const bags::Bag*> batch;

    best.best_val_rmse = std::numeric_limits<double>::infinity();
    best.best_epoch = -1;
    for (int epoch = 0; epoch < c.max_epochs; ++epoch) {
        const double lr = lr_at(epoch, c);
        Rng shuf(derive_seed(c.seed, "mil/shuffle", static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuf.below(i)]);

        double loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += c.batch_bags, ++n_batches) {
            const std::size_t end = std::min(order.size(), start + c.batch_bags);
            batch.clear();
            for (std::size_t k = start; k < end; ++k) batch.push_back(&train_bags[order[k]]);
            if (observer) observer(epoch, n_batches, batch);
            std::fill(grad.begin(), grad.end(), 0.0);
            const double inv_b = 1.0 / static_cast<double>(batch.size());
            double bl = 0.0;
            for (std::size_t j = 0; j < batch.size(); ++j) {
                const Dropout drop{c.dropout, derive_seed(c.seed, "mil/dropout", static_cast<std::uint64_t>(epoch),
                                                          n_batches, j)};
                const auto tr = forward(*batch[j], cur.params, c.dropout > 0.0 ? &drop : nullptr);
                const double y = (*batch[j]->target - cur.target_mean) / cur.target_scale;
                bl += loss(tr.prediction, y, c.loss) * inv_b;
                accumulate_gradient(tr, cur.params, loss_derivative(tr.prediction, y, c.loss) * inv_b, grad);
            }
            const bool finite_grad = std::all_of(grad.begin(), grad.end(), [](double g) { return std::isfinite(g); });
            if (!std::isfinite(bl) || !finite_grad)
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(n_batches) + " (loss " + format_double(bl) +
                                   "); parameter norms: " + norms_text(cur.params));
            opt.step(cur.params.data(), grad, lr);
            loss_sum += bl;
        }

        const double val = rmse(val_bags, cur);
        if (!std::isfinite(val))
            throw NumericError("non-finite validation RMSE at epoch " + std::to_string(epoch) +
                               "; parameter norms: " + norms_text(cur.params));
        out.history.push_back({epoch, lr, loss_sum / static_cast<double>(n_batches), val});
        if (val < best.best_val_rmse) {
            best.params = cur.params;
            best.best_val_rmse = val;
            best.best_epoch = epoch;
        } else if (epoch - best.best_epoch >= c.patience) {
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'W', 'M', 'C', '1'};

nlohmann::json shapes_json(const MilShapes& s) {
    return {{"input", s.input},           {"proj_hidden", s.proj_hidden}, {"proj_out", s.proj_out},
            {"attn_hidden", s.attn_hidden}, {"head_hidden", s.head_hidden}, {"modalities", s.modalities}};
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const TrainedModel& m) {
    nlohmann::json h;
    h["shapes"] = shapes_json(m.params.shapes());
    h["seed"] = m.seed;
    h["epoch"] = m.best_epoch;
    h["val_rmse"] = m.best_val_rmse;
    h["target_mean"] = m.target_mean;
    h["target_scale"] = m.target_scale;
    h["parameter_count"] = m.params.parameter_count();
    const std::string text = h.dump();
    std::vector<char> bytes(kCkptMagic, kCkptMagic + 4);
    const auto len = static_cast<std::uint32_t>(text.size());
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((len >> (8 * i)) & 0xFF));
    bytes.insert(bytes.end(), text.begin(), text.end());
    for (double v : m.params.data()) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("cannot write '" + path.string() + "'");
}

TrainedModel read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (b.size() < 4 || std::memcmp(b.data(), kCkptMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
    if (b.size() < 8) throw FormatError("truncated checkpoint header", b.size());
    std::uint32_t hlen = 0;
    for (int i = 0; i < 4; ++i) hlen |= static_cast<std::uint32_t>(b[4 + i]) << (8 * i);
    if (8 + static_cast<std::size_t>(hlen) > b.size()) throw FormatError("truncated checkpoint header", b.size());
    TrainedModel m;
    MilShapes s;
    try {
        const auto h = nlohmann::json::parse(b.begin() + 8, b.begin() + 8 + hlen);
        const auto& js = h.at("shapes");
        s.input = js.at("input");
        s.proj_hidden = js.at("proj_hidden");
        s.proj_out = js.at("proj_out");
        s.attn_hidden = js.at("attn_hidden");
        s.head_hidden = js.at("head_hidden");
        s.modalities = js.at("modalities");
        m.seed = h.at("seed");
        m.best_epoch = h.at("epoch");
        m.best_val_rmse = h.at("val_rmse");
        m.target_mean = h.at("target_mean");
        m.target_scale = h.at("target_scale");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed checkpoint header: ") + e.what(), 8);
    }
    m.params = MilParams(s);
    const std::size_t off = 8 + hlen;
    if (b.size() - off != m.params.parameter_count() * 8)
        throw FormatError("checkpoint parameter blob does not match its shapes", off);
    auto data = m.params.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::uint64_t bits = 0;
        for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[off + 8 * i + k]) << (8 * k);
        std::memcpy(&data[i], &bits, 8);
    }
    return m;
}

void write_history_csv(const std::filesystem::path& path, std::span<const HistoryRow> h) {
    std::ofstream out(path);
    out << "epoch,lr,train_loss,val_rmse\n";
    for (const auto& r : h)
        out << r.epoch << ',' << format_double(r.lr) << ',' << format_double(r.train_loss) << ','
            << format_double(r.val_rmse) << '\n';
    if (!out) throw DataError("cannot write '" + path.string() + "'");
}

}  // namespace wearmil::mil
