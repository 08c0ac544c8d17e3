#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "wearmil/mil.hpp"

using namespace wearmil;
using namespace wearmil::mil;

namespace {

MilShapes small_shapes() {
    MilShapes s;
    s.input = 6;
    s.proj_hidden = 5;
    s.proj_out = 5;
    s.attn_hidden = 4;
    s.head_hidden = 4;
    return s;
}

std::vector<double> softmax_oracle(const std::vector<double>& l) {
    const double m = *std::max_element(l.begin(), l.end());
    double z = 0.0;
    for (double v : l) z += std::exp(v - m);
    std::vector<double> out;
    for (double v : l) out.push_back(std::exp(v - m) / z);
    return out;
}

// Bags whose target follows the mean of the first embedding coordinate.
std::vector<bags::Bag> toy_bags(std::size_t count, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<bags::Bag> out;
    for (std::size_t i = 0; i < count; ++i) {
        auto b = testutil::random_bag(rng, 3 + i % 4, dim, "T" + std::to_string(i));
        const double shift = rng.uniform(-1.0, 1.0);
        double s = 0.0;
        for (std::size_t r = 0; r < b.size(); ++r) {
            b.embeddings[r * dim] += static_cast<float>(2.0 * shift);
            s += b.embeddings[r * dim];
        }
        b.target = 20.0 + 8.0 * s / static_cast<double>(b.size());
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace

TEST_CASE("parameter layout") {
    const MilShapes s;
    CHECK(s.parameter_count() == 182210);
    const MilParams p(s);
    CHECK(p.parameter_count() == 182210);
    CHECK(p.group_size(Group::ModalityTable) == 3 * 192);
    CHECK(p.group_size(Group::Proj1W) == 256 * 192);
    CHECK(p.group_size(Group::Head2B) == 1);
    std::size_t total = 0;
    for (int g = 0; g < kGroupCount; ++g) total += p.group_size(static_cast<Group>(g));
    CHECK(total == 182210);

    const auto q = MilParams::init(s, 3);
    const auto gain = q.group(Group::LnGain);
    CHECK(std::all_of(gain.begin(), gain.end(), [](double v) { return v == 1.0; }));
    const auto table = q.group(Group::ModalityTable);
    CHECK(std::all_of(table.begin(), table.end(), [](double v) { return v == 0.0; }));
    const double bound = 1.0 / std::sqrt(192.0);
    const auto w = q.group(Group::Proj1W);
    CHECK(std::all_of(w.begin(), w.end(), [&](double v) { return std::abs(v) <= bound; }));
}

TEST_CASE("attention weights") {
    const auto p = MilParams::init(MilShapes{}, 1);
    Rng rng(2);
    auto one = testutil::random_bag(rng, 1);
    const auto t1 = forward(one, p);
    REQUIRE(t1.attention.size() == 1);
    CHECK(t1.attention[0] == 1.0);

    auto twin = testutil::random_bag(rng, 2);
    std::copy(twin.row(0).begin(), twin.row(0).end(), twin.embeddings.begin() + 192);
    twin.modality_ids[1] = twin.modality_ids[0];
    const auto t2 = forward(twin, p);
    CHECK(std::abs(t2.attention[0] - 0.5) < 1e-9);
    CHECK(std::abs(t2.attention[1] - 0.5) < 1e-9);

    // Amplified attention output spreads the logits; alpha must still be
    // their softmax.
    auto rigged = p;
    for (double& v : rigged.group(Group::Attn2W)) v *= 40.0;
    const auto three = testutil::random_bag(rng, 3);
    const auto t3 = forward(three, rigged);
    const auto expected = softmax_oracle(t3.logits);
    CHECK(*std::max_element(t3.logits.begin(), t3.logits.end()) - *std::min_element(t3.logits.begin(), t3.logits.end()) > 0.5);
    for (std::size_t i = 0; i < 3; ++i) CHECK(t3.attention[i] == doctest::Approx(expected[i]).epsilon(1e-12));

    // Zeroed attention output gives uniform weights.
    auto flat = p;
    for (double& v : flat.group(Group::Attn2W)) v = 0.0;
    for (double a : forward(three, flat).attention) CHECK(a == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    bags::Bag empty;
    CHECK_THROWS_AS(forward(empty, p), ArgumentError);
}

TEST_CASE("loss") {
    CHECK(loss(20, 20) == 0.0);
    CHECK(loss(18, 20) == 4.0);
    const std::vector<std::pair<double, double>> batch = {{18, 20}, {20, 20}};
    CHECK(batch_loss(batch) == 2.0);
    CHECK(loss_derivative(18, 20) == -4.0);
    CHECK(loss(20, 23, Loss::Huber) == doctest::Approx(2.5));
    CHECK(loss(20, 20.5, Loss::Huber) == doctest::Approx(0.125));
    CHECK(parse_loss("huber") == Loss::Huber);
}

TEST_CASE("gradients") {
    const auto p = MilParams::init(MilShapes{}, 4);
    Rng rng(6);
    auto b = testutil::random_bag(rng, 7);
    for (auto& m : b.modality_ids) m = m == 2 ? 0 : m;
    const auto t = forward(b, p);

    const auto zero = backward(t, p, t.prediction);
    CHECK(std::all_of(zero.begin(), zero.end(), [](double g) { return g == 0.0; }));

    const auto g = backward(t, p, t.prediction + 3.0);
    const std::size_t off = p.group_offset(Group::ModalityTable) + 2 * 192;
    for (std::size_t i = 0; i < 192; ++i) REQUIRE(g[off + i] == 0.0);
    CHECK(std::any_of(g.begin() + static_cast<long>(p.group_offset(Group::ModalityTable)),
                      g.begin() + static_cast<long>(off), [](double v) { return v != 0.0; }));
}

TEST_CASE("finite-difference check on reduced shapes") {
    const auto shapes = small_shapes();
    Rng rng(12);
    auto p = MilParams::init(shapes, 9);
    for (double& v : p.data()) v += 0.1 * rng.normal();
    auto b = testutil::random_bag(rng, 5, shapes.input);
    const double target = 0.7;
    const auto t = forward(b, p);
    const auto g = backward(t, p, target);
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t i = 0; i < p.parameter_count(); ++i) {
        auto plus = p, minus = p;
        plus.data()[i] += h;
        minus.data()[i] -= h;
        const double fd = (loss(predict(b, plus), target) - loss(predict(b, minus), target)) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-6}));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("stale traces are refused") {
    auto p = MilParams::init(small_shapes(), 1);
    Rng rng(1);
    const auto b = testutil::random_bag(rng, 3, 6);
    const auto t = forward(b, p);
    p.data()[0] += 1.0;
    CHECK_THROWS_AS(backward(t, p, 1.0), std::logic_error);
}

TEST_CASE("learning-rate schedule") {
    const TrainConfig c;
    CHECK(lr_at(0, c) == doctest::Approx(5e-5));
    CHECK(lr_at(9, c) == doctest::Approx(5e-4).epsilon(1e-15));
    CHECK(lr_at(10, c) == doctest::Approx(5e-4).epsilon(1e-15));
    CHECK(lr_at(149, c) == doctest::Approx(5e-4 * 0.5 * (1.0 + std::cos(139.0 * std::numbers::pi / 140.0))).epsilon(1e-12));
    CHECK(lr_at(149, c) == doctest::Approx(6.3e-8).epsilon(0.01));
    CHECK_THROWS_AS(lr_at(150, c), ArgumentError);
}

TEST_CASE("training") {
    TrainConfig c;
    c.shapes = small_shapes();
    c.max_epochs = 60;
    c.warmup_epochs = 3;
    c.patience = 10;
    c.lr0 = 1e-2;
    c.batch_bags = 4;
    c.seed = 5;
    const auto toy = toy_bags(10, 6, 3);
    const auto a = train(toy, toy, c);
    const auto b = train(toy, toy, c);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].val_rmse == b.history[i].val_rmse);
    }
    CHECK(std::equal(a.model.params.data().begin(), a.model.params.data().end(), b.model.params.data().begin()));

    TrainedModel initial = a.model;
    initial.params = MilParams::init(c.shapes, derive_seed(c.seed, "mil/init"));
    CHECK(a.model.best_val_rmse < rmse(toy, initial));
    CHECK(a.model.best_val_rmse == doctest::Approx(rmse(toy, a.model)));

    const int k = a.history.back().epoch;
    CHECK(a.history.size() == static_cast<std::size_t>(k + 1));
    if (k + 1 < c.max_epochs) CHECK(a.model.best_epoch <= k - c.patience);
}

TEST_CASE("patience stops training") {
    TrainConfig c;
    c.shapes = small_shapes();
    c.max_epochs = 80;
    c.warmup_epochs = 1;
    c.patience = 3;
    c.lr0 = 1e-5;
    c.seed = 2;
    // Validation targets unrelated to the inputs plateau quickly.
    auto tr = toy_bags(6, 6, 1);
    auto val = toy_bags(4, 6, 99);
    for (auto& v : val) v.target = 100.0;
    const auto r = train(tr, val, c);
    const int k = r.history.back().epoch;
    REQUIRE(k + 1 < c.max_epochs);
    CHECK(r.history.size() == static_cast<std::size_t>(k + 1));
    CHECK(r.model.best_epoch == k - c.patience);
}

TEST_CASE("checkpoint round-trip") {
    const auto dir = testutil::scratch("ckpt");
    TrainedModel m;
    m.params = MilParams::init(small_shapes(), 8);
    m.target_mean = 17.25;
    m.target_scale = 6.5;
    m.best_epoch = 4;
    m.best_val_rmse = 3.125;
    m.seed = 77;
    write_checkpoint(dir / "m.wmc", m);
    const auto back = read_checkpoint(dir / "m.wmc");
    CHECK(back.params.shapes() == m.params.shapes());
    CHECK(std::equal(back.params.data().begin(), back.params.data().end(), m.params.data().begin()));
    CHECK(back.target_mean == 17.25);
    CHECK(back.target_scale == 6.5);
    CHECK(back.best_epoch == 4);
    CHECK(back.seed == 77);
    Rng rng(3);
    const auto b = testutil::random_bag(rng, 4, 6);
    CHECK(back.predict(b) == m.predict(b));
    CHECK_THROWS_AS(read_checkpoint(dir / "absent.wmc"), DataError);
}
