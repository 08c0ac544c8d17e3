#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "helpers.hpp"
#include "wearmil/weekly.hpp"

using namespace wearmil;
using namespace wearmil::weekly;

namespace {

const double kNan = std::nan("");

WeeklyMatrix matrix(std::size_t features, std::vector<double> values) {
    WeeklyMatrix m;
    m.n_features = features;
    m.week_start = make_date(2024, 2, 5);
    m.values = std::move(values);
    m.mask.resize(m.values.size());
    for (std::size_t i = 0; i < m.values.size(); ++i) m.mask[i] = !std::isnan(m.values[i]);
    m.empty_rows.assign(features, 0);
    return m;
}

std::vector<double> row(const WeeklyMatrix& m, std::size_t f) {
    return {m.values.begin() + static_cast<long>(f * 7), m.values.begin() + static_cast<long>(f * 7 + 7)};
}

Timestamp at(int day, int hour, int minute = 0) {
    return at_midnight(make_date(2024, 2, 5) + std::chrono::days{day}) + std::chrono::hours{hour} +
           std::chrono::minutes{minute};
}

}  // namespace

TEST_CASE("week_position") {
    const Date b = make_date(2024, 1, 10);
    CHECK(week_position(b, b) == WeekPosition{0, 0});
    CHECK(week_position(b + std::chrono::days{13}, b) == WeekPosition{1, 6});
    CHECK(week_position(b + std::chrono::days{14}, b) == WeekPosition{2, 0});
    // Bijective over a year of days.
    std::set<std::pair<int, int>> seen;
    for (int d = 0; d < 365; ++d) {
        const auto p = week_position(b + std::chrono::days{d}, b);
        CHECK(p.week * 7 + p.column == d);
        seen.insert({p.week, p.column});
    }
    CHECK(seen.size() == 365);
}

TEST_CASE("align_weeks places values and leaves gaps as NaN") {
    const Date b = make_date(2024, 1, 1);
    std::vector<DatedValues> recs = {{b, {1.0}}, {b + std::chrono::days{9}, {2.0}}, {b + std::chrono::days{20}, {3.0}}};
    const auto weeks = align_weeks(recs, b, 1, "P");
    REQUIRE(weeks.size() == 3);
    CHECK(weeks[0].at(0, 0) == 1.0);
    CHECK(weeks[1].at(0, 2) == 2.0);
    CHECK(weeks[2].at(0, 6) == 3.0);
    CHECK(std::isnan(weeks[0].at(0, 1)));
    CHECK_FALSE(weeks[0].present(0, 1));
    CHECK(weeks[2].week_start == b + std::chrono::days{14});
}

TEST_CASE("filter_and_impute") {
    // Five of seven days absent: 71% missing.
    auto sparse = matrix(2, {1, kNan, kNan, kNan, kNan, kNan, 2, 3, kNan, kNan, kNan, kNan, kNan, 4});
    CHECK_FALSE(filter_and_impute(sparse).ok());

    auto r = filter_and_impute(matrix(1, {2, kNan, 4, kNan, 6, kNan, kNan}));
    REQUIRE(r.ok());
    const double direct = (2.0 + 4.0 + 6.0) / 3.0;
    CHECK(row(r.value(), 0) == std::vector<double>{2, direct, 4, direct, 6, direct, direct});
    // Imputed cells keep their "missing" mask entries.
    CHECK(r.value().mask == std::vector<std::uint8_t>{1, 0, 1, 0, 1, 0, 0});

    const auto full = matrix(1, {1, 2, 3, 4, 5, 6, 7});
    auto f = filter_and_impute(full);
    REQUIRE(f.ok());
    CHECK(f.value().values == full.values);
    CHECK(std::all_of(f.value().mask.begin(), f.value().mask.end(), [](auto v) { return v == 1; }));

    // 21 of 35 cells missing is exactly 60%: retained. A row with no
    // observations is zero-filled and flagged.
    std::vector<double> v(35, 1.0);
    for (int i = 0; i < 7; ++i) v[static_cast<std::size_t>(i)] = kNan;
    for (int i = 7; i < 21; ++i) v[static_cast<std::size_t>(7 + i)] = kNan;
    auto edge = filter_and_impute(matrix(5, v));
    REQUIRE(edge.ok());
    CHECK(edge.value().empty_rows[0] == 1);
    CHECK(row(edge.value(), 0) == std::vector<double>(7, 0.0));
    v[34] = kNan;
    CHECK_FALSE(filter_and_impute(matrix(5, v)).ok());
}

TEST_CASE("day-level missingness counts fully missing days") {
    auto m = matrix(2, {kNan, kNan, kNan, kNan, 1, 1, 1, kNan, kNan, 1, 1, 1, 1, 1});
    // Cells: 6/14 missing. Days with no value at all: 2/7.
    CHECK(m.missing_fraction(false) == doctest::Approx(6.0 / 14.0));
    CHECK(m.missing_fraction(true) == doctest::Approx(2.0 / 7.0));
    WeekRules day_rules;
    day_rules.unit = MissingUnit::Day;
    day_rules.max_missing_fraction = 0.35;
    CHECK(filter_and_impute(m, day_rules).ok());
    WeekRules cell_rules;
    cell_rules.max_missing_fraction = 0.35;
    CHECK_FALSE(filter_and_impute(m, cell_rules).ok());
    CHECK(parse_missing_unit("day") == MissingUnit::Day);
    CHECK_THROWS_AS(parse_missing_unit("week"), ConfigError);
}

TEST_CASE("zscore_week") {
    const auto z = zscore_week(matrix(2, {5, 5, 5, 5, 5, 5, 5, 1, 2, 3, 4, 5, 6, 7}));
    CHECK(row(z, 0) == std::vector<double>(7, 0.0));
    const auto r1 = row(z, 1);
    // Direct z-scores of 1..7: mean 4, population sd 2.
    for (int i = 0; i < 7; ++i) CHECK(r1[static_cast<std::size_t>(i)] == doctest::Approx((i + 1 - 4.0) / 2.0).epsilon(1e-15));
    CHECK(std::abs(testutil::mean(r1)) < 1e-12);
    CHECK(testutil::pop_sd(r1) == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(4);
    std::vector<double> vals(21);
    for (auto& v : vals) v = rng.normal(3.0, 2.0);
    const auto once = zscore_week(matrix(3, vals));
    const auto twice = zscore_week(once);
    for (std::size_t i = 0; i < 21; ++i) CHECK(std::abs(once.values[i] - twice.values[i]) < 1e-9);
    for (std::size_t f = 0; f < 3; ++f) CHECK(std::abs(testutil::mean(row(once, f))) < 1e-9);
}

TEST_CASE("render_heatmap") {
    const auto zero = render_heatmap(matrix(5, std::vector<double>(35, 0.0)), Modality::Activity);
    CHECK(std::all_of(zero.pixels.values().begin(), zero.pixels.values().end(), [](double v) { return v == 0.5; }));
    CHECK(zero.modality == Modality::Activity);
    CHECK(zero.view == ViewKind::ActivityHeatmap);

    std::vector<double> v(35);
    for (std::size_t i = 0; i < 35; ++i) v[i] = static_cast<double>(i);
    const auto m = matrix(5, v);
    const auto img = render_heatmap(m, Modality::Sleep);
    CHECK(img.modality == Modality::Sleep);
    CHECK(img.instant == at_midnight(m.week_start));
    CHECK(img.span_end == at_midnight(m.week_start + std::chrono::days{8}));
    // Nearest-neighbour blocks: output row r shows source row floor(5r/224).
    for (std::size_t f = 0; f < 5; ++f) {
        const std::size_t r0 = (f * 224 + 4) / 5, r1 = ((f + 1) * 224 + 4) / 5;
        CHECK(r1 - r0 >= 44);
        CHECK(r1 - r0 <= 45);
        for (std::size_t c = 0; c < 7; ++c)
            for (std::size_t r = r0; r < r1; ++r)
                for (std::size_t x = c * 32; x < c * 32 + 32; ++x)
                    REQUIRE(img.pixels(r, x) == doctest::Approx(static_cast<double>(f * 7 + c) / 34.0));
    }
    CHECK(img.pixels(223, 223) == 1.0);
    CHECK(render_heatmap(m, Modality::Activity).span_end == at_midnight(m.week_start + std::chrono::days{7}));
}

TEST_CASE("hypnogram_image") {
    SleepEpochSeries one{"P", make_date(2024, 2, 5), {{at(0, 23), at(1, 7), SleepStage::Light}}};
    const auto h = hypnogram_image(one);
    REQUIRE(h.ok());
    const std::size_t line = hypnogram_row(SleepStage::Light);
    for (std::size_t r = 0; r < 224; ++r)
        for (std::size_t c = 0; c < 224; ++c) {
            const bool on = r + 1 >= line && r <= line + 1;
            REQUIRE(h.value().pixels(r, c) == (on ? 1.0 : 0.0));
        }
    CHECK(h.value().modality == Modality::Sleep);

    SleepEpochSeries two{"P", make_date(2024, 2, 5),
                         {{at(0, 23), at(1, 3), SleepStage::Deep}, {at(1, 3), at(1, 7), SleepStage::Rem}}};
    const auto s = hypnogram_image(two);
    REQUIRE(s.ok());
    const std::size_t deep = hypnogram_row(SleepStage::Deep), rem = hypnogram_row(SleepStage::Rem);
    CHECK(deep > rem);
    // The vertical step connecting the two levels sits at the time midpoint.
    std::size_t step_col = 0;
    for (std::size_t c = 0; c < 224; ++c)
        if (s.value().pixels((deep + rem) / 2, c) == 1.0) step_col = c;
    CHECK(std::abs(static_cast<long>(step_col) - 112) <= 1);
    CHECK(s.value().pixels(deep, 10) == 1.0);
    CHECK(s.value().pixels(rem, 200) == 1.0);

    SleepEpochSeries none{"P", make_date(2024, 2, 5), {}};
    CHECK_FALSE(hypnogram_image(none).ok());
    for (int k = 1; k < 5; ++k)
        CHECK(hypnogram_row(static_cast<SleepStage>(k)) < hypnogram_row(static_cast<SleepStage>(k - 1)));
}

TEST_CASE("weekly_heatmaps logs retained and excluded weeks") {
    const Date b = make_date(2024, 1, 1);
    std::vector<DatedValues> recs;
    for (int d = 0; d < 7; ++d) recs.push_back({b + std::chrono::days{d}, {1.0 + d, 2.0 * d}});
    recs.push_back({b + std::chrono::days{8}, {1.0, 1.0}});
    std::vector<WeekLog> log;
    const auto imgs = weekly_heatmaps("P", recs, b, 2, Modality::Activity, {}, &log);
    REQUIRE(log.size() == 2);
    CHECK(log[0].retained);
    CHECK_FALSE(log[1].retained);
    CHECK(log[1].missing_fraction == doctest::Approx(6.0 / 7.0));
    REQUIRE(imgs.size() == 1);
    CHECK(imgs[0].patient_id == "P");
}

TEST_CASE("watch files round-trip") {
    const auto dir = testutil::scratch("weekly_io");
    ActivityTable t;
    t.feature_names = {"steps", "floors"};
    t.records = {{"P001", make_date(2024, 1, 1), {1200.5, kNan}}, {"P002", make_date(2024, 1, 3), {0.0, 3.0}}};
    write_activity_csv(dir / "a.csv", t);
    const auto back = read_activity_csv(dir / "a.csv");
    CHECK(back.feature_names == t.feature_names);
    REQUIRE(back.records.size() == 2);
    CHECK(back.records[0].features[0] == 1200.5);
    CHECK(std::isnan(back.records[0].features[1]));
    CHECK(back.records[1].date == make_date(2024, 1, 3));

    std::vector<SleepNightRecord> nights = {{"P001", make_date(2024, 1, 1), 25200, 600, 5400, 14400, 4800}};
    write_sleep_csv(dir / "s.csv", nights);
    const auto n = read_sleep_csv(dir / "s.csv");
    REQUIRE(n.size() == 1);
    CHECK(n[0].as_features() == nights[0].as_features());

    std::vector<SleepEpochSeries> eps = {
        {"P001", make_date(2024, 2, 5), {{at(0, 23), at(0, 23, 30), SleepStage::Awake}, {at(0, 23, 30), at(1, 6), SleepStage::Deep}}}};
    write_epochs_jsonl(dir / "e.jsonl", eps);
    const auto e = read_epochs_jsonl(dir / "e.jsonl");
    REQUIRE(e.size() == 1);
    REQUIRE(e[0].epochs.size() == 2);
    CHECK(e[0].epochs[1].stage == SleepStage::Deep);
    CHECK(e[0].epochs[1].end == at(1, 6));
    CHECK(e[0].night_date == make_date(2024, 2, 5));
}
