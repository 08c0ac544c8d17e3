#include "wearmil/weekly.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace wearmil::weekly {

using nlohmann::json;

const std::vector<std::string> kDefaultActivityFeatures = {
    "steps", "active_minutes", "sedentary_minutes", "floors", "calories"};

const std::vector<std::string> kSleepFeatures = {"sleep_s", "unmeasurable_s", "deep_s", "light_s",
                                                 "rem_s"};

std::vector<double> SleepNightRecord::as_features() const {
    return {sleep_s, unmeasurable_s, deep_s, light_s, rem_s};
}

std::string_view stage_name(SleepStage s) {
    switch (s) {
        case SleepStage::Unmeasurable: return "unmeasurable";
        case SleepStage::Deep: return "deep";
        case SleepStage::Light: return "light";
        case SleepStage::Rem: return "rem";
        case SleepStage::Awake: return "awake";
    }
    return "?";
}

SleepStage parse_stage(std::string_view s) {
    for (auto st : {SleepStage::Unmeasurable, SleepStage::Deep, SleepStage::Light, SleepStage::Rem,
                    SleepStage::Awake})
        if (stage_name(st) == s) return st;
    throw DataError("unknown sleep stage '" + std::string(s) + "'");
}

WeekPosition week_position(Date day, Date baseline) {
    const auto offset = (day - baseline).count();
    if (offset < 0) throw ArgumentError("date precedes the patient baseline");
    return {static_cast<int>(offset / kDaysPerWeek), static_cast<int>(offset % kDaysPerWeek)};
}

double WeeklyMatrix::missing_fraction(bool count_days) const {
    if (n_features == 0) return 1.0;
    if (!count_days) {
        const auto missing = std::count(mask.begin(), mask.end(), std::uint8_t{0});
        return static_cast<double>(missing) / static_cast<double>(mask.size());
    }
    int missing_days = 0;
    for (int c = 0; c < kDaysPerWeek; ++c) {
        bool any = false;
        for (std::size_t f = 0; f < n_features; ++f) any = any || present(f, c);
        if (!any) ++missing_days;
    }
    return static_cast<double>(missing_days) / kDaysPerWeek;
}

std::vector<WeeklyMatrix> align_weeks(const std::vector<DatedValues>& records, Date baseline,
                                      std::size_t n_features, const std::string& patient_id) {
    std::map<int, WeeklyMatrix> weeks;
    for (const auto& rec : records) {
        if (rec.values.size() != n_features)
            throw DataError("record has " + std::to_string(rec.values.size()) +
                            " features, expected " + std::to_string(n_features));
        const auto pos = week_position(rec.date, baseline);
        auto [it, fresh] = weeks.try_emplace(pos.week);
        WeeklyMatrix& m = it->second;
        if (fresh) {
            m.patient_id = patient_id;
            m.week_index = pos.week;
            m.week_start = baseline + std::chrono::days{pos.week * kDaysPerWeek};
            m.n_features = n_features;
            m.values.assign(n_features * kDaysPerWeek, std::numeric_limits<double>::quiet_NaN());
            m.mask.assign(n_features * kDaysPerWeek, 0);
            m.empty_rows.assign(n_features, 0);
        }
        for (std::size_t f = 0; f < n_features; ++f) {
            if (std::isnan(rec.values[f])) continue;
            m.at(f, pos.column) = rec.values[f];
            m.mask[f * kDaysPerWeek + static_cast<std::size_t>(pos.column)] = 1;
        }
    }
    std::vector<WeeklyMatrix> out;
    out.reserve(weeks.size());
    for (auto& [_, m] : weeks) out.push_back(std::move(m));
    return out;
}

MissingUnit parse_missing_unit(std::string_view s) {
    if (s == "cell") return MissingUnit::Cell;
    if (s == "day") return MissingUnit::Day;
    throw ConfigError("missing-unit must be 'cell' or 'day', got '" + std::string(s) + "'");
}

std::string_view missing_unit_name(MissingUnit u) { return u == MissingUnit::Cell ? "cell" : "day"; }

Outcome<WeeklyMatrix> filter_and_impute(const WeeklyMatrix& week, const WeekRules& rules) {
    const double frac = week.missing_fraction(rules.unit == MissingUnit::Day);
    if (frac > rules.max_missing_fraction)
        return Outcome<WeeklyMatrix>::reject("missing fraction " + format_double(frac) +
                                             " exceeds " + format_double(rules.max_missing_fraction));
    WeeklyMatrix m = week;
    m.empty_rows.assign(m.n_features, 0);
    for (std::size_t f = 0; f < m.n_features; ++f) {
        double sum = 0.0;
        int count = 0;
        for (int c = 0; c < kDaysPerWeek; ++c)
            if (m.present(f, c)) {
                sum += m.at(f, c);
                ++count;
            }
        const double fill = count > 0 ? sum / count : 0.0;
        if (count == 0) m.empty_rows[f] = 1;
        for (int c = 0; c < kDaysPerWeek; ++c)
            if (!m.present(f, c)) m.at(f, c) = fill;
    }
    return m;
}

WeeklyMatrix zscore_week(const WeeklyMatrix& in) {
    WeeklyMatrix m = in;
    for (std::size_t f = 0; f < m.n_features; ++f) {
        double mean = 0.0;
        for (int c = 0; c < kDaysPerWeek; ++c) mean += m.at(f, c);
        mean /= kDaysPerWeek;
        double var = 0.0;
        for (int c = 0; c < kDaysPerWeek; ++c) var += (m.at(f, c) - mean) * (m.at(f, c) - mean);
        const double sd = std::sqrt(var / kDaysPerWeek);
        for (int c = 0; c < kDaysPerWeek; ++c) m.at(f, c) = sd > 0.0 ? (m.at(f, c) - mean) / sd : 0.0;
    }
    return m;
}

InstanceImage render_heatmap(const WeeklyMatrix& m, Modality modality) {
    if (modality == Modality::Ecg) throw ArgumentError("heatmaps are activity or sleep views");
    if (m.n_features == 0) throw ArgumentError("heatmap of an empty matrix");
    Raster src(m.n_features, kDaysPerWeek);
    std::copy(m.values.begin(), m.values.end(), src.values().begin());
    minmax_rescale(src.values());
    InstanceImage img;
    img.pixels = upsample_nearest(src, kRasterSide, kRasterSide);
    img.modality = modality;
    img.view = modality == Modality::Activity ? ViewKind::ActivityHeatmap : ViewKind::SleepHeatmap;
    img.instant = at_midnight(m.week_start);
    // A night dated on the last day runs into the following morning.
    const int span_days = kDaysPerWeek + (modality == Modality::Sleep ? 1 : 0);
    img.span_end = at_midnight(m.week_start + std::chrono::days{span_days});
    img.patient_id = m.patient_id;
    return img;
}

std::size_t hypnogram_row(SleepStage s) {
    const int level = static_cast<int>(s);
    constexpr int margin = 2;
    constexpr int span = static_cast<int>(kRasterSide) - 1 - 2 * margin;
    return static_cast<std::size_t>(margin + std::lround((4 - level) * span / 4.0));
}

std::size_t hypnogram_column(Timestamp t, Timestamp t0, Timestamp t1) {
    const double total = static_cast<double>((t1 - t0).count());
    const double frac = total > 0 ? static_cast<double>((t - t0).count()) / total : 0.0;
    return static_cast<std::size_t>(
        std::lround(std::clamp(frac, 0.0, 1.0) * static_cast<double>(kRasterSide - 1)));
}

Outcome<InstanceImage> hypnogram_image(const SleepEpochSeries& series) {
    const auto& ep = series.epochs;
    if (ep.empty()) return Outcome<InstanceImage>::reject("no sleep epochs");
    for (std::size_t i = 0; i < ep.size(); ++i) {
        if (ep[i].end < ep[i].start) throw DataError("sleep epoch ends before it starts");
        if (i > 0 && ep[i].start < ep[i - 1].end) throw DataError("sleep epochs overlap or are unordered");
    }
    const Timestamp t0 = ep.front().start, t1 = ep.back().end;
    Raster r(kRasterSide, kRasterSide);
    auto paint = [&](std::size_t row, std::size_t col) {
        for (int dr = -1; dr <= 1; ++dr) {
            const auto rr = static_cast<std::ptrdiff_t>(row) + dr;
            if (rr >= 0 && rr < static_cast<std::ptrdiff_t>(kRasterSide))
                r(static_cast<std::size_t>(rr), col) = 1.0;
        }
    };
    auto paint_vertical = [&](std::size_t col, std::size_t row_a, std::size_t row_b) {
        const std::size_t lo = std::min(row_a, row_b), hi = std::max(row_a, row_b);
        for (int dc = -1; dc <= 1; ++dc) {
            const auto cc = static_cast<std::ptrdiff_t>(col) + dc;
            if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(kRasterSide)) continue;
            for (std::size_t row = lo; row <= hi; ++row) r(row, static_cast<std::size_t>(cc)) = 1.0;
        }
    };
    for (std::size_t i = 0; i < ep.size(); ++i) {
        const std::size_t row = hypnogram_row(ep[i].stage);
        const std::size_t c0 = hypnogram_column(ep[i].start, t0, t1);
        const std::size_t c1 = hypnogram_column(ep[i].end, t0, t1);
        for (std::size_t c = c0; c <= c1; ++c) paint(row, c);
        if (i + 1 < ep.size() && ep[i + 1].stage != ep[i].stage)
            paint_vertical(hypnogram_column(ep[i + 1].start, t0, t1), row,
                           hypnogram_row(ep[i + 1].stage));
    }
    InstanceImage img;
    img.pixels = std::move(r);
    img.modality = Modality::Sleep;
    img.view = ViewKind::Hypnogram;
    img.instant = t0;
    img.span_end = t1;
    img.patient_id = series.patient_id;
    return img;
}

std::vector<InstanceImage> weekly_heatmaps(const std::string& patient_id,
                                           const std::vector<DatedValues>& records, Date baseline,
                                           std::size_t n_features, Modality modality,
                                           const WeekRules& rules, std::vector<WeekLog>* log) {
    std::vector<InstanceImage> images;
    for (const auto& week : align_weeks(records, baseline, n_features, patient_id)) {
        auto kept = filter_and_impute(week, rules);
        if (log)
            log->push_back({week.week_index, week.missing_fraction(rules.unit == MissingUnit::Day),
                            kept.ok()});
        if (!kept) continue;
        images.push_back(render_heatmap(zscore_week(kept.value()), modality));
    }
    return images;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_cell(const std::string& s) {
    if (s.empty() || s == "nan" || s == "NA") return std::numeric_limits<double>::quiet_NaN();
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw DataError("bad numeric cell '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        throw DataError("bad numeric cell '" + s + "'");
    }
}

std::string cell(double v) { return std::isnan(v) ? std::string{} : format_double(v); }

std::ifstream open_in(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw DataError("cannot open '" + p.string() + "'");
    return in;
}

}  // namespace

ActivityTable read_activity_csv(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty activity CSV '" + path.string() + "'");
    auto header = split_csv(line);
    if (header.size() < 3 || header[0] != "patient_id" || header[1] != "date")
        throw DataError("activity CSV header must be patient_id,date,<features...>");
    ActivityTable t;
    t.feature_names.assign(header.begin() + 2, header.end());
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split_csv(line);
        if (cells.size() != header.size()) throw DataError("activity CSV row has wrong width: " + line);
        DailyActivityRecord r;
        r.patient_id = cells[0];
        r.date = parse_date(cells[1]);
        for (std::size_t i = 2; i < cells.size(); ++i) r.features.push_back(parse_cell(cells[i]));
        t.records.push_back(std::move(r));
    }
    return t;
}

void write_activity_csv(const std::filesystem::path& path, const ActivityTable& t) {
    std::ofstream out(path);
    out << "patient_id,date";
    for (const auto& f : t.feature_names) out << ',' << f;
    out << '\n';
    for (const auto& r : t.records) {
        out << r.patient_id << ',' << format_date(r.date);
        for (double v : r.features) out << ',' << cell(v);
        out << '\n';
    }
    if (!out) throw DataError("cannot write '" + path.string() + "'");
}

std::vector<SleepNightRecord> read_sleep_csv(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string line;
    std::getline(in, line);
    if (line != "patient_id,date,sleep_s,unmeasurable_s,deep_s,light_s,rem_s")
        throw DataError("sleep CSV header must be patient_id,date,sleep_s,unmeasurable_s,deep_s,light_s,rem_s");
    std::vector<SleepNightRecord> nights;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto c = split_csv(line);
        if (c.size() != 7) throw DataError("sleep CSV row has wrong width: " + line);
        SleepNightRecord r{c[0], parse_date(c[1]), parse_cell(c[2]), parse_cell(c[3]),
                           parse_cell(c[4]), parse_cell(c[5]), parse_cell(c[6])};
        const auto staged = r.deep_s + r.light_s + r.rem_s;
        if (staged > r.sleep_s + 60.0)
            throw DataError("sleep night " + r.patient_id + " " + c[1] +
                            ": staged time exceeds total sleep by more than 1 min");
        nights.push_back(r);
    }
    return nights;
}

void write_sleep_csv(const std::filesystem::path& path, const std::vector<SleepNightRecord>& nights) {
    std::ofstream out(path);
    out << "patient_id,date,sleep_s,unmeasurable_s,deep_s,light_s,rem_s\n";
    for (const auto& r : nights)
        out << r.patient_id << ',' << format_date(r.date) << ',' << cell(r.sleep_s) << ','
            << cell(r.unmeasurable_s) << ',' << cell(r.deep_s) << ',' << cell(r.light_s) << ','
            << cell(r.rem_s) << '\n';
    if (!out) throw DataError("cannot write '" + path.string() + "'");
}

std::vector<SleepEpochSeries> read_epochs_jsonl(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::map<std::pair<std::string, Date>, SleepEpochSeries> nights;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            const auto pid = j.at("patient_id").get<std::string>();
            const Date night = parse_date(j.at("night_date").get<std::string>());
            auto& s = nights[{pid, night}];
            s.patient_id = pid;
            s.night_date = night;
            s.epochs.push_back({parse_timestamp(j.at("start").get<std::string>()),
                                parse_timestamp(j.at("end").get<std::string>()),
                                parse_stage(j.at("stage").get<std::string>())});
        } catch (const json::exception& e) {
            throw DataError("sleep epochs line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    std::vector<SleepEpochSeries> out;
    for (auto& [_, s] : nights) {
        std::stable_sort(s.epochs.begin(), s.epochs.end(),
                         [](const SleepEpoch& a, const SleepEpoch& b) { return a.start < b.start; });
        out.push_back(std::move(s));
    }
    return out;
}

void write_epochs_jsonl(const std::filesystem::path& path, const std::vector<SleepEpochSeries>& series) {
    std::ofstream out(path);
    for (const auto& s : series)
        for (const auto& e : s.epochs) {
            json j = {{"patient_id", s.patient_id},
                      {"night_date", format_date(s.night_date)},
                      {"start", format_timestamp(e.start)},
                      {"end", format_timestamp(e.end)},
                      {"stage", std::string(stage_name(e.stage))}};
            out << j.dump() << '\n';
        }
    if (!out) throw DataError("cannot write '" + path.string() + "'");
}

}  // namespace wearmil::weekly
