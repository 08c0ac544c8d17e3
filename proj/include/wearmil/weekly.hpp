#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wearmil/common.hpp"
#include "wearmil/raster.hpp"

namespace wearmil::weekly {

inline constexpr int kDaysPerWeek = 7;

extern const std::vector<std::string> kDefaultActivityFeatures;
extern const std::vector<std::string> kSleepFeatures;

/// One day of activity summaries. NaN marks a missing feature value; an
/// absent day is simply not present in the record list.
struct DailyActivityRecord {
    std::string patient_id;
    Date date{};
    std::vector<double> features;
};

struct SleepNightRecord {
    std::string patient_id;
    Date date{};
    double sleep_s = 0.0;
    double unmeasurable_s = 0.0;
    double deep_s = 0.0;
    double light_s = 0.0;
    double rem_s = 0.0;

    std::vector<double> as_features() const;
};

// Vertical order of the hypnogram, bottom (0) to top (4).
enum class SleepStage : int { Unmeasurable = 0, Deep = 1, Light = 2, Rem = 3, Awake = 4 };
std::string_view stage_name(SleepStage s);
SleepStage parse_stage(std::string_view s);

struct SleepEpoch {
    Timestamp start{};
    Timestamp end{};
    SleepStage stage = SleepStage::Light;
};

struct SleepEpochSeries {
    std::string patient_id;
    Date night_date{};
    std::vector<SleepEpoch> epochs;
};

/// A dated row of feature values (NaN = missing) as fed to week alignment.
struct DatedValues {
    Date date{};
    std::vector<double> values;
};

struct WeekPosition {
    int week = 0;
    int column = 0;
    bool operator==(const WeekPosition&) const = default;
};

/// Day d maps to week floor((d - baseline)/7), column (d - baseline) mod 7.
WeekPosition week_position(Date day, Date baseline);

/// features x 7 values, row-major. `mask[f*7 + c]` is true for observed
/// cells. `empty_rows` flags feature rows that had no observation at all.
struct WeeklyMatrix {
    std::string patient_id;
    int week_index = 0;
    Date week_start{};
    std::size_t n_features = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> mask;
    std::vector<std::uint8_t> empty_rows;

    double& at(std::size_t f, int c) { return values[f * kDaysPerWeek + static_cast<std::size_t>(c)]; }
    double at(std::size_t f, int c) const { return values[f * kDaysPerWeek + static_cast<std::size_t>(c)]; }
    bool present(std::size_t f, int c) const { return mask[f * kDaysPerWeek + static_cast<std::size_t>(c)] != 0; }
    double missing_fraction(bool count_days) const;
};

/// Groups dated rows into non-overlapping weeks from `baseline`. The result
/// is ordered by week index and holds NaN in unobserved cells.
std::vector<WeeklyMatrix> align_weeks(const std::vector<DatedValues>& records, Date baseline,
                                      std::size_t n_features, const std::string& patient_id = {});

enum class MissingUnit { Cell, Day };
MissingUnit parse_missing_unit(std::string_view s);
std::string_view missing_unit_name(MissingUnit u);

struct WeekRules {
    double max_missing_fraction = 0.60;
    MissingUnit unit = MissingUnit::Cell;
};

/// Rejects weeks whose missing fraction exceeds the limit (the limit itself
/// is retained); otherwise fills each missing cell with the mean of the
/// observed cells in its row. Rows with no observations are zero-filled and
/// flagged in `empty_rows`.
Outcome<WeeklyMatrix> filter_and_impute(const WeeklyMatrix& week, const WeekRules& rules = {});

/// Per-row population z-score across the 7 columns; zero-variance rows
/// become all zeros.
WeeklyMatrix zscore_week(const WeeklyMatrix& m);

InstanceImage render_heatmap(const WeeklyMatrix& m, Modality modality);

/// Step trace of the stage sequence over normalised night time, 3 px thick,
/// on a zero background.
Outcome<InstanceImage> hypnogram_image(const SleepEpochSeries& series);
// Raster row of the centre line for a stage.
std::size_t hypnogram_row(SleepStage s);
// Raster column of a time point within [first start, last end].
std::size_t hypnogram_column(Timestamp t, Timestamp t0, Timestamp t1);

/// Aligns, filters, imputes and normalises all weeks of one patient and
/// renders a heatmap per retained week.
struct WeekLog {
    int week_index = 0;
    double missing_fraction = 0.0;
    bool retained = false;
};
std::vector<InstanceImage> weekly_heatmaps(const std::string& patient_id,
                                           const std::vector<DatedValues>& records, Date baseline,
                                           std::size_t n_features, Modality modality,
                                           const WeekRules& rules, std::vector<WeekLog>* log = nullptr);

// --- Files -----------------------------------------------------------------

/// `patient_id,date,<feature...>`; empty cells read as missing.
struct ActivityTable {
    std::vector<std::string> feature_names;
    std::vector<DailyActivityRecord> records;
};
ActivityTable read_activity_csv(const std::filesystem::path& path);
void write_activity_csv(const std::filesystem::path& path, const ActivityTable& table);

/// `patient_id,date,sleep_s,unmeasurable_s,deep_s,light_s,rem_s`
std::vector<SleepNightRecord> read_sleep_csv(const std::filesystem::path& path);
void write_sleep_csv(const std::filesystem::path& path, const std::vector<SleepNightRecord>& nights);

/// JSONL, one epoch per line: {patient_id, night_date, start, end, stage}.
std::vector<SleepEpochSeries> read_epochs_jsonl(const std::filesystem::path& path);
void write_epochs_jsonl(const std::filesystem::path& path, const std::vector<SleepEpochSeries>& series);

}  // namespace wearmil::weekly
