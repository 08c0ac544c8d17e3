#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wearmil/bags.hpp"
#include "wearmil/common.hpp"
#include "wearmil/mil.hpp"

namespace wearmil::eval {

struct Fold {
    std::string test;
    std::vector<std::string> train;
    std::vector<std::string> val;
};

/// One fold per patient in sorted order. The remaining patients are
/// shuffled by derive_seed(seed, "loso", test) and the first
/// max(1, round(0.2 n)) become validation patients.
std::vector<Fold> loso_folds(std::vector<std::string> patients, std::uint64_t seed);

struct Prediction {
    std::string bag_id;
    std::string patient_id;
    double yhat = 0.0;
    double y = 0.0;
};

double rmse(std::span<const Prediction> p);
double mae(std::span<const Prediction> p);
// Undefined (nullopt) when the targets have zero variance.
std::optional<double> r2(std::span<const Prediction> p);
// Undefined when either side has zero variance or fewer than 2 points.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);
// 1-based ranks; ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> x);

struct FoldResult {
    std::string held_out_patient;
    Horizon horizon = Horizon::M3;
    std::vector<Prediction> predictions;
    std::vector<double> baseline;  // train-split target mean, one per prediction
    double fold_rmse = 0.0;
    bool skipped = false;
    std::string skip_reason;
    std::size_t train_bags = 0;
    std::size_t val_bags = 0;
    int best_epoch = -1;
    double best_val_rmse = 0.0;
    std::vector<mil::HistoryRow> history;
};

struct GlobalMetrics {
    std::size_t n_folds = 0;
    std::size_t n_skipped = 0;
    std::size_t n_predictions = 0;
    double rmse_mean = 0.0;
    double rmse_std = 0.0;  // population std across folds
    double rmse = 0.0;
    double mae = 0.0;
    std::optional<double> r2;
    std::optional<double> pearson;
    std::optional<double> spearman;
};

/// Pooled metrics over the predictions of all completed folds, plus the
/// mean and std of per-fold RMSE.
GlobalMetrics compute_metrics(std::span<const FoldResult> folds);
// Same, scoring the train-mean baseline instead of the model.
GlobalMetrics compute_baseline_metrics(std::span<const FoldResult> folds);

struct LosoConfig {
    Horizon horizon = Horizon::M3;
    bags::ModalitySet modalities = bags::ModalitySet::all();
    std::size_t cap = 512;
    bags::CapPolicy cap_policy = bags::CapPolicy::Uniform;
    mil::TrainConfig train;
    std::uint64_t seed = 0;
    int jobs = 1;
};

/// Observer of each fold's training batches (held-out patient, epoch,
/// batch index, bags).
using FoldObserver =
    std::function<void(const std::string&, int, std::size_t, std::span<const bags::Bag* const>)>;

struct LosoRun {
    std::vector<FoldResult> folds;
    GlobalMetrics metrics;
    GlobalMetrics baseline;
    std::size_t emptied_bags = 0;  // bags dropped by the modality filter
    std::vector<std::string> log;
};

/// Filters every bag to the modality set (dropping emptied bags), caps it,
/// then trains and scores one model per fold. Folds whose held-out patient
/// lost all bags are reported as skipped.
LosoRun run_loso(std::span<const bags::Bag> bags, const LosoConfig& cfg, const FoldObserver& observer = {});

// --- Reports ----------------------------------------------------------------

struct GlobalRow {
    std::string modalities;
    Horizon horizon = Horizon::M3;
    GlobalMetrics metrics;
    GlobalMetrics baseline;
};

void write_folds_csv(const std::filesystem::path& path, std::span<const FoldResult> folds);
void write_global_csv(const std::filesystem::path& path, std::span<const GlobalRow> rows);
std::vector<GlobalRow> read_global_csv(const std::filesystem::path& path);

/// Scatter of yhat against y on fixed [0,40] axes with the identity line.
/// Axis metadata is stored in PNG text chunks.
void write_scatter_png(const std::filesystem::path& path, std::span<const FoldResult> folds);

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// Metric x horizon over the all-modality rows.
Table metric_table(std::span<const GlobalRow> rows);
/// Modality set x (horizon, metric) over every row.
Table ablation_table(std::span<const GlobalRow> rows);
void write_table_csv(const std::filesystem::path& path, const Table& t);
std::string format_table_text(const Table& t);

}  // namespace wearmil::eval
