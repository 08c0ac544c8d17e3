#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wearmil/bags.hpp"
#include "wearmil/cohortsim.hpp"
#include "wearmil/ecg.hpp"
#include "wearmil/encoder.hpp"
#include "wearmil/eval.hpp"
#include "wearmil/mil.hpp"
#include "wearmil/weekly.hpp"

namespace wearmil::pipeline {

struct SimulateConfig {
    int patients = 40;
    int weeks = 26;
    double pss_noise_sd = 3.0;
    double flatline_probability = 0.05;
};

struct WatchConfig {
    weekly::WeekRules rules;
    std::vector<std::string> activity_features = weekly::kDefaultActivityFeatures;
    bool hypnograms = true;
};

struct BagConfig {
    Horizon horizon = Horizon::M3;
    std::size_t cap = 512;
    bags::CapPolicy cap_policy = bags::CapPolicy::Uniform;
};

/// Every stage parameter in one JSON document. Unknown keys are rejected.
struct RunConfig {
    std::uint64_t seed = 0;
    int jobs = 1;
    SimulateConfig simulate;
    ecg::EcgConfig ecg;
    WatchConfig watch;
    BagConfig bags;
    mil::TrainConfig train;
    bags::ModalitySet modalities = bags::ModalitySet::all();

    static RunConfig from_json_text(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);
    std::string to_json_text() const;
    /// Sets one value by dotted path ("train.lr0") from JSON text ("0.001").
    /// Types are checked here; ranges are checked by validate().
    void set(const std::string& key_path, const std::string& json_value);
    void validate() const;

    eval::LosoConfig loso() const;
};

// The raster handed to the encoder: 8-bit grey levels, as stored in PNGs.
Raster quantize_8bit(const Raster& r);

struct EcgWindowLog {
    std::string patient_id;
    Timestamp window_start{};
    double quality = 0.0;
    std::string status;  // accepted | low_quality | sparse_beats
};

/// All instances of one recording (windows in order, views in order).
std::vector<InstanceImage> ecg_instances(const ecg::EcgRecording& rec, const ecg::EcgConfig& cfg,
                                         std::vector<EcgWindowLog>* log = nullptr, int jobs = 1);

struct WeekLogRow {
    std::string patient_id;
    Modality modality = Modality::Activity;
    int week_index = 0;
    Date week_start{};
    double missing_fraction = 0.0;
    bool retained = false;
};

struct PatientWatchData {
    std::string patient_id;
    std::vector<std::string> activity_features;
    std::vector<weekly::DailyActivityRecord> activity;
    std::vector<weekly::SleepNightRecord> nights;
    std::vector<weekly::SleepEpochSeries> epochs;
};

/// Activity heatmaps, sleep heatmaps, then hypnograms. The baseline is the
/// earliest date among the patient's records.
std::vector<InstanceImage> watch_instances(const PatientWatchData& d, const WatchConfig& cfg,
                                           std::vector<WeekLogRow>* log = nullptr);

encoder::InstanceEncoder make_encoder(const RunConfig& cfg);

// --- In-memory run ------------------------------------------------------------

struct MemoryRun {
    std::map<std::string, std::vector<encoder::Embedding>> embeddings;
    std::vector<bags::Bag> bags;
    std::vector<std::string> skipped;
    eval::LosoRun loso;
};

/// cohort -> transforms -> encoder -> bags -> LOSO, without touching disk.
std::map<std::string, std::vector<encoder::Embedding>> embed_cohort(const cohortsim::SyntheticCohort& c,
                                                                     const RunConfig& cfg);
MemoryRun run_in_memory(const cohortsim::SyntheticCohort& c, const RunConfig& cfg);

// --- File stages ------------------------------------------------------------
// Each stage writes run.json (stage name, resolved config, inputs, summary)
// beside its outputs and returns a one-line summary.

std::string simulate(const RunConfig& cfg, const std::filesystem::path& out);
std::string transform_ecg(const RunConfig& cfg, const std::filesystem::path& in, const std::filesystem::path& out);
std::string transform_watch(const RunConfig& cfg, const std::filesystem::path& in,
                            const std::filesystem::path& out);
std::string embed(const RunConfig& cfg, const std::vector<std::filesystem::path>& in,
                  const std::filesystem::path& out);
std::string build_bag_files(const RunConfig& cfg, const std::filesystem::path& embeddings,
                            const std::filesystem::path& assessments, const std::filesystem::path& out);
std::string train_model(const RunConfig& cfg, const std::filesystem::path& bags_dir,
                        const std::filesystem::path& out);
std::string evaluate(const RunConfig& cfg, const std::filesystem::path& bags_dir, const std::filesystem::path& out);
std::string ablate(const RunConfig& cfg, const std::filesystem::path& bags_dir, const std::filesystem::path& out);
std::string report(const std::vector<std::filesystem::path>& in, const std::filesystem::path& out);

std::vector<bags::Bag> read_bag_dir(const std::filesystem::path& dir);

}  // namespace wearmil::pipeline
