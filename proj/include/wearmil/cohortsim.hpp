#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wearmil/bags.hpp"
#include "wearmil/common.hpp"
#include "wearmil/ecg.hpp"
#include "wearmil/weekly.hpp"

namespace wearmil::cohortsim {

struct LatentProfile {
    std::string patient_id;
    double latent_stress = 0.0;
    Date baseline_date{};
    double adherence = 1.0;
};

/// Heart-rhythm targets for one synthetic recording.
struct Rhythm {
    double mean_hr_bpm = 60.0;
    double sdnn_ms = 50.0;
    double ar_coef = 0.7;  // lag-1 autocorrelation of RR deviations
};

// HR = 60 + 30 L bpm, SDNN = 80 - 50 L ms.
Rhythm rhythm_for(double latent_stress);

struct NoiseModel {
    double white_sd_mv = 0.03;
    double wander_mv = 0.1;
    double wander_hz = 0.2;
};

struct SyntheticEcg {
    std::vector<double> samples;        // millivolts
    std::vector<double> peak_times_s;   // planted R apexes
    std::vector<double> rr_ms;          // successive planted gaps
};

/// Piecewise-Gaussian PQRST beats on the planted RR series plus seeded noise.
SyntheticEcg synthesize_rhythm(const Rhythm& rhythm, double duration_s, double fs, std::uint64_t seed,
                               const NoiseModel& noise = {});
SyntheticEcg synthesize_ecg(double latent_stress, double duration_s, double fs, std::uint64_t seed);

// round(clamp(40 L + N(0, noise_sd), 0, 40)).
int assign_pss(double latent_stress, double noise_sd, std::uint64_t seed);

/// A biweekly recording, synthesised on demand from its descriptor.
struct EcgSession {
    std::string patient_id;
    int index = 0;
    Timestamp start{};
    double duration_s = 1800.0;
    double fs = ecg::kPolarFs;
    double latent_stress = 0.0;
    std::uint64_t seed = 0;
    std::vector<int> flatline_windows;  // 5-minute windows replaced by a lead-off plateau
};

SyntheticEcg render_session_signal(const EcgSession& s);
ecg::EcgRecording render_session(const EcgSession& s);

struct PatientRecords {
    LatentProfile profile;
    std::vector<weekly::DailyActivityRecord> activity;
    std::vector<weekly::SleepNightRecord> nights;
    std::vector<weekly::SleepEpochSeries> epochs;
    std::vector<EcgSession> ecg_sessions;
};

struct SyntheticCohort {
    std::vector<std::string> activity_features;
    std::vector<PatientRecords> patients;
    std::vector<bags::Assessment> assessments;  // M3 and M6 per patient

    std::vector<LatentProfile> profiles() const;
};

struct CohortOptions {
    double pss_noise_sd = 3.0;
    double flatline_probability = 0.05;
    Date study_start = make_date(2024, 1, 1);
    std::map<std::string, double> adherence_override;  // by patient id
};

inline constexpr int kM3DayOffset = 91;
inline constexpr int kM6DayOffset = 182;

/// Patients P001..Pn with latent stress U(0,1) and adherence U(0.55, 0.95).
/// Activity and sleep days are kept with probability `adherence`
/// independently; ECG sessions occur every 14 days from baseline.
SyntheticCohort generate_cohort(int n_patients, int weeks, std::uint64_t seed, const CohortOptions& opt = {});

/// activity.csv, sleep_nights.csv, sleep_epochs.jsonl, assessments.csv,
/// profiles.csv and ecg/<patient>_sNN.f32 with JSON sidecars.
void write_cohort(const SyntheticCohort& c, const std::filesystem::path& dir);

std::vector<LatentProfile> read_profiles_csv(const std::filesystem::path& path);

}  // namespace wearmil::cohortsim
