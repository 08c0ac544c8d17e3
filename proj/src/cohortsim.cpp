#include "wearmil/cohortsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace wearmil::cohortsim {

namespace {

struct Wave {
    double amplitude_mv;
    double offset_s;
    double width_s;
};

constexpr Wave kBeat[] = {
    {0.12, -0.20, 0.025},  // P
    {-0.15, -0.035, 0.010},  // Q
    {1.20, 0.0, 0.012},      // R
    {-0.25, 0.035, 0.010},   // S
    {0.30, 0.26, 0.040},     // T
};
constexpr double kBeatBefore = 0.32;
constexpr double kBeatAfter = 0.45;

std::string patient_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "P%03d", i + 1);
    return buf;
}

double sample_mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v, double mean) {
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Activity features move with a weekend pattern whose strength falls with
// stress, plus a shared daily factor whose strength rises with it.
struct ActivityFeature {
    double base, base_spread, scale, sign;
};
constexpr ActivityFeature kActivity[] = {
    {7000.0, 2000.0, 2500.0, 1.0},  // steps
    {45.0, 15.0, 20.0, 1.0},        // active_minutes
    {600.0, 60.0, 90.0, -1.0},      // sedentary_minutes
    {8.0, 3.0, 4.0, 1.0},           // floors
    {2200.0, 300.0, 250.0, 1.0},    // calories
};

std::vector<weekly::DailyActivityRecord> simulate_activity(const LatentProfile& p, int days, Rng& rng) {
    std::vector<double> base;
    for (const auto& f : kActivity) base.push_back(f.base + rng.uniform(-f.base_spread, f.base_spread));
    const double pattern = 1.2 * (1.0 - p.latent_stress);
    const double shared = 0.3 + 1.2 * p.latent_stress;
    std::vector<weekly::DailyActivityRecord> out;
    for (int d = 0; d < days; ++d) {
        const bool kept = rng.bernoulli(p.adherence);
        const double weekend = (d % 7) >= 5 ? 1.0 : -0.4;
        const double factor = shared * rng.normal();
        weekly::DailyActivityRecord r;
        r.patient_id = p.patient_id;
        r.date = p.baseline_date + std::chrono::days{d};
        for (std::size_t f = 0; f < std::size(kActivity); ++f) {
            const double z = kActivity[f].sign * (pattern * weekend + factor) + 0.6 * rng.normal();
            const double v = std::max(0.0, std::round(base[f] + kActivity[f].scale * z));
            r.features.push_back(rng.bernoulli(0.03) ? std::nan("") : v);
        }
        if (kept) out.push_back(std::move(r));
    }
    return out;
}

// 30-second epochs over one night: ~90-minute cycles whose deep share falls
// and whose awakenings multiply with stress.
weekly::SleepEpochSeries simulate_night(const LatentProfile& p, Date night, Rng& rng) {
    using weekly::SleepStage;
    const double L = p.latent_stress;
    const auto start = at_midnight(night) + std::chrono::minutes{22 * 60 + 30} +
                       std::chrono::seconds{30 * static_cast<long>(rng.below(180))};
    const double hours = std::clamp(7.5 - 1.5 * L + 0.4 * rng.normal(), 2.0, 10.0);
    const std::size_t n = static_cast<std::size_t>(std::lround(hours * 120.0));

    std::vector<SleepStage> st(n, SleepStage::Light);
    const std::size_t cycle = 180;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i / cycle;
        const double f = static_cast<double>(i % cycle) / static_cast<double>(cycle);
        const double deep = std::max(0.0, 0.35 - 0.25 * L - 0.08 * static_cast<double>(c));
        const double rem = std::min(0.30, 0.10 + 0.05 * static_cast<double>(c));
        if (f >= 0.15 && f < 0.15 + deep) st[i] = SleepStage::Deep;
        else if (f >= 1.0 - rem) st[i] = SleepStage::Rem;
    }
    auto paint = [&](std::size_t from, std::size_t len, SleepStage s) {
        for (std::size_t i = from; i < std::min(n, from + len); ++i) st[i] = s;
    };
    paint(0, 10 + rng.below(static_cast<std::uint64_t>(10 + 40 * L)), SleepStage::Awake);
    const double wake_rate = (1.0 + 7.0 * L) / 16.0;
    for (int k = 0; k < 16; ++k)
        if (rng.bernoulli(wake_rate)) paint(rng.below(n), 2 + rng.below(19), SleepStage::Awake);
    if (rng.bernoulli(0.25)) paint(rng.below(n), 10 + rng.below(31), SleepStage::Unmeasurable);

    weekly::SleepEpochSeries s;
    s.patient_id = p.patient_id;
    s.night_date = night;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && st[j] == st[i]) ++j;
        s.epochs.push_back({start + std::chrono::seconds{30 * static_cast<long>(i)},
                            start + std::chrono::seconds{30 * static_cast<long>(j)}, st[i]});
        i = j;
    }
    return s;
}

weekly::SleepNightRecord summarize_night(const weekly::SleepEpochSeries& s) {
    using weekly::SleepStage;
    weekly::SleepNightRecord r;
    r.patient_id = s.patient_id;
    r.date = s.night_date;
    for (const auto& e : s.epochs) {
        const double secs = static_cast<double>((e.end - e.start).count());
        switch (e.stage) {
            case SleepStage::Deep: r.deep_s += secs; break;
            case SleepStage::Light: r.light_s += secs; break;
            case SleepStage::Rem: r.rem_s += secs; break;
            case SleepStage::Unmeasurable: r.unmeasurable_s += secs; break;
            case SleepStage::Awake: break;
        }
    }
    r.sleep_s = r.deep_s + r.light_s + r.rem_s + r.unmeasurable_s;
    return r;
}

}  // namespace

Rhythm rhythm_for(double latent_stress) {
    Rhythm r;
    r.mean_hr_bpm = 60.0 + 30.0 * latent_stress;
    r.sdnn_ms = 80.0 - 50.0 * latent_stress;
    return r;
}

SyntheticEcg synthesize_rhythm(const Rhythm& rhythm, double duration_s, double fs, std::uint64_t seed,
                               const NoiseModel& noise) {
    if (!(duration_s > 0.0)) throw ArgumentError("ECG duration must be positive");
    if (!(fs > 0.0)) throw ArgumentError("sampling rate must be positive");
    if (!(rhythm.mean_hr_bpm > 0.0) || rhythm.sdnn_ms < 0.0) throw ArgumentError("invalid rhythm");
    Rng rng(seed);
    const double mean_rr = 60000.0 / rhythm.mean_hr_bpm;
    const std::size_t n_rr = static_cast<std::size_t>(std::ceil(duration_s * 1000.0 / mean_rr)) + 2;

    std::vector<double> dev(n_rr);
    const double innov = std::sqrt(1.0 - rhythm.ar_coef * rhythm.ar_coef);
    double prev = rng.normal();
    for (auto& d : dev) {
        prev = rhythm.ar_coef * prev + innov * rng.normal();
        d = prev;
    }
    const double m = sample_mean(dev);
    const double sd = sample_sd(dev, m);
    std::vector<double> rr(n_rr, mean_rr);
    if (rhythm.sdnn_ms > 0.0 && sd > 0.0)
        for (std::size_t k = 0; k < n_rr; ++k)
            rr[k] = std::clamp(mean_rr + (dev[k] - m) / sd * rhythm.sdnn_ms, 250.0, 2500.0);

    SyntheticEcg out;
    double t = 0.5 + 0.3 * rng.uniform();
    for (std::size_t k = 0; t <= duration_s - kBeatAfter; ++k) {
        out.peak_times_s.push_back(t);
        if (k >= n_rr) break;
        t += rr[k] / 1000.0;
        if (t <= duration_s - kBeatAfter) out.rr_ms.push_back(rr[k]);
    }

    const auto n = static_cast<std::size_t>(std::llround(duration_s * fs));
    out.samples.assign(n, 0.0);
    for (double tp : out.peak_times_s) {
        const auto lo = static_cast<std::size_t>(std::max(0.0, std::ceil((tp - kBeatBefore) * fs)));
        const auto hi = std::min(n, static_cast<std::size_t>(std::floor((tp + kBeatAfter) * fs)) + 1);
        for (std::size_t i = lo; i < hi; ++i) {
            const double dt = static_cast<double>(i) / fs - tp;
            double v = 0.0;
            for (const auto& w : kBeat) {
                const double u = (dt - w.offset_s) / w.width_s;
                v += w.amplitude_mv * std::exp(-0.5 * u * u);
            }
            out.samples[i] += v;
        }
    }
    const double phase = 2.0 * std::numbers::pi * rng.uniform();
    const double wander = noise.wander_mv * (0.5 + rng.uniform());
    for (std::size_t i = 0; i < n; ++i) {
        const double ti = static_cast<double>(i) / fs;
        out.samples[i] += wander * std::sin(2.0 * std::numbers::pi * noise.wander_hz * ti + phase) +
                          noise.white_sd_mv * rng.normal();
    }
    return out;
}

SyntheticEcg synthesize_ecg(double latent_stress, double duration_s, double fs, std::uint64_t seed) {
    if (!(duration_s > 0.0)) throw ArgumentError("ECG duration must be positive");
    if (duration_s < ecg::kWindowSeconds) throw ArgumentError("ECG duration must be at least 300 s");
    if (latent_stress < 0.0 || latent_stress > 1.0) throw ArgumentError("latent stress must lie in [0,1]");
    return synthesize_rhythm(rhythm_for(latent_stress), duration_s, fs, seed);
}

int assign_pss(double latent_stress, double noise_sd, std::uint64_t seed) {
    if (noise_sd < 0.0) throw ArgumentError("PSS noise sd must be nonnegative");
    Rng rng(seed);
    const double raw = 40.0 * latent_stress + (noise_sd > 0.0 ? noise_sd * rng.normal() : 0.0);
    return static_cast<int>(std::lround(std::clamp(raw, 0.0, 40.0)));
}

SyntheticEcg render_session_signal(const EcgSession& s) {
    Rng jitter(derive_seed(s.seed, "rhythm"));
    Rhythm r = rhythm_for(s.latent_stress);
    r.mean_hr_bpm += 2.0 * jitter.normal();
    r.sdnn_ms *= std::max(0.5, 1.0 + 0.05 * jitter.normal());
    SyntheticEcg sig = synthesize_rhythm(r, s.duration_s, s.fs, s.seed);
    const std::size_t wl = ecg::window_length(s.fs);
    for (int w : s.flatline_windows) {
        const std::size_t from = static_cast<std::size_t>(w) * wl;
        if (from >= sig.samples.size()) continue;
        const double level = sig.samples[from];
        std::fill(sig.samples.begin() + static_cast<std::ptrdiff_t>(from),
                  sig.samples.begin() + static_cast<std::ptrdiff_t>(std::min(sig.samples.size(), from + wl)),
                  level);
    }
    // Stored as float32 on disk; rounding here keeps memory and file paths identical.
    for (double& v : sig.samples) v = static_cast<double>(static_cast<float>(v));
    return sig;
}

ecg::EcgRecording render_session(const EcgSession& s) {
    ecg::EcgRecording rec;
    rec.patient_id = s.patient_id;
    rec.start_time = s.start;
    rec.fs = s.fs;
    rec.samples = render_session_signal(s).samples;
    return rec;
}

std::vector<LatentProfile> SyntheticCohort::profiles() const {
    std::vector<LatentProfile> out;
    for (const auto& p : patients) out.push_back(p.profile);
    return out;
}

SyntheticCohort generate_cohort(int n_patients, int weeks, std::uint64_t seed, const CohortOptions& opt) {
    if (n_patients < 2) throw ArgumentError("cohort needs at least 2 patients");
    if (weeks < 4) throw ArgumentError("cohort needs at least 4 weeks");
    if (opt.pss_noise_sd < 0.0) throw ArgumentError("PSS noise sd must be nonnegative");
    SyntheticCohort c;
    c.activity_features = weekly::kDefaultActivityFeatures;
    const int days = 7 * weeks;
    for (int i = 0; i < n_patients; ++i) {
        PatientRecords pr;
        LatentProfile& p = pr.profile;
        p.patient_id = patient_name(i);
        Rng prof(derive_seed(seed, "cohort/profile", p.patient_id));
        p.latent_stress = prof.uniform();
        p.adherence = prof.uniform(0.55, 0.95);
        p.baseline_date = opt.study_start + std::chrono::days{7 * static_cast<int>(prof.below(8))};
        if (auto it = opt.adherence_override.find(p.patient_id); it != opt.adherence_override.end()) {
            if (it->second < 0.0 || it->second > 1.0) throw ArgumentError("adherence must lie in [0,1]");
            p.adherence = it->second;
        }

        Rng act(derive_seed(seed, "cohort/activity", p.patient_id));
        pr.activity = simulate_activity(p, days, act);

        Rng sleep(derive_seed(seed, "cohort/sleep", p.patient_id));
        for (int d = 0; d < days; ++d) {
            const bool kept = sleep.bernoulli(p.adherence);
            auto night = simulate_night(p, p.baseline_date + std::chrono::days{d}, sleep);
            if (!kept) continue;
            pr.nights.push_back(summarize_night(night));
            pr.epochs.push_back(std::move(night));
        }

        Rng sess(derive_seed(seed, "cohort/ecg", p.patient_id));
        for (int d = 0, k = 0; d < days; d += 14, ++k) {
            EcgSession s;
            s.patient_id = p.patient_id;
            s.index = k;
            s.start = at_midnight(p.baseline_date + std::chrono::days{d}) + std::chrono::hours{9} +
                      std::chrono::seconds{static_cast<long>(sess.below(8 * 3600))};
            s.latent_stress = p.latent_stress;
            s.seed = derive_seed(derive_seed(seed, "cohort/ecg-session", p.patient_id), "index",
                                 static_cast<std::uint64_t>(k));
            const int n_windows = static_cast<int>(s.duration_s / ecg::kWindowSeconds);
            for (int w = 0; w < n_windows; ++w)
                if (sess.bernoulli(opt.flatline_probability)) s.flatline_windows.push_back(w);
            pr.ecg_sessions.push_back(std::move(s));
        }

        for (auto [h, off] : {std::pair{Horizon::M3, kM3DayOffset}, std::pair{Horizon::M6, kM6DayOffset}}) {
            bags::Assessment a;
            a.patient_id = p.patient_id;
            a.horizon = h;
            a.date = p.baseline_date + std::chrono::days{off};
            a.pss = assign_pss(p.latent_stress, opt.pss_noise_sd,
                               derive_seed(seed, "cohort/pss", p.patient_id + "/" + std::string(horizon_name(h))));
            c.assessments.push_back(a);
        }
        c.patients.push_back(std::move(pr));
    }
    return c;
}

void write_cohort(const SyntheticCohort& c, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "ecg");
    weekly::ActivityTable table;
    table.feature_names = c.activity_features;
    std::vector<weekly::SleepNightRecord> nights;
    std::vector<weekly::SleepEpochSeries> epochs;
    for (const auto& p : c.patients) {
        table.records.insert(table.records.end(), p.activity.begin(), p.activity.end());
        nights.insert(nights.end(), p.nights.begin(), p.nights.end());
        epochs.insert(epochs.end(), p.epochs.begin(), p.epochs.end());
    }
    weekly::write_activity_csv(dir / "activity.csv", table);
    weekly::write_sleep_csv(dir / "sleep_nights.csv", nights);
    weekly::write_epochs_jsonl(dir / "sleep_epochs.jsonl", epochs);
    bags::write_assessments_csv(dir / "assessments.csv", c.assessments);

    std::ofstream prof(dir / "profiles.csv");
    prof << "patient_id,latent_stress,baseline_date,adherence\n";
    for (const auto& p : c.patients)
        prof << p.profile.patient_id << ',' << format_double(p.profile.latent_stress) << ','
             << format_date(p.profile.baseline_date) << ',' << format_double(p.profile.adherence) << '\n';
    if (!prof) throw DataError("cannot write profiles.csv");

    for (const auto& p : c.patients)
        for (const auto& s : p.ecg_sessions) {
            char name[64];
            std::snprintf(name, sizeof name, "%s_s%02d.f32", s.patient_id.c_str(), s.index);
            ecg::write_ecg_f32(dir / "ecg" / name, render_session(s));
        }
}

std::vector<LatentProfile> read_profiles_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::string line;
    std::getline(in, line);
    if (line != "patient_id,latent_stress,baseline_date,adherence")
        throw DataError("unexpected profiles.csv header");
    std::vector<LatentProfile> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string id, ls, bd, ad;
        if (!std::getline(ss, id, ',') || !std::getline(ss, ls, ',') || !std::getline(ss, bd, ',') ||
            !std::getline(ss, ad))
            throw DataError("malformed profile row '" + line + "'");
        try {
            out.push_back({id, std::stod(ls), parse_date(bd), std::stod(ad)});
        } catch (const std::logic_error&) {
            throw DataError("malformed profile row '" + line + "'");
        }
    }
    return out;
}

}  // namespace wearmil::cohortsim
