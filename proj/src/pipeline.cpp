#include "wearmil/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <json.hpp>

#include "parallel.hpp"

namespace wearmil::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// RunConfig

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
    for (const auto& [k, v] : j.items()) {
        (void)v;
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
            throw ConfigError("unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
    }
}

template <class T>
void read(const json& j, const char* key, T& dst, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        dst = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + (where.empty() ? std::string(key) : where + "." + key) +
                          "' has the wrong type");
    }
}

json shapes_to_json(const mil::MilShapes& s) {
    return {{"input", s.input},
            {"proj_hidden", s.proj_hidden},
            {"proj_out", s.proj_out},
            {"attn_hidden", s.attn_hidden},
            {"head_hidden", s.head_hidden},
            {"modalities", s.modalities}};
}

}  // namespace

std::string RunConfig::to_json_text() const {
    json j;
    j["seed"] = seed;
    j["jobs"] = jobs;
    j["simulate"] = {{"patients", simulate.patients},
                     {"weeks", simulate.weeks},
                     {"pss_noise_sd", simulate.pss_noise_sd},
                     {"flatline_probability", simulate.flatline_probability}};
    j["ecg"] = {{"quality_threshold", ecg.quality_threshold}, {"stft_window", ecg.stft_window},
                {"stft_hop", ecg.stft_hop},                   {"stft_max_hz", ecg.stft_max_hz},
                {"cwt_w0", ecg.cwt_w0},                       {"cwt_scales", ecg.cwt_scales},
                {"cwt_min_hz", ecg.cwt_min_hz},               {"cwt_max_hz", ecg.cwt_max_hz},
                {"poincare_min_ms", ecg.poincare_min_ms},     {"poincare_max_ms", ecg.poincare_max_ms}};
    j["watch"] = {{"missing_unit", std::string(weekly::missing_unit_name(watch.rules.unit))},
                  {"max_missing_fraction", watch.rules.max_missing_fraction},
                  {"activity_features", watch.activity_features},
                  {"hypnograms", watch.hypnograms}};
    j["bags"] = {{"horizon", std::string(horizon_name(bags.horizon))},
                 {"cap", bags.cap},
                 {"cap_policy", std::string(bags::cap_policy_name(bags.cap_policy))}};
    j["train"] = {{"lr0", train.lr0},
                  {"weight_decay", train.weight_decay},
                  {"max_epochs", train.max_epochs},
                  {"patience", train.patience},
                  {"warmup_epochs", train.warmup_epochs},
                  {"batch_bags", train.batch_bags},
                  {"dropout", train.dropout},
                  {"beta1", train.beta1},
                  {"beta2", train.beta2},
                  {"adam_eps", train.adam_eps},
                  {"loss", std::string(mil::loss_name(train.loss))},
                  {"target_scaling", std::string(mil::target_scaling_name(train.target_scaling))},
                  {"shapes", shapes_to_json(train.shapes)}};
    j["evaluate"] = {{"modalities", modalities.name()}};
    return j.dump(2);
}

namespace {
RunConfig parse_unvalidated(const std::string& text);
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    RunConfig c = parse_unvalidated(text);
    c.validate();
    return c;
}

namespace {

RunConfig parse_unvalidated(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    check_keys(j, {"seed", "jobs", "simulate", "ecg", "watch", "bags", "train", "evaluate"}, "");
    read(j, "seed", c.seed, "");
    read(j, "jobs", c.jobs, "");
    if (j.contains("simulate")) {
        const auto& s = j["simulate"];
        check_keys(s, {"patients", "weeks", "pss_noise_sd", "flatline_probability"}, "simulate");
        read(s, "patients", c.simulate.patients, "simulate");
        read(s, "weeks", c.simulate.weeks, "simulate");
        read(s, "pss_noise_sd", c.simulate.pss_noise_sd, "simulate");
        read(s, "flatline_probability", c.simulate.flatline_probability, "simulate");
    }
    if (j.contains("ecg")) {
        const auto& e = j["ecg"];
        check_keys(e,
                   {"quality_threshold", "stft_window", "stft_hop", "stft_max_hz", "cwt_w0", "cwt_scales",
                    "cwt_min_hz", "cwt_max_hz", "poincare_min_ms", "poincare_max_ms"},
                   "ecg");
        read(e, "quality_threshold", c.ecg.quality_threshold, "ecg");
        read(e, "stft_window", c.ecg.stft_window, "ecg");
        read(e, "stft_hop", c.ecg.stft_hop, "ecg");
        read(e, "stft_max_hz", c.ecg.stft_max_hz, "ecg");
        read(e, "cwt_w0", c.ecg.cwt_w0, "ecg");
        read(e, "cwt_scales", c.ecg.cwt_scales, "ecg");
        read(e, "cwt_min_hz", c.ecg.cwt_min_hz, "ecg");
        read(e, "cwt_max_hz", c.ecg.cwt_max_hz, "ecg");
        read(e, "poincare_min_ms", c.ecg.poincare_min_ms, "ecg");
        read(e, "poincare_max_ms", c.ecg.poincare_max_ms, "ecg");
    }
    if (j.contains("watch")) {
        const auto& w = j["watch"];
        check_keys(w, {"missing_unit", "max_missing_fraction", "activity_features", "hypnograms"}, "watch");
        std::string unit(weekly::missing_unit_name(c.watch.rules.unit));
        read(w, "missing_unit", unit, "watch");
        c.watch.rules.unit = weekly::parse_missing_unit(unit);
        read(w, "max_missing_fraction", c.watch.rules.max_missing_fraction, "watch");
        read(w, "activity_features", c.watch.activity_features, "watch");
        read(w, "hypnograms", c.watch.hypnograms, "watch");
    }
    if (j.contains("bags")) {
        const auto& b = j["bags"];
        check_keys(b, {"horizon", "cap", "cap_policy"}, "bags");
        std::string h(horizon_name(c.bags.horizon)), policy(bags::cap_policy_name(c.bags.cap_policy));
        read(b, "horizon", h, "bags");
        read(b, "cap", c.bags.cap, "bags");
        read(b, "cap_policy", policy, "bags");
        try {
            c.bags.horizon = parse_horizon(h);
        } catch (const ArgumentError& e) {
            throw ConfigError(e.what());
        }
        c.bags.cap_policy = bags::parse_cap_policy(policy);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        check_keys(t,
                   {"lr0", "weight_decay", "max_epochs", "patience", "warmup_epochs", "batch_bags", "dropout",
                    "beta1", "beta2", "adam_eps", "loss", "target_scaling", "shapes"},
                   "train");
        auto& tc = c.train;
        read(t, "lr0", tc.lr0, "train");
        read(t, "weight_decay", tc.weight_decay, "train");
        read(t, "max_epochs", tc.max_epochs, "train");
        read(t, "patience", tc.patience, "train");
        read(t, "warmup_epochs", tc.warmup_epochs, "train");
        read(t, "batch_bags", tc.batch_bags, "train");
        read(t, "dropout", tc.dropout, "train");
        read(t, "beta1", tc.beta1, "train");
        read(t, "beta2", tc.beta2, "train");
        read(t, "adam_eps", tc.adam_eps, "train");
        std::string loss(mil::loss_name(tc.loss)), scaling(mil::target_scaling_name(tc.target_scaling));
        read(t, "loss", loss, "train");
        read(t, "target_scaling", scaling, "train");
        tc.loss = mil::parse_loss(loss);
        tc.target_scaling = mil::parse_target_scaling(scaling);
        if (t.contains("shapes")) {
            const auto& s = t["shapes"];
            check_keys(s, {"input", "proj_hidden", "proj_out", "attn_hidden", "head_hidden", "modalities"},
                       "train.shapes");
            read(s, "input", tc.shapes.input, "train.shapes");
            read(s, "proj_hidden", tc.shapes.proj_hidden, "train.shapes");
            read(s, "proj_out", tc.shapes.proj_out, "train.shapes");
            read(s, "attn_hidden", tc.shapes.attn_hidden, "train.shapes");
            read(s, "head_hidden", tc.shapes.head_hidden, "train.shapes");
            read(s, "modalities", tc.shapes.modalities, "train.shapes");
        }
    }
    if (j.contains("evaluate")) {
        const auto& e = j["evaluate"];
        check_keys(e, {"modalities"}, "evaluate");
        std::string m = c.modalities.name();
        read(e, "modalities", m, "evaluate");
        try {
            c.modalities = bags::ModalitySet::parse(m);
        } catch (const ArgumentError& ex) {
            throw ConfigError(ex.what());
        }
    }
    return c;
}

}  // namespace

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

void RunConfig::set(const std::string& key_path, const std::string& json_value) {
    json doc = json::parse(to_json_text());
    json value;
    try {
        value = json::parse(json_value);
    } catch (const json::exception&) {
        value = json_value;  // bare strings such as m3 or uniform
    }
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key_path.find('.', start);
        const std::string key = key_path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(key)) throw ConfigError("unknown config key '" + key_path + "'");
        node = &(*node)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = value;
    *this = parse_unvalidated(doc.dump());
}

void RunConfig::validate() const {
    if (jobs < 1) throw ConfigError("jobs must be at least 1");
    if (simulate.patients < 2) throw ConfigError("simulate.patients must be at least 2");
    if (simulate.weeks < 4) throw ConfigError("simulate.weeks must be at least 4");
    if (simulate.pss_noise_sd < 0.0) throw ConfigError("simulate.pss_noise_sd must be nonnegative");
    if (simulate.flatline_probability < 0.0 || simulate.flatline_probability > 1.0)
        throw ConfigError("simulate.flatline_probability must lie in [0,1]");
    if (ecg.quality_threshold < 0.0 || ecg.quality_threshold > 1.0)
        throw ConfigError("ecg.quality_threshold must lie in [0,1]");
    if (ecg.stft_window < 8 || ecg.stft_hop < 1) throw ConfigError("ecg STFT window/hop too small");
    if (ecg.cwt_scales < 2 || !(ecg.cwt_min_hz > 0.0) || !(ecg.cwt_max_hz > ecg.cwt_min_hz) || !(ecg.cwt_w0 > 0.0))
        throw ConfigError("ecg CWT settings are invalid");
    if (!(ecg.stft_max_hz > 0.0)) throw ConfigError("ecg.stft_max_hz must be positive");
    if (!(ecg.poincare_max_ms > ecg.poincare_min_ms)) throw ConfigError("ecg Poincare axis range is empty");
    if (watch.rules.max_missing_fraction < 0.0 || watch.rules.max_missing_fraction > 1.0)
        throw ConfigError("watch.max_missing_fraction must lie in [0,1]");
    if (watch.activity_features.empty()) throw ConfigError("watch.activity_features must not be empty");
    if (bags.cap < 1) throw ConfigError("bags.cap must be at least 1");
    if (train.shapes.input != encoder::kEmbeddingDim)
        throw ConfigError("train.shapes.input must equal the embedding dimension 192");
    if (train.shapes.modalities != static_cast<std::size_t>(kModalityCount))
        throw ConfigError("train.shapes.modalities must be 3");
    train.validate();
}

eval::LosoConfig RunConfig::loso() const {
    eval::LosoConfig l;
    l.horizon = bags.horizon;
    l.modalities = modalities;
    l.cap = bags.cap;
    l.cap_policy = bags.cap_policy;
    l.train = train;
    l.seed = seed;
    l.jobs = jobs;
    return l;
}

// ---------------------------------------------------------------------------
// Shared transforms

Raster quantize_8bit(const Raster& r) {
    Raster out(r.rows(), r.cols());
    for (std::size_t i = 0; i < r.size(); ++i)
        out.values()[i] = static_cast<double>(std::lround(std::clamp(r.values()[i], 0.0, 1.0) * 255.0)) / 255.0;
    return out;
}

std::vector<InstanceImage> ecg_instances(const ecg::EcgRecording& rec, const ecg::EcgConfig& cfg,
                                         std::vector<EcgWindowLog>* log, int jobs) {
    const auto windows = ecg::segment_ecg(rec);
    std::vector<ecg::WindowViews> views(windows.size());
    detail::parallel_for(windows.size(), jobs, [&](std::size_t i) { views[i] = ecg::transform_window(windows[i], cfg); });
    std::vector<InstanceImage> out;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        auto& v = views[i];
        if (log) {
            const char* status = v.images.empty() ? "low_quality" : (v.rejection.empty() ? "accepted" : "sparse_beats");
            log->push_back({rec.patient_id, windows[i].window_start, v.quality, status});
        }
        for (auto& img : v.images) {
            img.pixels = quantize_8bit(img.pixels);
            img.patient_id = rec.patient_id;
            out.push_back(std::move(img));
        }
    }
    return out;
}

std::vector<InstanceImage> watch_instances(const PatientWatchData& d, const WatchConfig& cfg,
                                           std::vector<WeekLogRow>* log) {
    std::vector<std::size_t> cols;
    for (const auto& name : cfg.activity_features) {
        auto it = std::find(d.activity_features.begin(), d.activity_features.end(), name);
        if (it == d.activity_features.end()) throw ConfigError("activity data lacks feature '" + name + "'");
        cols.push_back(static_cast<std::size_t>(it - d.activity_features.begin()));
    }
    std::optional<Date> baseline;
    auto seen = [&](Date day) { baseline = baseline ? std::min(*baseline, day) : day; };
    for (const auto& r : d.activity) seen(r.date);
    for (const auto& n : d.nights) seen(n.date);
    for (const auto& e : d.epochs) seen(e.night_date);
    std::vector<InstanceImage> out;
    if (!baseline) return out;

    std::vector<weekly::DatedValues> act, slp;
    for (const auto& r : d.activity) {
        weekly::DatedValues v{r.date, {}};
        for (std::size_t c : cols) v.values.push_back(r.features.at(c));
        act.push_back(std::move(v));
    }
    for (const auto& n : d.nights) slp.push_back({n.date, n.as_features()});

    auto heatmaps = [&](const std::vector<weekly::DatedValues>& recs, std::size_t nf, Modality m) {
        std::vector<weekly::WeekLog> wl;
        auto imgs = weekly::weekly_heatmaps(d.patient_id, recs, *baseline, nf, m, cfg.rules, &wl);
        if (log)
            for (const auto& w : wl)
                log->push_back({d.patient_id, m, w.week_index, *baseline + std::chrono::days{7 * w.week_index},
                                w.missing_fraction, w.retained});
        for (auto& img : imgs) out.push_back(std::move(img));
    };
    if (!act.empty()) heatmaps(act, cols.size(), Modality::Activity);
    if (!slp.empty()) heatmaps(slp, weekly::kSleepFeatures.size(), Modality::Sleep);
    if (cfg.hypnograms)
        for (const auto& e : d.epochs) {
            auto h = weekly::hypnogram_image(e);
            if (h) out.push_back(std::move(h.value()));
        }
    for (auto& img : out) img.pixels = quantize_8bit(img.pixels);
    return out;
}

encoder::InstanceEncoder make_encoder(const RunConfig& cfg) {
    return encoder::InstanceEncoder::reference(derive_seed(cfg.seed, "encoder"));
}

// ---------------------------------------------------------------------------
// In-memory run

std::map<std::string, std::vector<encoder::Embedding>> embed_cohort(const cohortsim::SyntheticCohort& c,
                                                                     const RunConfig& cfg) {
    const auto enc = make_encoder(cfg);
    std::vector<std::vector<encoder::Embedding>> per(c.patients.size());
    detail::parallel_for(c.patients.size(), cfg.jobs, [&](std::size_t i) {
        const auto& p = c.patients[i];
        auto& out = per[i];
        for (const auto& s : p.ecg_sessions)
            for (const auto& img : ecg_instances(cohortsim::render_session(s), cfg.ecg)) out.push_back(enc.encode(img));
        PatientWatchData d{p.profile.patient_id, c.activity_features, p.activity, p.nights, p.epochs};
        for (const auto& img : watch_instances(d, cfg.watch)) out.push_back(enc.encode(img));
    });
    std::map<std::string, std::vector<encoder::Embedding>> result;
    for (std::size_t i = 0; i < per.size(); ++i) result[c.patients[i].profile.patient_id] = std::move(per[i]);
    return result;
}

MemoryRun run_in_memory(const cohortsim::SyntheticCohort& c, const RunConfig& cfg) {
    cfg.validate();
    MemoryRun run;
    run.embeddings = embed_cohort(c, cfg);
    auto built = bags::build_bags(run.embeddings, c.assessments, bags::setting_for(cfg.bags.horizon));
    for (auto& b : built.bags) run.bags.push_back(bags::cap_instances(b, cfg.bags.cap, cfg.seed, cfg.bags.cap_policy));
    run.skipped = std::move(built.skipped);
    run.loso = eval::run_loso(run.bags, cfg.loso());
    return run;
}

// ---------------------------------------------------------------------------
// File stages

namespace {

void write_run_json(const fs::path& dir, const std::string& stage, const RunConfig& cfg, const json& inputs,
                    const json& summary) {
    json j;
    j["stage"] = stage;
    j["config"] = json::parse(cfg.to_json_text());
    j["inputs"] = inputs;
    j["summary"] = summary;
    std::ofstream out(dir / "run.json");
    out << j.dump(2) << '\n';
    if (!out) throw DataError("cannot write run.json in '" + dir.string() + "'");
}

void require_dir(const fs::path& p) {
    if (!fs::is_directory(p)) throw DataError("input directory '" + p.string() + "' does not exist");
}

std::vector<fs::path> sorted_files(const fs::path& dir, std::initializer_list<const char*> exts) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension().string();
        if (std::any_of(exts.begin(), exts.end(), [&](const char* x) { return ext == x; })) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

struct ListedInstance {
    fs::path file;  // relative to the listing's directory
    InstanceImage meta;
};

json instance_line(const fs::path& rel, const InstanceImage& img) {
    return {{"file", rel.generic_string()},
            {"patient_id", img.patient_id},
            {"modality", static_cast<int>(img.modality)},
            {"view", std::string(view_name(img.view))},
            {"instant", format_timestamp(img.instant)},
            {"span_end", format_timestamp(img.span_end)}};
}

std::vector<ListedInstance> read_listing(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::vector<ListedInstance> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = json::parse(line);
            ListedInstance li;
            li.file = j.at("file").get<std::string>();
            li.meta.patient_id = j.at("patient_id").get<std::string>();
            li.meta.view = parse_view(j.at("view").get<std::string>());
            li.meta.modality = modality_of(li.meta.view);
            if (j.at("modality").get<int>() != static_cast<int>(li.meta.modality))
                throw DataError("modality id does not match view");
            li.meta.instant = parse_timestamp(j.at("instant").get<std::string>());
            li.meta.span_end = parse_timestamp(j.at("span_end").get<std::string>());
            out.push_back(std::move(li));
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::string fmt_index(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%03d", prefix, i);
    return buf;
}

bags::Bag embedding_cache(const std::string& pid, const std::vector<encoder::Embedding>& es) {
    bags::Bag b;
    b.patient_id = pid;
    for (const auto& e : es) {
        b.embeddings.insert(b.embeddings.end(), e.values.begin(), e.values.end());
        b.modality_ids.push_back(static_cast<std::uint8_t>(e.modality));
        b.instants.push_back(e.instant);
        b.span_ends.push_back(e.span_end);
        b.views.push_back(e.view);
    }
    return b;
}

std::vector<encoder::Embedding> embeddings_of(const bags::Bag& b) {
    std::vector<encoder::Embedding> out;
    for (std::size_t i = 0; i < b.size(); ++i) {
        encoder::Embedding e;
        const auto r = b.row(i);
        e.values.assign(r.begin(), r.end());
        e.modality = static_cast<Modality>(b.modality_ids[i]);
        e.view = b.views[i];
        e.patient_id = b.patient_id;
        e.instant = b.instants[i];
        e.span_end = b.span_ends[i];
        out.push_back(std::move(e));
    }
    return out;
}

json metrics_json(const eval::GlobalMetrics& m) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json("undefined"); };
    return {{"n_folds", m.n_folds}, {"n_skipped", m.n_skipped}, {"n_predictions", m.n_predictions},
            {"rmse_mean", m.rmse_mean}, {"rmse_std", m.rmse_std}, {"rmse", m.rmse}, {"mae", m.mae},
            {"r2", opt(m.r2)}, {"pearson", opt(m.pearson)}, {"spearman", opt(m.spearman)}};
}

}  // namespace

std::string simulate(const RunConfig& cfg, const fs::path& out) {
    cfg.validate();
    cohortsim::CohortOptions opt;
    opt.pss_noise_sd = cfg.simulate.pss_noise_sd;
    opt.flatline_probability = cfg.simulate.flatline_probability;
    const auto cohort = cohortsim::generate_cohort(cfg.simulate.patients, cfg.simulate.weeks, cfg.seed, opt);
    cohortsim::write_cohort(cohort, out);
    std::size_t sessions = 0, days = 0, nights = 0;
    for (const auto& p : cohort.patients) {
        sessions += p.ecg_sessions.size();
        days += p.activity.size();
        nights += p.nights.size();
    }
    write_run_json(out, "simulate", cfg, json::object(),
                   {{"patients", cohort.patients.size()}, {"ecg_sessions", sessions}, {"activity_days", days},
                    {"sleep_nights", nights}});
    return "simulated " + std::to_string(cohort.patients.size()) + " patients, " + std::to_string(sessions) +
           " ECG sessions";
}

std::string transform_ecg(const RunConfig& cfg, const fs::path& in, const fs::path& out) {
    cfg.validate();
    require_dir(in);
    const fs::path src = fs::is_directory(in / "ecg") ? in / "ecg" : in;
    const auto files = sorted_files(src, {".f32", ".csv"});
    fs::create_directories(out / "ecg");
    std::ofstream listing(out / "instances_ecg.jsonl");
    std::ofstream wlog(out / "ecg_windows.csv");
    wlog << "patient_id,recording,window_start,quality,status\n";
    std::size_t n_images = 0, n_windows = 0, n_accepted = 0;
    for (const auto& f : files) {
        const auto rec = ecg::read_ecg(f);
        std::vector<EcgWindowLog> log;
        const auto images = ecg_instances(rec, cfg.ecg, &log, cfg.jobs);
        const std::string stem = f.stem().string();
        for (const auto& l : log) {
            wlog << l.patient_id << ',' << stem << ',' << format_timestamp(l.window_start) << ','
                 << format_double(l.quality) << ',' << l.status << '\n';
            ++n_windows;
            if (l.status != "low_quality") ++n_accepted;
        }
        fs::create_directories(out / "ecg" / rec.patient_id);
        for (const auto& img : images) {
            const auto k = (img.instant - rec.start_time).count() / static_cast<long long>(ecg::kWindowSeconds);
            const fs::path rel = fs::path("ecg") / rec.patient_id /
                                 (stem + "_" + fmt_index("w", static_cast<int>(k)) + "_" +
                                  std::string(view_name(img.view)) + ".png");
            write_png(out / rel, img.pixels,
                      {{"patient_id", img.patient_id},
                       {"view", std::string(view_name(img.view))},
                       {"instant", format_timestamp(img.instant)}});
            listing << instance_line(rel, img).dump() << '\n';
            ++n_images;
        }
    }
    if (!listing || !wlog) throw DataError("cannot write ECG transform outputs in '" + out.string() + "'");
    write_run_json(out, "transform ecg", cfg, {{"in", in.string()}},
                   {{"recordings", files.size()}, {"windows", n_windows}, {"windows_accepted", n_accepted},
                    {"instances", n_images}});
    return "transformed " + std::to_string(files.size()) + " recordings into " + std::to_string(n_images) +
           " instances";
}

std::string transform_watch(const RunConfig& cfg, const fs::path& in, const fs::path& out) {
    cfg.validate();
    require_dir(in);
    std::map<std::string, PatientWatchData> data;
    auto patient = [&](const std::string& pid) -> PatientWatchData& {
        auto& d = data[pid];
        d.patient_id = pid;
        return d;
    };
    std::vector<std::string> features = cfg.watch.activity_features;
    if (fs::exists(in / "activity.csv")) {
        auto table = weekly::read_activity_csv(in / "activity.csv");
        features = table.feature_names;
        for (auto& r : table.records) patient(r.patient_id).activity.push_back(std::move(r));
    }
    if (fs::exists(in / "sleep_nights.csv"))
        for (auto& n : weekly::read_sleep_csv(in / "sleep_nights.csv")) patient(n.patient_id).nights.push_back(n);
    if (fs::exists(in / "sleep_epochs.jsonl"))
        for (auto& e : weekly::read_epochs_jsonl(in / "sleep_epochs.jsonl"))
            patient(e.patient_id).epochs.push_back(std::move(e));
    if (data.empty()) throw DataError("no activity or sleep records under '" + in.string() + "'");

    fs::create_directories(out / "watch");
    std::ofstream listing(out / "instances_watch.jsonl");
    std::ofstream wlog(out / "weeks.csv");
    wlog << "patient_id,modality,week_index,week_start,missing_fraction,status\n";
    std::size_t n_images = 0;
    for (auto& [pid, d] : data) {
        d.activity_features = features;
        std::vector<WeekLogRow> log;
        const auto images = watch_instances(d, cfg.watch, &log);
        for (const auto& l : log)
            wlog << l.patient_id << ',' << modality_name(l.modality) << ',' << l.week_index << ','
                 << format_date(l.week_start) << ',' << format_double(l.missing_fraction) << ','
                 << (l.retained ? "retained" : "excluded") << '\n';
        fs::create_directories(out / "watch" / pid);
        for (const auto& img : images) {
            const std::string name = std::string(view_name(img.view)) + "_" + format_date(date_of(img.instant));
            const fs::path rel = fs::path("watch") / pid / (name + ".png");
            write_png(out / rel, img.pixels,
                      {{"patient_id", img.patient_id},
                       {"view", std::string(view_name(img.view))},
                       {"instant", format_timestamp(img.instant)}});
            listing << instance_line(rel, img).dump() << '\n';
            ++n_images;
        }
    }
    if (!listing || !wlog) throw DataError("cannot write watch transform outputs in '" + out.string() + "'");
    write_run_json(out, "transform watch", cfg, {{"in", in.string()}},
                   {{"patients", data.size()}, {"instances", n_images}});
    return "rendered " + std::to_string(n_images) + " watch instances for " + std::to_string(data.size()) +
           " patients";
}

std::string embed(const RunConfig& cfg, const std::vector<fs::path>& in, const fs::path& out) {
    cfg.validate();
    if (in.empty()) throw ArgumentError("embed needs at least one input directory");
    std::vector<std::pair<fs::path, ListedInstance>> all;
    for (const auto& dir : in) {
        require_dir(dir);
        const auto listings = sorted_files(dir, {".jsonl"});
        bool any = false;
        for (const auto& l : listings) {
            if (l.filename().string().rfind("instances_", 0) != 0) continue;
            any = true;
            for (auto& li : read_listing(l)) all.emplace_back(dir, std::move(li));
        }
        if (!any) throw DataError("no instances_*.jsonl listing in '" + dir.string() + "'");
    }
    const auto enc = make_encoder(cfg);
    std::vector<encoder::Embedding> embs(all.size());
    detail::parallel_for(all.size(), cfg.jobs, [&](std::size_t i) {
        InstanceImage img = all[i].second.meta;
        img.pixels = read_png(all[i].first / all[i].second.file);
        if (!is_valid_instance_raster(img.pixels))
            throw DataError("instance raster '" + all[i].second.file.string() + "' is not 224x224");
        embs[i] = enc.encode(img);
    });
    std::map<std::string, std::vector<encoder::Embedding>> per;
    for (auto& e : embs) per[e.patient_id].push_back(std::move(e));
    fs::create_directories(out);
    std::ofstream summary(out / "embeddings.csv");
    summary << "patient_id,n,n_ecg,n_activity,n_sleep\n";
    for (const auto& [pid, es] : per) {
        const auto cache = embedding_cache(pid, es);
        bags::write_bag(cache, out / (pid + ".wme"));
        const std::array<bags::Bag, 1> one{cache};
        const auto counts = bags::tabulate_modalities(one);
        summary << pid << ',' << cache.size() << ',' << counts[0] << ',' << counts[1] << ',' << counts[2] << '\n';
    }
    if (!summary) throw DataError("cannot write embeddings.csv");
    json inputs = json::array();
    for (const auto& d : in) inputs.push_back(d.string());
    write_run_json(out, "embed", cfg, {{"in", inputs}, {"encoder", make_encoder(cfg).branch1().id()}},
                   {{"patients", per.size()}, {"embeddings", embs.size()}});
    return "embedded " + std::to_string(embs.size()) + " instances for " + std::to_string(per.size()) + " patients";
}

std::string build_bag_files(const RunConfig& cfg, const fs::path& embeddings, const fs::path& assessments,
                            const fs::path& out) {
    cfg.validate();
    require_dir(embeddings);
    std::map<std::string, std::vector<encoder::Embedding>> per;
    for (const auto& f : sorted_files(embeddings, {".wme"})) {
        const auto cache = bags::read_bag(f);
        auto es = embeddings_of(cache);
        auto& dst = per[cache.patient_id];
        dst.insert(dst.end(), es.begin(), es.end());
    }
    if (per.empty()) throw DataError("no .wme embedding files in '" + embeddings.string() + "'");
    const auto as = bags::read_assessments_csv(assessments);
    const auto built = bags::build_bags(per, as, bags::setting_for(cfg.bags.horizon));
    fs::create_directories(out);
    std::ofstream table(out / "bags.csv");
    table << "patient_id,horizon,n,n_ecg,n_activity,n_sleep,target\n";
    std::vector<bags::Bag> written;
    for (const auto& b : built.bags) {
        auto capped = bags::cap_instances(b, cfg.bags.cap, cfg.seed, cfg.bags.cap_policy);
        bags::write_bag(capped, out / (capped.id() + ".wmb"));
        const std::array<bags::Bag, 1> one{capped};
        const auto c = bags::tabulate_modalities(one);
        table << capped.patient_id << ',' << horizon_name(*capped.horizon) << ',' << capped.size() << ',' << c[0]
              << ',' << c[1] << ',' << c[2] << ',' << format_double(*capped.target) << '\n';
        written.push_back(std::move(capped));
    }
    if (!table) throw DataError("cannot write bags.csv");
    const auto totals = bags::tabulate_modalities(written);
    write_run_json(out, "bag", cfg, {{"embeddings", embeddings.string()}, {"assessments", assessments.string()}},
                   {{"bags", written.size()},
                    {"skipped", built.skipped},
                    {"instances", {{"ecg", totals[0]}, {"activity", totals[1]}, {"sleep", totals[2]}}}});
    return "built " + std::to_string(written.size()) + " " + std::string(horizon_name(cfg.bags.horizon)) +
           " bags (" + std::to_string(built.skipped.size()) + " patients skipped)";
}

std::vector<bags::Bag> read_bag_dir(const fs::path& dir) {
    require_dir(dir);
    std::vector<bags::Bag> out;
    for (const auto& f : sorted_files(dir, {".wmb"})) out.push_back(bags::read_bag(f));
    if (out.empty()) throw DataError("no .wmb bag files in '" + dir.string() + "'");
    return out;
}

std::string train_model(const RunConfig& cfg, const fs::path& bags_dir, const fs::path& out) {
    cfg.validate();
    std::vector<bags::Bag> pool;
    for (auto& b : read_bag_dir(bags_dir))
        if (!b.horizon || *b.horizon == cfg.bags.horizon) {
            auto f = bags::filter_modalities(b, cfg.modalities);
            if (f.size() > 0) pool.push_back(bags::cap_instances(f, cfg.bags.cap, cfg.seed, cfg.bags.cap_policy));
        }
    std::set<std::string> ids;
    for (const auto& b : pool) ids.insert(b.patient_id);
    if (ids.size() < 2) throw DataError("training needs bags from at least 2 patients");
    std::vector<std::string> patients(ids.begin(), ids.end());
    Rng rng(derive_seed(cfg.seed, "train/split"));
    for (std::size_t i = patients.size(); i > 1; --i) std::swap(patients[i - 1], patients[rng.below(i)]);
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(patients.size()))));
    const std::set<std::string> val_ids(patients.begin(), patients.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<bags::Bag> train_set, val_set;
    for (auto& b : pool) (val_ids.count(b.patient_id) ? val_set : train_set).push_back(std::move(b));
    mil::TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "train");
    const auto res = mil::train(train_set, val_set, tc);
    fs::create_directories(out);
    mil::write_checkpoint(out / "checkpoint.wmc", res.model);
    mil::write_history_csv(out / "history.csv", res.history);
    write_run_json(out, "train", cfg, {{"bags", bags_dir.string()}},
                   {{"train_bags", train_set.size()},
                    {"val_bags", val_set.size()},
                    {"val_patients", std::vector<std::string>(val_ids.begin(), val_ids.end())},
                    {"best_epoch", res.model.best_epoch},
                    {"best_val_rmse", res.model.best_val_rmse},
                    {"epochs_run", res.history.size()},
                    {"parameter_count", res.model.params.parameter_count()}});
    return "trained on " + std::to_string(train_set.size()) + " bags; best val RMSE " +
           format_double(res.model.best_val_rmse) + " at epoch " + std::to_string(res.model.best_epoch);
}

namespace {

eval::GlobalRow evaluate_into(const RunConfig& cfg, std::span<const bags::Bag> bs, const fs::path& out,
                              const fs::path& bags_dir) {
    const auto run = eval::run_loso(bs, cfg.loso());
    fs::create_directories(out);
    eval::write_folds_csv(out / "folds.csv", run.folds);
    eval::GlobalRow row{cfg.modalities.name(), cfg.bags.horizon, run.metrics, run.baseline};
    const std::array<eval::GlobalRow, 1> rows{row};
    eval::write_global_csv(out / "global.csv", rows);
    eval::write_scatter_png(out / "scatter.png", run.folds);
    write_run_json(out, "evaluate", cfg, {{"bags", bags_dir.string()}},
                   {{"metrics", metrics_json(run.metrics)},
                    {"baseline", metrics_json(run.baseline)},
                    {"emptied_bags", run.emptied_bags},
                    {"log", run.log}});
    return row;
}

}  // namespace

std::string evaluate(const RunConfig& cfg, const fs::path& bags_dir, const fs::path& out) {
    cfg.validate();
    const auto bs = read_bag_dir(bags_dir);
    const auto row = evaluate_into(cfg, bs, out, bags_dir);
    return "LOSO " + row.modalities + " " + std::string(horizon_name(row.horizon)) + ": pooled RMSE " +
           format_double(row.metrics.rmse) + " (baseline " + format_double(row.baseline.rmse) + ")";
}

std::string ablate(const RunConfig& cfg, const fs::path& bags_dir, const fs::path& out) {
    cfg.validate();
    const auto bs = read_bag_dir(bags_dir);
    std::vector<eval::GlobalRow> rows;
    for (const char* m : {"all", "ps", "pe", "se"}) {
        RunConfig c = cfg;
        c.modalities = bags::ModalitySet::parse(m);
        rows.push_back(evaluate_into(c, bs, out / m, bags_dir));
    }
    eval::write_global_csv(out / "global.csv", rows);
    json summary = json::object();
    for (const auto& r : rows) summary[r.modalities] = metrics_json(r.metrics);
    write_run_json(out, "ablate", cfg, {{"bags", bags_dir.string()}}, summary);
    return "ablation over 4 modality sets written to " + out.string();
}

std::string report(const std::vector<fs::path>& in, const fs::path& out) {
    std::vector<eval::GlobalRow> rows;
    for (const auto& dir : in) {
        const auto src = fs::is_directory(dir) ? dir / "global.csv" : dir;
        if (!fs::exists(src)) throw DataError("no global.csv at '" + dir.string() + "'");
        for (auto& r : eval::read_global_csv(src)) rows.push_back(std::move(r));
    }
    fs::create_directories(out);
    const auto mt = eval::metric_table(rows);
    const auto at = eval::ablation_table(rows);
    eval::write_table_csv(out / "metrics_by_horizon.csv", mt);
    eval::write_table_csv(out / "ablation_by_horizon.csv", at);
    std::ofstream txt(out / "report.txt");
    txt << "Metric x horizon (all modalities)\n\n" << eval::format_table_text(mt) << "\nAblation x horizon\n\n"
        << eval::format_table_text(at);
    if (!txt) throw DataError("cannot write report.txt");
    json inputs = json::array();
    for (const auto& d : in) inputs.push_back(d.string());
    json j{{"stage", "report"}, {"inputs", inputs}, {"rows", rows.size()}};
    std::ofstream rj(out / "run.json");
    rj << j.dump(2) << '\n';
    return "report over " + std::to_string(rows.size()) + " runs written to " + out.string();
}

}  // namespace wearmil::pipeline
