#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wearmil/wearmil.h"

namespace {

struct Common {
    std::string config;
    std::optional<unsigned long long> seed;
    std::optional<int> jobs;
    std::vector<std::string> overrides;
};

int exit_code(wm_status s) {
    switch (s) {
        case WM_OK: return 0;
        case WM_ERR_ARGUMENT:
        case WM_ERR_CONFIG: return 2;
        default: return 1;
    }
}

int fail(wm_status s) {
    std::fprintf(stderr, "wearmil: %s: %s\n", wm_status_name(s), wm_last_error());
    return exit_code(s);
}

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", c.seed, "Master seed");
    sub->add_option("--jobs", c.jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--set", c.overrides, "Override a config value, e.g. train.lr0=0.0005");
}

class Config {
public:
    ~Config() { wm_config_free(cfg_); }
    wm_status open(const Common& c) {
        wm_status s = c.config.empty() ? wm_config_new(&cfg_) : wm_config_load(c.config.c_str(), &cfg_);
        if (s != WM_OK) return s;
        if (c.seed && (s = set("seed", std::to_string(*c.seed))) != WM_OK) return s;
        if (c.jobs && (s = set("jobs", std::to_string(*c.jobs))) != WM_OK) return s;
        for (const auto& kv : c.overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) {
                std::fprintf(stderr, "wearmil: --set expects key=value, got '%s'\n", kv.c_str());
                return WM_ERR_ARGUMENT;
            }
            if ((s = set(kv.substr(0, eq), kv.substr(eq + 1))) != WM_OK) return s;
        }
        return WM_OK;
    }
    wm_status set(const std::string& key, const std::string& value) {
        return wm_config_set(cfg_, key.c_str(), value.c_str());
    }
    const wm_config* get() const { return cfg_; }

private:
    wm_config* cfg_ = nullptr;
};

void quote_into(std::string& s) { s = "\"" + s + "\""; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Wearable-signal multiple-instance stress regression pipeline"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(wm_version()));

    Common common;
    std::string in, out, embeddings, assessments, bags_dir;
    std::vector<std::string> ins;
    std::optional<int> patients, weeks;
    std::optional<std::string> horizon, modalities, cap_policy;
    std::optional<unsigned long long> cap;
    std::optional<double> quality_threshold;
    std::optional<std::string> missing_unit;

    auto* sim = app.add_subcommand("simulate", "Generate a synthetic cohort");
    add_common(sim, common);
    sim->add_option("--out", out, "Output directory")->required();
    sim->add_option("--patients", patients, "Number of patients");
    sim->add_option("--weeks", weeks, "Monitoring weeks per patient");

    auto* tr = app.add_subcommand("transform", "Render instance images");
    tr->require_subcommand(1);
    auto* tr_ecg = tr->add_subcommand("ecg", "ECG recordings to four views per window");
    auto* tr_watch = tr->add_subcommand("watch", "Activity and sleep tables to weekly heatmaps and hypnograms");
    for (auto* s : {tr_ecg, tr_watch}) {
        add_common(s, common);
        s->add_option("--in", in, "Input directory")->required()->check(CLI::ExistingDirectory);
        s->add_option("--out", out, "Output directory")->required();
    }
    tr_ecg->add_option("--quality-threshold", quality_threshold, "Minimum signal quality of a window");
    tr_watch->add_option("--missing-unit", missing_unit, "cell or day");

    auto* emb = app.add_subcommand("embed", "Encode instance images into 192-d embeddings");
    add_common(emb, common);
    emb->add_option("--in", ins, "Transform output directories")->required()->check(CLI::ExistingDirectory);
    emb->add_option("--out", out, "Output directory")->required();

    auto* bag = app.add_subcommand("bag", "Assemble patient-horizon bags");
    add_common(bag, common);
    bag->add_option("--embeddings", embeddings, "Embedding directory")->required()->check(CLI::ExistingDirectory);
    bag->add_option("--assessments", assessments, "Assessment CSV")->required()->check(CLI::ExistingFile);
    bag->add_option("--out", out, "Output directory")->required();
    bag->add_option("--horizon", horizon, "M3 or M6");
    bag->add_option("--cap", cap, "Maximum instances per bag");
    bag->add_option("--cap-policy", cap_policy, "uniform or latest");

    auto* train = app.add_subcommand("train", "Fit one model on a patient-level split");
    auto* ev = app.add_subcommand("evaluate", "Leave-one-subject-out evaluation");
    auto* abl = app.add_subcommand("ablate", "LOSO over all, ps, pe and se modality sets");
    for (auto* s : {train, ev, abl}) {
        add_common(s, common);
        s->add_option("--bags", bags_dir, "Bag directory")->required()->check(CLI::ExistingDirectory);
        s->add_option("--out", out, "Output directory")->required();
        s->add_option("--horizon", horizon, "M3 or M6");
        s->add_option("--cap", cap, "Maximum instances per bag");
        s->add_option("--cap-policy", cap_policy, "uniform or latest");
        if (s != abl) s->add_option("--modalities", modalities, "all, ps, pe, se or a list of ecg,activity,sleep");
    }

    auto* rep = app.add_subcommand("report", "Metric and ablation tables from evaluation outputs");
    rep->add_option("--in", ins, "Evaluation or ablation directories")->required();
    rep->add_option("--out", out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    char* summary = nullptr;
    wm_status s = WM_OK;

    if (rep->parsed()) {
        std::vector<const char*> p;
        for (const auto& i : ins) p.push_back(i.c_str());
        s = wm_report(p.data(), p.size(), out.c_str(), &summary);
    } else {
        Config cfg;
        if ((s = cfg.open(common)) != WM_OK) return fail(s);
        auto apply = [&](const char* key, std::optional<std::string> v) {
            if (!v || s != WM_OK) return;
            quote_into(*v);
            s = cfg.set(key, *v);
        };
        if (patients && s == WM_OK) s = cfg.set("simulate.patients", std::to_string(*patients));
        if (weeks && s == WM_OK) s = cfg.set("simulate.weeks", std::to_string(*weeks));
        if (cap && s == WM_OK) s = cfg.set("bags.cap", std::to_string(*cap));
        if (quality_threshold && s == WM_OK) s = cfg.set("ecg.quality_threshold", std::to_string(*quality_threshold));
        apply("watch.missing_unit", missing_unit);
        apply("bags.horizon", horizon);
        apply("bags.cap_policy", cap_policy);
        apply("evaluate.modalities", modalities);
        if (s != WM_OK) return fail(s);

        if (sim->parsed())
            s = wm_simulate(cfg.get(), out.c_str(), &summary);
        else if (tr_ecg->parsed())
            s = wm_transform_ecg(cfg.get(), in.c_str(), out.c_str(), &summary);
        else if (tr_watch->parsed())
            s = wm_transform_watch(cfg.get(), in.c_str(), out.c_str(), &summary);
        else if (emb->parsed()) {
            std::vector<const char*> p;
            for (const auto& i : ins) p.push_back(i.c_str());
            s = wm_embed(cfg.get(), p.data(), p.size(), out.c_str(), &summary);
        } else if (bag->parsed())
            s = wm_bag_build(cfg.get(), embeddings.c_str(), assessments.c_str(), out.c_str(), &summary);
        else if (train->parsed())
            s = wm_train(cfg.get(), bags_dir.c_str(), out.c_str(), &summary);
        else if (ev->parsed())
            s = wm_evaluate(cfg.get(), bags_dir.c_str(), out.c_str(), &summary);
        else if (abl->parsed())
            s = wm_ablate(cfg.get(), bags_dir.c_str(), out.c_str(), &summary);
    }
    if (s != WM_OK) return fail(s);
    if (summary) std::printf("%s\n", summary);
    wm_string_free(summary);
    return 0;
}
