#include "wearmil/wearmil.h"

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "wearmil/pipeline.hpp"

using namespace wearmil;

struct wm_config {
    pipeline::RunConfig cfg;
};
struct wm_bag {
    bags::Bag bag;
};
struct wm_model {
    mil::TrainedModel model;
};

namespace {

thread_local std::string g_error;

template <class Fn>
wm_status guard(Fn&& fn) {
    try {
        fn();
        g_error.clear();
        return WM_OK;
    } catch (const ArgumentError& e) {
        g_error = e.what();
        return WM_ERR_ARGUMENT;
    } catch (const ConfigError& e) {
        g_error = e.what();
        return WM_ERR_CONFIG;
    } catch (const FormatError& e) {
        g_error = e.what();
        return WM_ERR_FORMAT;
    } catch (const DataError& e) {
        g_error = e.what();
        return WM_ERR_DATA;
    } catch (const NumericError& e) {
        g_error = e.what();
        return WM_ERR_NUMERIC;
    } catch (const std::filesystem::filesystem_error& e) {
        g_error = e.what();
        return WM_ERR_IO;
    } catch (const std::exception& e) {
        g_error = e.what();
        return WM_ERR_INTERNAL;
    } catch (...) {
        g_error = "unknown error";
        return WM_ERR_INTERNAL;
    }
}

char* dup(const std::string& s) {
    char* p = static_cast<char*>(std::malloc(s.size() + 1));
    if (p) std::memcpy(p, s.c_str(), s.size() + 1);
    return p;
}

void need(const void* p, const char* what) {
    if (!p) throw ArgumentError(std::string(what) + " must not be NULL");
}

void emit(char** summary, const std::string& s) {
    if (summary) *summary = dup(s);
}

std::vector<std::filesystem::path> paths(const char* const* in, size_t n) {
    if (n > 0) need(in, "input list");
    std::vector<std::filesystem::path> out;
    for (size_t i = 0; i < n; ++i) {
        need(in[i], "input path");
        out.emplace_back(in[i]);
    }
    return out;
}

}  // namespace

extern "C" {

const char* wm_last_error(void) { return g_error.c_str(); }

const char* wm_status_name(wm_status s) {
    switch (s) {
        case WM_OK: return "ok";
        case WM_ERR_ARGUMENT: return "argument error";
        case WM_ERR_CONFIG: return "config error";
        case WM_ERR_DATA: return "data error";
        case WM_ERR_FORMAT: return "format error";
        case WM_ERR_NUMERIC: return "numeric error";
        case WM_ERR_IO: return "io error";
        case WM_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

const char* wm_version(void) { return "0.1.0"; }

void wm_string_free(char* s) { std::free(s); }

wm_status wm_config_new(wm_config** out) {
    return guard([&] {
        need(out, "out");
        *out = new wm_config{};
    });
}

wm_status wm_config_load(const char* path, wm_config** out) {
    return guard([&] {
        need(path, "path");
        need(out, "out");
        *out = new wm_config{pipeline::RunConfig::load(path)};
    });
}

wm_status wm_config_parse(const char* json_text, wm_config** out) {
    return guard([&] {
        need(json_text, "json_text");
        need(out, "out");
        *out = new wm_config{pipeline::RunConfig::from_json_text(json_text)};
    });
}

wm_status wm_config_set(wm_config* cfg, const char* key, const char* value) {
    return guard([&] {
        need(cfg, "cfg");
        need(key, "key");
        need(value, "value");
        cfg->cfg.set(key, value);
    });
}

wm_status wm_config_to_json(const wm_config* cfg, char** json_text) {
    return guard([&] {
        need(cfg, "cfg");
        need(json_text, "json_text");
        *json_text = dup(cfg->cfg.to_json_text());
    });
}

void wm_config_free(wm_config* cfg) { delete cfg; }

wm_status wm_simulate(const wm_config* cfg, const char* out_dir, char** summary) {
    return guard([&] {
        need(cfg, "cfg");
        need(out_dir, "out_dir");
        emit(summary, pipeline::simulate(cfg->cfg, out_dir));
    });
}

wm_status wm_transform_ecg(const wm_config* cfg, const char* in_dir, const char* out_dir, char** summary) {
    return guard([&] {
        need(cfg, "cfg");
        need(in_dir, "in_dir");
        need(out_dir, "out_dir");
        emit(summary, pipeline::transform_ecg(cfg->cfg, in_dir, out_dir));
    });
}

wm_status wm_transform_watch(const wm_config* cfg, const char* in_dir, const char* out_dir, char** summary) {
    return guard([&] {
        need(cfg, "cfg");
        need(in_dir, "in_dir");
        need(out_dir, "out_dir");
        emit(summary, pipeline::transform_watch(cfg->cfg, in_dir, out_dir));
    });
}

wm_status wm_embed(const wm_config* cfg, const char* const* in_dirs, size_t n_in, const char* out_dir,
                   char** summary) {
    return guard([&] {
        need(cfg, "cfg");
        need(out_dir, "out_dir");
        emit(summary, pipeline::embed(cfg->cfg, paths(in_dirs, n_in), out_dir));
    });
}

wm_status wm_bag_build(const wm_config* cfg, const char* embeddings_dir, const char* assessments_csv,
                       const char* out_dir, char** summary) {
    return guard([&] {
        need(cfg, "cfg");
        need(embeddings_dir, "embeddings_dir");
        need(assessments_csv, "assessments_csv");
        need(out_dir, "out_dir");
        emit(summary, pipeline::build_bag_files(cfg->cfg, embeddings_dir, assessments_csv, out_dir));
    });
}

wm_status wm_train(const wm_config* cfg, const char* bags_dir, const char* out_dir, char** summary) {
    return guard([&] {
        need(cfg, "cfg");
        need(bags_dir, "bags_dir");
        need(out_dir, "out_dir");
        emit(summary, pipeline::train_model(cfg->cfg, bags_dir, out_dir));
    });
}

wm_status wm_evaluate(const wm_config* cfg, const char* bags_dir, const char* out_dir, char** summary) {
    return guard([&] {
        need(cfg, "cfg");
        need(bags_dir, "bags_dir");
        need(out_dir, "out_dir");
        emit(summary, pipeline::evaluate(cfg->cfg, bags_dir, out_dir));
    });
}

wm_status wm_ablate(const wm_config* cfg, const char* bags_dir, const char* out_dir, char** summary) {
    return guard([&] {
        need(cfg, "cfg");
        need(bags_dir, "bags_dir");
        need(out_dir, "out_dir");
        emit(summary, pipeline::ablate(cfg->cfg, bags_dir, out_dir));
    });
}

wm_status wm_report(const char* const* in_dirs, size_t n_in, const char* out_dir, char** summary) {
    return guard([&] {
        need(out_dir, "out_dir");
        emit(summary, pipeline::report(paths(in_dirs, n_in), out_dir));
    });
}

wm_status wm_bag_read(const char* path, wm_bag** out) {
    return guard([&] {
        need(path, "path");
        need(out, "out");
        *out = new wm_bag{bags::read_bag(path)};
    });
}

size_t wm_bag_size(const wm_bag* bag) { return bag ? bag->bag.size() : 0; }

size_t wm_bag_dim(const wm_bag* bag) { return bag ? bag->bag.dim : 0; }

wm_status wm_bag_embeddings(const wm_bag* bag, float* buf, size_t capacity) {
    return guard([&] {
        need(bag, "bag");
        need(buf, "buf");
        const auto& e = bag->bag.embeddings;
        if (capacity < e.size()) throw ArgumentError("buffer holds fewer than n*dim floats");
        std::memcpy(buf, e.data(), e.size() * sizeof(float));
    });
}

wm_status wm_bag_target(const wm_bag* bag, double* target, int* has_target) {
    return guard([&] {
        need(bag, "bag");
        need(target, "target");
        need(has_target, "has_target");
        *has_target = bag->bag.target.has_value() ? 1 : 0;
        *target = bag->bag.target.value_or(0.0);
    });
}

const char* wm_bag_patient_id(const wm_bag* bag) { return bag ? bag->bag.patient_id.c_str() : ""; }

void wm_bag_free(wm_bag* bag) { delete bag; }

wm_status wm_model_load(const char* path, wm_model** out) {
    return guard([&] {
        need(path, "path");
        need(out, "out");
        *out = new wm_model{mil::read_checkpoint(path)};
    });
}

size_t wm_model_parameter_count(const wm_model* model) { return model ? model->model.params.parameter_count() : 0; }

wm_status wm_model_predict(const wm_model* model, const wm_bag* bag, double* prediction) {
    return guard([&] {
        need(model, "model");
        need(bag, "bag");
        need(prediction, "prediction");
        *prediction = model->model.predict(bag->bag);
    });
}

void wm_model_free(wm_model* model) { delete model; }

}  // extern "C"
