#include "wearmil/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "parallel.hpp"
#include "wearmil/raster.hpp"

namespace wearmil::eval {

std::vector<Fold> loso_folds(std::vector<std::string> patients, std::uint64_t seed) {
    std::sort(patients.begin(), patients.end());
    if (std::adjacent_find(patients.begin(), patients.end()) != patients.end())
        throw ArgumentError("duplicate patient ids in LOSO input");
    if (patients.size() < 3) throw ArgumentError("LOSO needs at least 3 patients");
    std::vector<Fold> folds;
    for (const auto& test : patients) {
        std::vector<std::string> rest;
        for (const auto& p : patients)
            if (p != test) rest.push_back(p);
        Rng rng(derive_seed(seed, "loso", test));
        for (std::size_t i = rest.size(); i > 1; --i) std::swap(rest[i - 1], rest[rng.below(i)]);
        const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(rest.size()))));
        Fold f;
        f.test = test;
        f.val.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
        f.train.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());
        std::sort(f.val.begin(), f.val.end());
        std::sort(f.train.begin(), f.train.end());
        folds.push_back(std::move(f));
    }
    return folds;
}

double rmse(std::span<const Prediction> p) {
    if (p.empty()) throw ArgumentError("RMSE of no predictions");
    double s = 0.0;
    for (const auto& x : p) s += (x.yhat - x.y) * (x.yhat - x.y);
    return std::sqrt(s / static_cast<double>(p.size()));
}

double mae(std::span<const Prediction> p) {
    if (p.empty()) throw ArgumentError("MAE of no predictions");
    double s = 0.0;
    for (const auto& x : p) s += std::abs(x.yhat - x.y);
    return s / static_cast<double>(p.size());
}

std::optional<double> r2(std::span<const Prediction> p) {
    if (p.empty()) return std::nullopt;
    double mean = 0.0;
    for (const auto& x : p) mean += x.y;
    mean /= static_cast<double>(p.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (const auto& x : p) {
        ss_res += (x.y - x.yhat) * (x.y - x.yhat);
        ss_tot += (x.y - mean) * (x.y - mean);
    }
    if (ss_tot == 0.0) return std::nullopt;
    return 1.0 - ss_res / ss_tot;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ArgumentError("correlation of unequal-length series");
    const std::size_t n = x.size();
    if (n < 2) return std::nullopt;
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

std::vector<double> average_ranks(std::span<const double> x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    return pearson(rx, ry);
}

namespace {

GlobalMetrics metrics_of(std::span<const FoldResult> folds, bool use_baseline) {
    GlobalMetrics g;
    std::vector<Prediction> pooled;
    std::vector<double> fold_rmse;
    for (const auto& f : folds) {
        if (f.skipped) {
            ++g.n_skipped;
            continue;
        }
        std::vector<Prediction> ps = f.predictions;
        if (use_baseline)
            for (std::size_t i = 0; i < ps.size(); ++i) ps[i].yhat = f.baseline.at(i);
        fold_rmse.push_back(rmse(ps));
        pooled.insert(pooled.end(), ps.begin(), ps.end());
    }
    g.n_folds = fold_rmse.size();
    g.n_predictions = pooled.size();
    if (fold_rmse.empty()) return g;
    g.rmse_mean = std::accumulate(fold_rmse.begin(), fold_rmse.end(), 0.0) / static_cast<double>(fold_rmse.size());
    double v = 0.0;
    for (double r : fold_rmse) v += (r - g.rmse_mean) * (r - g.rmse_mean);
    g.rmse_std = std::sqrt(v / static_cast<double>(fold_rmse.size()));
    g.rmse = rmse(pooled);
    g.mae = mae(pooled);
    g.r2 = r2(pooled);
    std::vector<double> yhat, y;
    for (const auto& p : pooled) {
        yhat.push_back(p.yhat);
        y.push_back(p.y);
    }
    g.pearson = pearson(yhat, y);
    g.spearman = spearman(yhat, y);
    return g;
}

}  // namespace

GlobalMetrics compute_metrics(std::span<const FoldResult> folds) { return metrics_of(folds, false); }
GlobalMetrics compute_baseline_metrics(std::span<const FoldResult> folds) { return metrics_of(folds, true); }

LosoRun run_loso(std::span<const bags::Bag> all_bags, const LosoConfig& cfg, const FoldObserver& observer) {
    cfg.train.validate();
    LosoRun run;
    std::set<std::string> patients;
    std::vector<bags::Bag> prepared;
    for (const auto& b : all_bags) {
        if (b.horizon && *b.horizon != cfg.horizon) continue;
        if (!b.target) throw DataError("bag " + b.id() + " has no target");
        patients.insert(b.patient_id);
        auto f = bags::filter_modalities(b, cfg.modalities);
        if (f.size() == 0) {
            ++run.emptied_bags;
            run.log.push_back(b.id() + ": emptied by modality filter " + cfg.modalities.name());
            continue;
        }
        prepared.push_back(bags::cap_instances(f, cfg.cap, cfg.seed, cfg.cap_policy));
    }
    if (patients.empty()) throw DataError("no bags for horizon " + std::string(horizon_name(cfg.horizon)));
    if (prepared.empty())
        throw ConfigError("modality filter '" + cfg.modalities.name() + "' emptied every bag");

    const auto folds = loso_folds({patients.begin(), patients.end()}, cfg.seed);
    run.folds.resize(folds.size());
    detail::parallel_for(folds.size(), cfg.jobs, [&](std::size_t i) {
        const Fold& fold = folds[i];
        FoldResult& r = run.folds[i];
        r.held_out_patient = fold.test;
        r.horizon = cfg.horizon;
        const std::set<std::string> train_ids(fold.train.begin(), fold.train.end());
        const std::set<std::string> val_ids(fold.val.begin(), fold.val.end());
        std::vector<bags::Bag> train_set, val_set;
        std::vector<const bags::Bag*> test_set;
        for (const auto& b : prepared) {
            if (b.patient_id == fold.test) test_set.push_back(&b);
            else if (train_ids.count(b.patient_id)) train_set.push_back(b);
            else if (val_ids.count(b.patient_id)) val_set.push_back(b);
        }
        r.train_bags = train_set.size();
        r.val_bags = val_set.size();
        if (test_set.empty()) {
            r.skipped = true;
            r.skip_reason = "held-out patient has no bags after modality filtering";
            return;
        }
        if (train_set.empty() || val_set.empty()) {
            r.skipped = true;
            r.skip_reason = "no training or validation bags";
            return;
        }
        mil::TrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.seed, "loso/train", fold.test);
        mil::BatchObserver obs;
        if (observer)
            obs = [&](int epoch, std::size_t batch, std::span<const bags::Bag* const> bs) {
                observer(fold.test, epoch, batch, bs);
            };
        auto result = mil::train(train_set, val_set, tc, obs);
        double base = 0.0;
        for (const auto& b : train_set) base += *b.target;
        base /= static_cast<double>(train_set.size());
        for (const auto* b : test_set) {
            r.predictions.push_back({b->id(), b->patient_id, result.model.predict(*b), *b->target});
            r.baseline.push_back(base);
        }
        r.fold_rmse = rmse(r.predictions);
        r.best_epoch = result.model.best_epoch;
        r.best_val_rmse = result.model.best_val_rmse;
        r.history = std::move(result.history);
    });
    for (const auto& f : run.folds)
        if (f.skipped) run.log.push_back("fold " + f.held_out_patient + " skipped: " + f.skip_reason);
    run.metrics = compute_metrics(run.folds);
    run.baseline = compute_baseline_metrics(run.folds);
    return run;
}

// ---------------------------------------------------------------------------

namespace {

std::string opt_text(const std::optional<double>& v) { return v ? format_double(*v) : "undefined"; }

std::optional<double> parse_opt(const std::string& s) {
    if (s == "undefined") return std::nullopt;
    return std::stod(s);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

const char* kGlobalHeader =
    "modalities,horizon,n_folds,n_skipped,n_predictions,rmse_mean,rmse_std,rmse,mae,r2,pearson,spearman,"
    "baseline_rmse_mean,baseline_rmse_std,baseline_rmse,baseline_mae,baseline_r2,baseline_pearson,"
    "baseline_spearman";

std::string fixed(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string fixed_opt(const std::optional<double>& v) { return v ? fixed(*v) : "undefined"; }

}  // namespace

void write_folds_csv(const std::filesystem::path& path, std::span<const FoldResult> folds) {
    std::ofstream out(path);
    out << "held_out_patient,horizon,bag_id,y,yhat,baseline,fold_rmse,best_epoch,status\n";
    for (const auto& f : folds) {
        if (f.skipped) {
            out << f.held_out_patient << ',' << horizon_name(f.horizon) << ",,,,,,,skipped\n";
            continue;
        }
        for (std::size_t i = 0; i < f.predictions.size(); ++i) {
            const auto& p = f.predictions[i];
            out << f.held_out_patient << ',' << horizon_name(f.horizon) << ',' << p.bag_id << ','
                << format_double(p.y) << ',' << format_double(p.yhat) << ',' << format_double(f.baseline[i]) << ','
                << format_double(f.fold_rmse) << ',' << f.best_epoch << ",ok\n";
        }
    }
    if (!out) throw DataError("cannot write '" + path.string() + "'");
}

void write_global_csv(const std::filesystem::path& path, std::span<const GlobalRow> rows) {
    std::ofstream out(path);
    out << kGlobalHeader << '\n';
    for (const auto& r : rows) {
        const auto& m = r.metrics;
        const auto& b = r.baseline;
        out << r.modalities << ',' << horizon_name(r.horizon) << ',' << m.n_folds << ',' << m.n_skipped << ','
            << m.n_predictions << ',' << format_double(m.rmse_mean) << ',' << format_double(m.rmse_std) << ','
            << format_double(m.rmse) << ',' << format_double(m.mae) << ',' << opt_text(m.r2) << ','
            << opt_text(m.pearson) << ',' << opt_text(m.spearman) << ',' << format_double(b.rmse_mean) << ','
            << format_double(b.rmse_std) << ',' << format_double(b.rmse) << ',' << format_double(b.mae) << ','
            << opt_text(b.r2) << ',' << opt_text(b.pearson) << ',' << opt_text(b.spearman) << '\n';
    }
    if (!out) throw DataError("cannot write '" + path.string() + "'");
}

std::vector<GlobalRow> read_global_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::string line;
    std::getline(in, line);
    if (line != kGlobalHeader) throw DataError("unexpected header in '" + path.string() + "'");
    std::vector<GlobalRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto c = split_csv(line);
        if (c.size() != 19) throw DataError("malformed global.csv row '" + line + "'");
        try {
            GlobalRow r;
            r.modalities = c[0];
            r.horizon = parse_horizon(c[1]);
            auto& m = r.metrics;
            m.n_folds = std::stoul(c[2]);
            m.n_skipped = std::stoul(c[3]);
            m.n_predictions = std::stoul(c[4]);
            m.rmse_mean = std::stod(c[5]);
            m.rmse_std = std::stod(c[6]);
            m.rmse = std::stod(c[7]);
            m.mae = std::stod(c[8]);
            m.r2 = parse_opt(c[9]);
            m.pearson = parse_opt(c[10]);
            m.spearman = parse_opt(c[11]);
            auto& b = r.baseline;
            b.n_folds = m.n_folds;
            b.n_skipped = m.n_skipped;
            b.n_predictions = m.n_predictions;
            b.rmse_mean = std::stod(c[12]);
            b.rmse_std = std::stod(c[13]);
            b.rmse = std::stod(c[14]);
            b.mae = std::stod(c[15]);
            b.r2 = parse_opt(c[16]);
            b.pearson = parse_opt(c[17]);
            b.spearman = parse_opt(c[18]);
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw DataError("malformed global.csv row '" + line + "'");
        }
    }
    return rows;
}

void write_scatter_png(const std::filesystem::path& path, std::span<const FoldResult> folds) {
    constexpr std::size_t side = 400;
    constexpr double lo = 0.0, hi = 40.0;
    Raster img(side, side, 1.0);
    auto px = [&](double v) {
        const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
        return static_cast<std::size_t>(std::lround(t * static_cast<double>(side - 1)));
    };
    for (std::size_t i = 0; i < side; ++i) {
        img(side - 1 - i, i) = 0.6;
        img(0, i) = img(side - 1, i) = img(i, 0) = img(i, side - 1) = 0.0;
    }
    std::size_t n = 0;
    for (const auto& f : folds)
        for (const auto& p : f.predictions) {
            const std::size_t x = px(p.y), y = side - 1 - px(p.yhat);
            for (std::size_t r = (y > 2 ? y - 2 : 0); r <= std::min(side - 1, y + 2); ++r)
                for (std::size_t c = (x > 2 ? x - 2 : 0); c <= std::min(side - 1, x + 2); ++c) img(r, c) = 0.0;
            ++n;
        }
    write_png(path, img,
              {{"x_label", "observed PSS"},
               {"y_label", "predicted PSS"},
               {"x_min", format_double(lo)},
               {"x_max", format_double(hi)},
               {"y_min", format_double(lo)},
               {"y_max", format_double(hi)},
               {"identity_line", "true"},
               {"points", std::to_string(n)}});
}

namespace {

std::vector<Horizon> horizons_of(std::span<const GlobalRow> rows) {
    std::set<Horizon> hs;
    for (const auto& r : rows) hs.insert(r.horizon);
    return {hs.begin(), hs.end()};
}

const GlobalRow* find_row(std::span<const GlobalRow> rows, const std::string& mods, Horizon h) {
    for (const auto& r : rows)
        if (r.modalities == mods && r.horizon == h) return &r;
    return nullptr;
}

}  // namespace

Table metric_table(std::span<const GlobalRow> rows) {
    std::vector<GlobalRow> all;
    for (const auto& r : rows)
        if (r.modalities == "all") all.push_back(r);
    Table t;
    t.header = {"metric"};
    const auto hs = horizons_of(all);
    for (Horizon h : hs) t.header.emplace_back(horizon_name(h));
    const char* names[] = {"RMSE (mean+/-std)", "Global RMSE", "Global MAE", "Global R2", "Global Pearson r",
                           "Global Spearman rho"};
    for (int k = 0; k < 6; ++k) {
        std::vector<std::string> row{names[k]};
        for (Horizon h : hs) {
            const auto& m = find_row(all, "all", h)->metrics;
            switch (k) {
                case 0: row.push_back(fixed(m.rmse_mean) + "+/-" + fixed(m.rmse_std)); break;
                case 1: row.push_back(fixed(m.rmse)); break;
                case 2: row.push_back(fixed(m.mae)); break;
                case 3: row.push_back(fixed_opt(m.r2)); break;
                case 4: row.push_back(fixed_opt(m.pearson)); break;
                default: row.push_back(fixed_opt(m.spearman)); break;
            }
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

Table ablation_table(std::span<const GlobalRow> rows) {
    Table t;
    t.header = {"modalities"};
    const auto hs = horizons_of(rows);
    for (Horizon h : hs) {
        t.header.push_back(std::string(horizon_name(h)) + " RMSE (mean+/-std)");
        t.header.push_back(std::string(horizon_name(h)) + " Global RMSE");
    }
    std::vector<std::string> mods;
    for (const char* m : {"all", "ps", "pe", "se"})
        for (const auto& r : rows)
            if (r.modalities == m && std::find(mods.begin(), mods.end(), m) == mods.end()) mods.push_back(m);
    for (const auto& r : rows)
        if (std::find(mods.begin(), mods.end(), r.modalities) == mods.end()) mods.push_back(r.modalities);
    for (const auto& m : mods) {
        std::vector<std::string> row{m};
        for (Horizon h : hs) {
            const GlobalRow* r = find_row(rows, m, h);
            row.push_back(r ? fixed(r->metrics.rmse_mean) + "+/-" + fixed(r->metrics.rmse_std) : "");
            row.push_back(r ? fixed(r->metrics.rmse) : "");
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

void write_table_csv(const std::filesystem::path& path, const Table& t) {
    std::ofstream out(path);
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
        out << '\n';
    };
    line(t.header);
    for (const auto& r : t.rows) line(r);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
}

std::string format_table_text(const Table& t) {
    std::vector<std::size_t> w(t.header.size(), 0);
    for (std::size_t i = 0; i < t.header.size(); ++i) w[i] = t.header[i].size();
    for (const auto& r : t.rows)
        for (std::size_t i = 0; i < r.size() && i < w.size(); ++i) w[i] = std::max(w[i], r[i].size());
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            const std::string c = i < cells.size() ? cells[i] : "";
            os << (i ? "  " : "") << c << std::string(w[i] - c.size(), ' ');
        }
        os << '\n';
    };
    line(t.header);
    std::size_t total = 0;
    for (std::size_t x : w) total += x;
    os << std::string(total + 2 * (w.size() - 1), '-') << '\n';
    for (const auto& r : t.rows) line(r);
    return os.str();
}

}  // namespace wearmil::eval
