// Experiment runner exposing the library as subcommands with reproducible
// flat-file configs. All randomness flows from the single config seed via
// named substreams; reruns are byte-identical.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "conformal/conformal.hpp"

namespace fs = std::filesystem;
using namespace conformal;

namespace {

// ---------------------------------------------------------------------------
// Config: flat `key = value` lines with dotted keys, '#' comments.
// ---------------------------------------------------------------------------

class Config {
  public:
    Config() = default;

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        Config cfg;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            std::string trimmed = detail::trim(line);
            if (trimmed.empty()) continue;
            auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
            std::string key = detail::trim(trimmed.substr(0, eq));
            std::string value = detail::trim(trimmed.substr(eq + 1));
            if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing config key: " + key);
        return it->second;
    }

    std::string str_or(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double num(const std::string& key) const { return parse_num_(key, str(key)); }

    double num_or(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : parse_num_(key, it->second);
    }

    long integer_or(const std::string& key, long fallback) const {
        double v = num_or(key, static_cast<double>(fallback));
        return static_cast<long>(v);
    }

    std::vector<double> num_list(const std::string& key) const {
        std::vector<double> out;
        std::istringstream ss(str(key));
        std::string tok;
        while (std::getline(ss, tok, ',')) out.push_back(parse_num_(key, detail::trim(tok)));
        return out;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    const std::map<std::string, std::string>& all() const { return values_; }

  private:
    static double parse_num_(const std::string& key, const std::string& value) {
        try {
            std::size_t pos = 0;
            double v = std::stod(value, &pos);
            if (pos != value.size()) throw std::invalid_argument(value);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': bad number '" + value + "'");
        }
    }

    std::map<std::string, std::string> values_;
};

void write_meta(const Config& cfg, std::uint64_t seed, const fs::path& out_dir) {
    CsvWriter meta((out_dir / "meta.csv").string());
    meta.row({"key", "value"});
    meta.row({"seed", std::to_string(seed)});
    for (const auto& [key, value] : cfg.all())
        if (key != "seed") meta.row({key, value});
}

// ---------------------------------------------------------------------------
// Model / score wiring
// ---------------------------------------------------------------------------

enum class ScoreKind { Residual, Signed, Normalized, Interval, Softmax, Aps, Raps };

ScoreKind parse_score_kind(const std::string& name) {
    if (name == "residual") return ScoreKind::Residual;
    if (name == "signed") return ScoreKind::Signed;
    if (name == "normalized") return ScoreKind::Normalized;
    if (name == "interval") return ScoreKind::Interval;
    if (name == "softmax") return ScoreKind::Softmax;
    if (name == "aps") return ScoreKind::Aps;
    if (name == "raps") return ScoreKind::Raps;
    throw ConfigError("score.kind: unknown value '" + name + "'");
}

// Trained regression model producing RegressionOutputs per test point.
struct RegressionEngine {
    std::optional<KnnModel> knn;
    std::optional<RidgeModel> ridge;
    double alpha = 0.1;
    double sigma_floor = 1e-6;

    RegressionOutputs outputs(const std::vector<double>& x, ScoreKind kind) const {
        if (ridge) {
            if (kind != ScoreKind::Residual && kind != ScoreKind::Signed)
                throw ConfigError("score.kind: ridge provides only point predictions");
            return RegressionOutputs::from_point(ridge->predict(x));
        }
        switch (kind) {
            case ScoreKind::Residual:
            case ScoreKind::Signed:
                return RegressionOutputs::from_point(knn_point(*knn, x));
            case ScoreKind::Normalized: {
                auto [mu, sigma] = knn_meanvar(*knn, x, sigma_floor);
                return RegressionOutputs::from_mean_spread(mu, sigma);
            }
            case ScoreKind::Interval: {
                double lo = knn_quantile(*knn, x, std::max(alpha / 2.0, 1e-9));
                double hi = knn_quantile(*knn, x, std::min(1.0, 1.0 - alpha / 2.0));
                return RegressionOutputs::from_interval(lo, hi);
            }
            default:
                throw ConfigError("score.kind: classification score on regression data");
        }
    }

    double score(const std::vector<double>& x, double y, ScoreKind kind) const {
        RegressionOutputs out = outputs(x, kind);
        switch (kind) {
            case ScoreKind::Residual:
                return residual_score(out, y);
            case ScoreKind::Signed:
                return signed_residual_score(out, y);
            case ScoreKind::Normalized:
                return normalized_score(out, y);
            case ScoreKind::Interval:
                return interval_score(out, y);
            default:
                throw ConfigError("score.kind: classification score on regression data");
        }
    }

    ConformalBand band(const std::vector<double>& x, double a_star, ScoreKind kind) const {
        RegressionOutputs out = outputs(x, kind);
        switch (kind) {
            case ScoreKind::Residual:
                return band_point(*out.point, a_star, alpha);
            case ScoreKind::Signed:
                return band_point(*out.point, a_star, alpha);  // symmetric fallback
            case ScoreKind::Normalized:
                return band_normalized(*out.point, *out.spread, a_star, alpha);
            case ScoreKind::Interval:
                return band_interval(*out.lower, *out.upper, a_star, alpha);
            default:
                throw ConfigError("score.kind: classification score on regression data");
        }
    }
};

struct Engine {
    TaskKind task = TaskKind::Regression;
    RegressionEngine regression;
    std::optional<KnnModel> classifier;
    int k_classes = 0;
    double laplace = 0.0;
    RapsConfig raps;
    ScoreKind kind = ScoreKind::Residual;
    double alpha = 0.1;

    std::vector<double> per_label_scores(const std::vector<double>& x, SeededRng& rng) const {
        ClassProbs probs = knn_class_probs(*classifier, x, k_classes, laplace);
        std::vector<double> scores(static_cast<std::size_t>(k_classes));
        double tau = rng.uniform();  // one draw per test point, shared across labels
        for (int y = 1; y <= k_classes; ++y) {
            double s;
            switch (kind) {
                case ScoreKind::Softmax:
                    s = softmax_score(probs, y);
                    break;
                case ScoreKind::Aps:
                    s = detail::aps_leading_mass(probs, y) +
                        (raps.randomized ? tau : 1.0) * probs.of(y);
                    break;
                case ScoreKind::Raps: {
                    double base = detail::aps_leading_mass(probs, y) +
                                  (raps.randomized ? tau : 1.0) * probs.of(y);
                    int rank = detail::descending_rank(probs, y);
                    if (raps.ascending_rank) rank = probs.k() - rank + 1;
                    s = base + raps.lambda * std::max(0, rank - raps.k_reg);
                    break;
                }
                default:
                    throw ConfigError("score.kind: regression score on classification data");
            }
            scores[static_cast<std::size_t>(y - 1)] = s;
        }
        return scores;
    }

    double label_score(const std::vector<double>& x, int y, SeededRng& rng) const {
        return per_label_scores(x, rng)[static_cast<std::size_t>(y - 1)];
    }
};

Engine build_engine(const Config& cfg, const Dataset& train, double alpha) {
    Engine engine;
    engine.task = train.kind();
    engine.alpha = alpha;
    engine.kind = parse_score_kind(cfg.str_or("score.kind", train.kind() == TaskKind::Regression
                                                               ? "residual"
                                                               : "softmax"));
    std::string model = cfg.str_or("model.kind", "knn");
    if (train.kind() == TaskKind::Classification) {
        if (model != "knn") throw ConfigError("model.kind: classification supports knn only");
        std::size_t k = static_cast<std::size_t>(cfg.integer_or("model.k", 5));
        engine.classifier.emplace(train, std::min(k, train.n_rows()));
        engine.k_classes = static_cast<int>(cfg.integer_or("classes", train.n_classes()));
        engine.laplace = cfg.num_or("model.laplace", 1.0);
        engine.raps.lambda = cfg.num_or("score.raps_lambda", 0.1);
        engine.raps.k_reg = static_cast<int>(cfg.integer_or("score.raps_kreg", 1));
        engine.raps.randomized = cfg.integer_or("score.randomized", 0) != 0;
    } else {
        engine.regression.alpha = alpha;
        engine.regression.sigma_floor = cfg.num_or("model.sigma_floor", 1e-6);
        if (model == "knn") {
            std::size_t k = static_cast<std::size_t>(cfg.integer_or("model.k", 5));
            engine.regression.knn.emplace(train, std::min(k, train.n_rows()));
        } else if (model == "ridge") {
            engine.regression.ridge.emplace(ridge_fit(train, cfg.num_or("model.penalty", 1e-6)));
        } else {
            throw ConfigError("model.kind: unknown value '" + model + "'");
        }
    }
    return engine;
}

// Class assignment for the Mondrian / cluster strategies.
struct TaxonomyPlan {
    Taxonomy taxonomy = Taxonomy::by_label(1);
    bool response_dependent = false;  // label taxonomy needs per-candidate lookup
};

TaxonomyPlan build_taxonomy(const Config& cfg, const Engine& engine, const Dataset& train,
                            const std::vector<std::size_t>& cal_rows, const Dataset& full) {
    std::string kind = cfg.str_or("taxonomy", engine.task == TaskKind::Classification ? "label"
                                                                                      : "difficulty");
    TaxonomyPlan plan;
    if (kind == "label") {
        if (engine.task != TaskKind::Classification)
            throw ConfigError("taxonomy: label taxonomy needs classification data");
        plan.taxonomy = Taxonomy::by_label(engine.k_classes);
        plan.response_dependent = true;
        return plan;
    }
    int bins = static_cast<int>(cfg.integer_or("taxonomy.bins", 3));
    if (kind.rfind("column:", 0) == 0) {
        std::size_t column = static_cast<std::size_t>(std::stoul(kind.substr(7)));
        std::vector<double> values;
        for (std::size_t i : cal_rows) values.push_back(full.row(i)[column]);
        plan.taxonomy = Taxonomy::by_feature_column(column, equal_frequency_bins(values, bins));
        return plan;
    }
    if (kind == "difficulty") {
        if (!engine.regression.knn) throw ConfigError("taxonomy: difficulty bins need a knn model");
        const KnnModel* knn = &*engine.regression.knn;
        double floor = engine.regression.sigma_floor;
        auto difficulty = [knn, floor](const std::vector<double>& x) {
            return knn_meanvar(*knn, x, floor).second;
        };
        std::vector<double> values;
        for (std::size_t i : cal_rows) values.push_back(difficulty(full.row_vec(i)));
        plan.taxonomy = Taxonomy::by_binned_difficulty(difficulty, equal_frequency_bins(values, bins));
        return plan;
    }
    (void)train;
    throw ConfigError("taxonomy: unknown value '" + kind + "'");
}

struct CalibrationArtifacts {
    std::vector<double> scores;
    std::vector<int> classes;              // stratum per calibration row (0 = marginal)
    std::map<int, int> cluster_of;         // class -> cluster (cluster strategies)
    std::map<int, double> critical;        // stratum -> a*
    bool per_label = false;                // response-dependent taxonomy
};

std::vector<std::string> known_strategies() {
    return {"marginal", "mondrian", "cluster-score", "cluster-hierarchy", "ccp",
            "jackknife+", "cv+", "oob", "tcp"};
}

bool quantile_strategy(const std::string& strategy) {
    return strategy == "marginal" || strategy == "mondrian" || strategy == "cluster-score" ||
           strategy == "cluster-hierarchy";
}

CalibrationArtifacts calibrate_quantile_strategy(const Config& cfg, const std::string& strategy,
                                                 const Engine& engine, const Dataset& full,
                                                 const std::vector<std::size_t>& cal_rows,
                                                 double alpha, SeededRng& root) {
    CalibrationArtifacts art;
    SeededRng smoothing = root.substream("smoothing");

    TaxonomyPlan plan;
    if (strategy != "marginal") {
        Dataset train_view = full.subset(cal_rows);  // column/difficulty rules fit on calibration
        plan = build_taxonomy(cfg, engine, train_view, cal_rows, full);
        art.per_label = plan.response_dependent;
    }

    for (std::size_t i : cal_rows) {
        std::vector<double> x = full.row_vec(i);
        double score;
        if (engine.task == TaskKind::Classification) {
            score = engine.label_score(x, full.label(i), smoothing);
        } else {
            score = engine.regression.score(x, full.response(i), engine.kind);
        }
        art.scores.push_back(score);
        art.classes.push_back(strategy == "marginal" ? 0 : plan.taxonomy.assign(x, full.response(i)));
    }

    if (strategy == "marginal") {
        art.critical[0] = Calibration(art.scores, alpha).critical_score();
    } else if (strategy == "mondrian") {
        auto mcal = mondrian_fit(art.scores, art.classes, alpha, plan.taxonomy.k());
        for (int c = 1; c <= plan.taxonomy.k(); ++c) art.critical[c] = mcal.critical_score(c);
    } else {
        std::map<int, std::size_t> counts;
        std::map<int, std::vector<double>> per_class;
        for (std::size_t i = 0; i < art.scores.size(); ++i) {
            ++counts[art.classes[i]];
            per_class[art.classes[i]].push_back(art.scores[i]);
        }
        for (int c = 1; c <= plan.taxonomy.k(); ++c) counts.emplace(c, 0);

        ClusterMap map;
        if (strategy == "cluster-score") {
            std::map<int, std::size_t> observed;
            for (const auto& [cls, n] : counts)
                if (n > 0) observed[cls] = n;
            SeededRng cluster_rng = root.substream("cluster");
            std::vector<double> levels = cfg.has("cluster.levels")
                                             ? cfg.num_list("cluster.levels")
                                             : std::vector<double>{0.1, 0.25, 0.5, 0.75, 0.9};
            map = composite_cluster(observed, per_class, levels,
                                    static_cast<std::size_t>(cfg.integer_or("cluster.size_threshold", 50)),
                                    static_cast<std::size_t>(cfg.integer_or("cluster.min_obs", 5)),
                                    static_cast<int>(cfg.integer_or("cluster.m", 3)), cluster_rng);
            // Classes never observed in calibration fall back to the rest
            // cluster (the last one).
            for (int c = 1; c <= plan.taxonomy.k(); ++c)
                if (!map.cluster_of.count(c)) {
                    int rest = map.m() - 1;
                    map.cluster_of[c] = rest;
                    map.members[static_cast<std::size_t>(rest)].push_back(c);
                }
        } else {
            Hierarchy hier = Hierarchy::load(cfg.str("hierarchy.file"), plan.taxonomy.k());
            map = size_threshold_cluster(hier, counts,
                                         static_cast<std::size_t>(cfg.integer_or("cluster.size_threshold", 50)));
        }
        art.cluster_of = map.cluster_of;
        ClusterCalibration ccal(map, art.scores, art.classes, alpha);
        for (int g = 0; g < map.m(); ++g) {
            int probe = map.members[static_cast<std::size_t>(g)].front();
            art.critical[g] = ccal.critical_score(probe);
        }
    }
    return art;
}

void write_calibration(const CalibrationArtifacts& art, const fs::path& out_dir) {
    CsvWriter csv((out_dir / "calibration.csv").string());
    csv.row({"record", "stratum", "value"});
    for (std::size_t i = 0; i < art.scores.size(); ++i)
        csv.row({"score", std::to_string(art.classes[i]), format_number(art.scores[i])});
    for (const auto& [cls, cluster] : art.cluster_of)
        csv.row({"cluster", std::to_string(cls), std::to_string(cluster)});
    for (const auto& [stratum, a_star] : art.critical)
        csv.row({"critical", std::to_string(stratum), format_number(a_star)});
}

CalibrationArtifacts read_calibration(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open calibration file: " + path);
    CalibrationArtifacts art;
    std::string line;
    if (!std::getline(in, line)) throw DataError("calibration file is empty");
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 3) throw DataError("calibration file: bad line " + std::to_string(line_no));
        const std::string& record = fields[0];
        int stratum = std::stoi(fields[1]);
        if (record == "score") {
            art.scores.push_back(std::stod(fields[2]));
            art.classes.push_back(stratum);
        } else if (record == "cluster") {
            art.cluster_of[stratum] = std::stoi(fields[2]);
        } else if (record == "critical") {
            double v = fields[2] == "inf" ? kInf : std::stod(fields[2]);
            art.critical[stratum] = v;
        } else {
            throw DataError("calibration file: unknown record '" + record + "'");
        }
    }
    return art;
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed_override;
};

std::uint64_t resolve_seed(const Config& cfg, const CommonArgs& args) {
    if (args.seed_override) return *args.seed_override;
    return static_cast<std::uint64_t>(cfg.integer_or("seed", 0));
}

struct LoadedData {
    Dataset data;
    Split parts;
};

LoadedData load_and_split(const Config& cfg, SeededRng& root) {
    Dataset data = read_dataset_csv(cfg.str("data.file"));
    std::vector<double> fractions =
        cfg.has("split") ? cfg.num_list("split") : std::vector<double>{0.5, 0.5, 0.0};
    if (fractions.size() != 3) throw ConfigError("split: expected three fractions");
    SeededRng split_rng = root.substream("split");
    Split parts = split(data, fractions[0], fractions[1], fractions[2], split_rng);
    return {std::move(data), std::move(parts)};
}

int cmd_calibrate(const CommonArgs& args) {
    Config cfg = Config::load(args.config_path);
    std::uint64_t seed = resolve_seed(cfg, args);
    SeededRng root(seed);
    std::string strategy = cfg.str_or("strategy", "marginal");
    if (!quantile_strategy(strategy)) {
        bool known = false;
        for (const auto& s : known_strategies()) known = known || s == strategy;
        if (!known) throw ConfigError("strategy: unknown value '" + strategy + "'");
        throw ConfigError("strategy '" + strategy + "' calibrates at prediction time; run predict");
    }
    double alpha = cfg.num_or("alpha", 0.1);

    LoadedData loaded = load_and_split(cfg, root);
    if (loaded.parts.train.empty()) throw DataError("calibrate: empty training partition");
    if (loaded.parts.calibration.empty()) throw DataError("calibrate: empty calibration partition");
    Dataset train = loaded.data.subset(loaded.parts.train);
    Engine engine = build_engine(cfg, train, alpha);

    CalibrationArtifacts art =
        calibrate_quantile_strategy(cfg, strategy, engine, loaded.data, loaded.parts.calibration,
                                    alpha, root);
    fs::create_directories(args.out_dir);
    write_calibration(art, args.out_dir);
    write_meta(cfg, seed, args.out_dir);
    return 0;
}

int cmd_predict(const CommonArgs& args, const std::string& calibration_path,
                const std::string& test_path) {
    Config cfg = Config::load(args.config_path);
    std::uint64_t seed = resolve_seed(cfg, args);
    SeededRng root(seed);
    std::string strategy = cfg.str_or("strategy", "marginal");
    double alpha = cfg.num_or("alpha", 0.1);

    LoadedData loaded = load_and_split(cfg, root);
    if (loaded.parts.train.empty()) throw DataError("predict: empty training partition");
    Dataset train = loaded.data.subset(loaded.parts.train);
    Dataset test = read_dataset_csv(test_path);
    if (test.n_cols() != loaded.data.n_cols()) throw DataError("predict: test schema mismatch");

    fs::create_directories(args.out_dir);
    CsvWriter csv((fs::path(args.out_dir) / "predictions.csv").string());
    SeededRng smoothing = root.substream("smoothing");

    // Degenerate (empty) bands are serialized as the inverted pair 0,-1.
    auto write_band = [&csv](std::size_t row, const ConformalBand& band) {
        if (band.degenerate) {
            csv.row({std::to_string(row), format_number(0.0), format_number(-1.0)});
            return;
        }
        csv.row({std::to_string(row), format_number(band.lo), format_number(band.hi)});
    };
    auto write_set = [&csv](std::size_t row, const PredictionSet& set) {
        std::string labels;
        for (std::size_t i = 0; i < set.labels.size(); ++i) {
            if (i) labels += ';';
            labels += std::to_string(set.labels[i]);
        }
        csv.row({std::to_string(row), labels});
    };

    if (quantile_strategy(strategy)) {
        if (calibration_path.empty())
            throw ConfigError("predict: strategy '" + strategy + "' needs --calibration");
        Engine engine = build_engine(cfg, train, alpha);
        CalibrationArtifacts art = read_calibration(calibration_path);
        TaxonomyPlan plan;
        if (strategy != "marginal")
            plan = build_taxonomy(cfg, engine, train, loaded.parts.calibration, loaded.data);

        auto critical_for = [&](int stratum) {
            auto it = art.critical.find(stratum);
            if (it == art.critical.end()) throw DataError("predict: missing critical score");
            return it->second;
        };
        auto stratum_of_class = [&](int cls) {
            if (strategy == "marginal") return 0;
            if (strategy == "mondrian") return cls;
            auto it = art.cluster_of.find(cls);
            if (it == art.cluster_of.end()) throw DataError("predict: class without cluster");
            return it->second;
        };

        if (engine.task == TaskKind::Classification) {
            csv.row({"row", "labels"});
            for (std::size_t i = 0; i < test.n_rows(); ++i) {
                auto scores = engine.per_label_scores(test.row_vec(i), smoothing);
                PredictionSet set;
                set.alpha = alpha;
                for (int y = 1; y <= engine.k_classes; ++y) {
                    int stratum = art.per_label ? stratum_of_class(y) : 0;
                    if (scores[static_cast<std::size_t>(y - 1)] <= critical_for(stratum))
                        set.labels.push_back(y);
                }
                write_set(i, set);
            }
        } else {
            csv.row({"row", "lo", "hi"});
            for (std::size_t i = 0; i < test.n_rows(); ++i) {
                std::vector<double> x = test.row_vec(i);
                int stratum = 0;
                if (strategy != "marginal") stratum = stratum_of_class(plan.taxonomy.assign(x, 0.0));
                write_band(i, engine.regression.band(x, critical_for(stratum), engine.kind));
            }
        }
        return 0;
    }

    // Resampling strategies work on the pooled train + calibration rows.
    std::vector<std::size_t> pool = loaded.parts.train;
    pool.insert(pool.end(), loaded.parts.calibration.begin(), loaded.parts.calibration.end());
    Dataset working = loaded.data.subset(pool);
    std::size_t k = static_cast<std::size_t>(cfg.integer_or("model.k", 5));
    std::string model = cfg.str_or("model.kind", "knn");
    PointRefitter refit =
        model == "ridge" ? ridge_refitter(cfg.num_or("model.penalty", 1e-6)) : knn_refitter(k);

    if (strategy == "jackknife+") {
        csv.row({"row", "lo", "hi"});
        for (std::size_t i = 0; i < test.n_rows(); ++i)
            write_band(i, jackknife_plus_band(working, refit, test.row_vec(i), alpha));
    } else if (strategy == "cv+") {
        SeededRng fold_rng = root.substream("folds");
        FoldPlan plan = FoldPlan::uniform(working.n_rows(),
                                          static_cast<int>(cfg.integer_or("folds", 10)), fold_rng);
        csv.row({"row", "lo", "hi"});
        for (std::size_t i = 0; i < test.n_rows(); ++i)
            write_band(i, cv_plus_band(working, plan, refit, test.row_vec(i), alpha));
    } else if (strategy == "oob") {
        SeededRng bag_rng = root.substream("bootstrap");
        BaggedKnn bagged(working, k, static_cast<std::size_t>(cfg.integer_or("bags", 50)), bag_rng);
        csv.row({"row", "lo", "hi"});
        for (std::size_t i = 0; i < test.n_rows(); ++i)
            write_band(i, oob_conformal_band(bagged, test.row_vec(i), alpha));
    } else if (strategy == "ccp") {
        SeededRng fold_rng = root.substream("folds");
        FoldPlan plan = FoldPlan::uniform(working.n_rows(),
                                          static_cast<int>(cfg.integer_or("folds", 10)), fold_rng);
        Refitter score_refit = residual_refitter(refit);
        CrossConformal ccp(working, plan, score_refit);
        double lo = cfg.num("grid.lo");
        double hi = cfg.num("grid.hi");
        std::size_t n_grid = static_cast<std::size_t>(cfg.integer_or("grid.n", 200));
        csv.row({"row", "lo", "hi"});
        for (std::size_t i = 0; i < test.n_rows(); ++i) {
            std::vector<double> accepted;
            std::vector<double> grid(n_grid);
            for (std::size_t g = 0; g < n_grid; ++g)
                grid[g] = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(n_grid - 1);
            ccp.predict_grid(test.row_vec(i), grid, alpha, &accepted);
            if (accepted.empty()) {
                csv.row({std::to_string(i), format_number(0.0), format_number(-1.0)});
            } else {
                csv.row({std::to_string(i), format_number(accepted.front()),
                         format_number(accepted.back())});
            }
        }
    } else if (strategy == "tcp") {
        if (working.kind() != TaskKind::Classification)
            throw ConfigError("strategy tcp: needs a finite label space (classification data)");
        int k_classes = static_cast<int>(cfg.integer_or("classes", working.n_classes()));
        std::vector<int> labels(static_cast<std::size_t>(k_classes));
        for (int c = 1; c <= k_classes; ++c) labels[static_cast<std::size_t>(c - 1)] = c;
        std::size_t knn_k = static_cast<std::size_t>(cfg.integer_or("model.k", 1));
        Refitter refit_cls = [knn_k, k_classes](const Dataset& train_data) -> Scorer {
            auto model_ptr = std::make_shared<KnnModel>(train_data, std::min(knn_k, train_data.n_rows()));
            return [model_ptr, k_classes](const std::vector<double>& x, double y) {
                ClassProbs probs = knn_class_probs(*model_ptr, x, k_classes, 1.0);
                return softmax_score(probs, static_cast<int>(y));
            };
        };
        bool smoothed = cfg.integer_or("score.randomized", 1) != 0;
        csv.row({"row", "labels"});
        for (std::size_t i = 0; i < test.n_rows(); ++i)
            write_set(i, tcp_predict_set(working, test.row_vec(i), labels, refit_cls, alpha, smoothed,
                                         smoothing));
    } else {
        throw ConfigError("strategy: unknown value '" + strategy + "'");
    }
    write_meta(cfg, seed, args.out_dir);
    return 0;
}

std::vector<std::vector<std::string>> read_csv_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        rows.push_back(detail::split_csv_line(line));
    }
    if (rows.empty()) throw DataError("empty file: " + path);
    return rows;
}

int cmd_evaluate(const std::string& predictions_path, const std::string& truth_path,
                 const std::string& classes_path, const std::string& out_dir, double alpha) {
    auto pred_rows = read_csv_rows(predictions_path);
    bool is_regression = pred_rows.front().size() == 3 && pred_rows.front()[1] == "lo";
    Dataset truths = read_dataset_csv(truth_path);
    if (pred_rows.size() - 1 != truths.n_rows())
        throw DataError("evaluate: prediction/truth row count mismatch");

    std::vector<int> classes;
    if (!classes_path.empty()) {
        auto class_rows = read_csv_rows(classes_path);
        for (std::size_t i = 1; i < class_rows.size(); ++i)
            classes.push_back(std::stoi(class_rows[i][0]));
        if (classes.size() != truths.n_rows()) throw DataError("evaluate: classes row count mismatch");
    }

    fs::create_directories(out_dir);
    CsvWriter csv((fs::path(out_dir) / "report.csv").string());
    csv.row({"metric", "group", "value"});

    if (is_regression) {
        std::vector<ConformalBand> bands;
        std::vector<double> y;
        for (std::size_t i = 1; i < pred_rows.size(); ++i) {
            double lo = pred_rows[i][1] == "-inf" ? -kInf : std::stod(pred_rows[i][1]);
            double hi = pred_rows[i][2] == "inf" ? kInf : std::stod(pred_rows[i][2]);
            ConformalBand band{lo, hi, alpha, lo > hi};
            bands.push_back(band);
            y.push_back(truths.response(i - 1));
        }
        csv.row({"coverage", "", format_number(coverage(bands, y))});
        auto width = avg_width(bands);
        csv.row({"avg_width", "", format_number(width.value)});
        csv.row({"infinite_bands", "", std::to_string(width.infinite_count)});
        try {
            csv.row({"relative_width", "", format_number(relative_width(bands, y, alpha))});
        } catch (const NumericError&) {
            // zero quantile gap in the truths; the ratio is undefined
        }
        if (!classes.empty()) {
            std::vector<int> empty;
            for (const auto& [cls, cov] : conditional_coverage(bands, y, classes, &empty))
                csv.row({"coverage", "class:" + std::to_string(cls), format_number(cov)});
            for (int cls : empty) csv.row({"empty_class", "class:" + std::to_string(cls), "1"});
        }
    } else {
        std::vector<PredictionSet> sets;
        std::vector<int> y;
        for (std::size_t i = 1; i < pred_rows.size(); ++i) {
            PredictionSet set;
            if (pred_rows[i].size() > 1 && !pred_rows[i][1].empty()) {
                std::istringstream ss(pred_rows[i][1]);
                std::string tok;
                while (std::getline(ss, tok, ';')) set.labels.push_back(std::stoi(tok));
            }
            sets.push_back(std::move(set));
            y.push_back(truths.label(i - 1));
        }
        csv.row({"coverage", "", format_number(coverage(sets, y))});
        csv.row({"avg_set_size", "", format_number(avg_set_size(sets))});
        std::vector<int> empty;
        for (const auto& [cls, cov] : conditional_coverage(sets, y, y, &empty))
            csv.row({"coverage", "class:" + std::to_string(cls), format_number(cov)});
    }
    return 0;
}

int cmd_monitor(const CommonArgs& args, const std::string& stream_path) {
    Config cfg = Config::load(args.config_path);
    std::uint64_t seed = resolve_seed(cfg, args);
    SeededRng root(seed);
    double alpha = cfg.num_or("alpha", 0.1);

    LoadedData loaded = load_and_split(cfg, root);
    if (loaded.parts.train.empty() || loaded.parts.calibration.empty())
        throw DataError("monitor: needs nonempty train and calibration partitions");
    Dataset train = loaded.data.subset(loaded.parts.train);
    Engine engine = build_engine(cfg, train, alpha);
    if (engine.task != TaskKind::Regression) throw ConfigError("monitor: regression data only");

    std::vector<double> cal_scores;
    for (std::size_t i : loaded.parts.calibration)
        cal_scores.push_back(engine.regression.score(loaded.data.row_vec(i), loaded.data.response(i),
                                                     engine.kind));

    // An empty stream (header only) yields a header-only log.
    std::vector<double> stream_scores;
    {
        std::ifstream probe(stream_path);
        if (!probe) throw DataError("cannot open stream file: " + stream_path);
        std::string line;
        std::size_t data_lines = 0;
        bool first = true;
        while (std::getline(probe, line)) {
            if (first) {
                first = false;
                continue;
            }
            if (!detail::trim(line).empty()) ++data_lines;
        }
        if (data_lines > 0) {
            Dataset stream = read_dataset_csv(stream_path);
            for (std::size_t i = 0; i < stream.n_rows(); ++i)
                stream_scores.push_back(
                    engine.regression.score(stream.row_vec(i), stream.response(i), engine.kind));
        }
    }

    MonitorConfig monitor_cfg;
    std::string betting = cfg.str_or("monitor.betting", "mixture");
    if (betting == "mixture") {
        monitor_cfg.betting.kind = Betting::Mixture;
    } else if (betting == "power") {
        monitor_cfg.betting.kind = Betting::Power;
        monitor_cfg.betting.epsilon = cfg.num_or("monitor.epsilon", 0.5);
    } else {
        throw ConfigError("monitor.betting: unknown value '" + betting + "'");
    }
    monitor_cfg.threshold = cfg.num_or("monitor.threshold", 20.0);
    monitor_cfg.online_append = cfg.integer_or("monitor.online_append", 0) != 0;

    SeededRng smoothing = root.substream("smoothing");
    auto events = monitor(stream_scores, cal_scores, monitor_cfg, smoothing);

    fs::create_directories(args.out_dir);
    CsvWriter csv((fs::path(args.out_dir) / "monitor.csv").string());
    csv.row({"index", "p_value", "wealth", "alert"});
    for (std::size_t i = 0; i < events.size(); ++i)
        csv.row({std::to_string(i), format_number(events[i].p), format_number(events[i].wealth),
                 events[i].alert ? "1" : "0"});
    write_meta(cfg, seed, args.out_dir);
    return 0;
}

// ---------------------------------------------------------------------------
// Experiment recipes
// ---------------------------------------------------------------------------

void write_recipe_readme(const fs::path& out_dir, const std::string& recipe,
                         const std::vector<std::string>& lines) {
    std::ofstream readme(out_dir / "README.md");
    readme << "# Recipe: " << recipe << "\n\n";
    for (const auto& line : lines) readme << line << "\n";
}

// Coverage-law experiment: ridge mean model on exponential-response data,
// resampled calibration sets of every size, coverage measured on a fresh
// test set per size against the two-sided Beta band.
int recipe_beta_band(const Config& cfg, std::uint64_t seed, const fs::path& out_dir) {
    const std::size_t max_size = static_cast<std::size_t>(cfg.integer_or("recipe.sizes", 500));
    const std::size_t reps = static_cast<std::size_t>(cfg.integer_or("recipe.reps", 100));
    const std::size_t test_n = static_cast<std::size_t>(cfg.integer_or("recipe.test_n", 10000));
    const std::size_t train_n = static_cast<std::size_t>(cfg.integer_or("recipe.train_n", 500));
    const double alpha = cfg.num_or("alpha", 0.1);
    const double band_level = cfg.num_or("recipe.band", 0.10);

    GeneratorSpec spec;
    spec.family = Family::NavalLike;
    spec.dimension = 5;

    SeededRng root(seed);
    SeededRng train_rng = root.substream("train");
    SynthData train = generate(spec, train_n, train_rng);
    RidgeModel model = ridge_fit(train.dataset, 1e-6);

    struct Row {
        std::size_t size;
        std::size_t rep;
        double coverage;
        double lo;
        double hi;
    };
    std::vector<std::vector<Row>> per_size(max_size);

    parallel_for(max_size, [&](std::size_t idx) {
        std::size_t n_cal = idx + 1;
        SeededRng size_rng = root.substream("mc:" + std::to_string(n_cal));
        SynthData test = generate(spec, test_n, size_rng);
        std::vector<double> test_scores(test_n);
        for (std::size_t i = 0; i < test_n; ++i)
            test_scores[i] =
                std::abs(test.dataset.response(i) - model.predict(test.dataset.row_vec(i)));
        std::sort(test_scores.begin(), test_scores.end());
        auto [lo, hi] = beta_coverage_band(n_cal, alpha, band_level);

        auto& rows = per_size[idx];
        rows.reserve(reps);
        for (std::size_t rep = 0; rep < reps; ++rep) {
            SynthData cal = generate(spec, n_cal, size_rng);
            std::vector<double> scores(n_cal);
            for (std::size_t i = 0; i < n_cal; ++i)
                scores[i] =
                    std::abs(cal.dataset.response(i) - model.predict(cal.dataset.row_vec(i)));
            double a_star = Calibration(std::move(scores), alpha).critical_score();
            double cov;
            if (std::isinf(a_star)) {
                cov = 1.0;
            } else {
                auto it = std::upper_bound(test_scores.begin(), test_scores.end(), a_star);
                cov = static_cast<double>(it - test_scores.begin()) / static_cast<double>(test_n);
            }
            rows.push_back({n_cal, rep, cov, lo, hi});
        }
    });

    CsvWriter csv((out_dir / "beta_band.csv").string());
    csv.row({"size", "rep", "coverage", "band_lo", "band_hi"});
    for (const auto& rows : per_size)
        for (const auto& r : rows)
            csv.row({std::to_string(r.size), std::to_string(r.rep), format_number(r.coverage),
                     format_number(r.lo), format_number(r.hi)});
    write_recipe_readme(out_dir, "beta_band",
                        {"Columns of beta_band.csv:",
                         "- size: calibration set size",
                         "- rep: replicate index (fresh calibration sample)",
                         "- coverage: empirical coverage on the per-size test sample",
                         "- band_lo, band_hi: two-sided Beta coverage band for that size"});
    return 0;
}

// Twenty uniform integer weights: inflated-quantile prediction set and its
// population coverage under the true uniform law.
int recipe_weights(const Config& cfg, std::uint64_t seed, const fs::path& out_dir) {
    const std::size_t mc_n = static_cast<std::size_t>(cfg.integer_or("recipe.mc_n", 100000));
    const double alpha = cfg.num_or("alpha", 0.1);
    SeededRng root(seed);
    SeededRng sample_rng = root.substream("sample");

    std::vector<double> weights(20);
    for (double& w : weights) w = static_cast<double>(1 + sample_rng.uniform_index(20));
    double a_star = Calibration(weights, alpha).critical_score();

    SeededRng mc_rng = root.substream("mc:0");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < mc_n; ++i)
        if (static_cast<double>(1 + mc_rng.uniform_index(20)) <= a_star) ++hit;

    CsvWriter csv((out_dir / "weights_illustration.csv").string());
    csv.row({"key", "value"});
    csv.row({"a_star", format_number(a_star)});
    csv.row({"population_coverage", format_number(static_cast<double>(hit) / static_cast<double>(mc_n))});
    std::map<int, int> histogram;
    for (double w : weights) ++histogram[static_cast<int>(w)];
    for (const auto& [w, count] : histogram)
        csv.row({"weight_" + std::to_string(w), std::to_string(count)});
    write_recipe_readme(out_dir, "weights_illustration",
                        {"Rows of weights_illustration.csv:",
                         "- a_star: inflated (1 - alpha) quantile of the 20 sampled weights",
                         "- population_coverage: Monte Carlo coverage of {1..a_star} under",
                         "  the uniform law on {1..20}",
                         "- weight_<w>: sample histogram count for weight w"});
    return 0;
}

// Shared body of the coverage-grid reproductions: constant coefficient of
// variation data, oracle parameters (optionally pushed through the explicit
// quadratic misspecification), residual and normalized scores, coverage per
// equal-frequency spread bin over repeated test sets.
int recipe_coverage_grid(const Config& cfg, std::uint64_t seed, const fs::path& out_dir,
                         bool misspecified, const std::string& name) {
    const std::size_t cal_n = static_cast<std::size_t>(cfg.integer_or("recipe.cal_n", 5000));
    const std::size_t test_sets = static_cast<std::size_t>(cfg.integer_or("recipe.test_sets", 20));
    const std::size_t test_n = static_cast<std::size_t>(cfg.integer_or("recipe.test_n", 1000));
    const double alpha = cfg.num_or("alpha", 0.1);
    const int bins = 3;

    GeneratorSpec spec;
    spec.family = Family::Type2;
    spec.dimension = static_cast<std::size_t>(cfg.integer_or("recipe.dimension", 20));
    spec.feature_lo = 0.0;
    spec.feature_hi = cfg.num_or("recipe.feature_hi", 14.142135623730951);
    spec.cv = 0.1;

    SeededRng root(seed);

    auto spreads_of = [&](const SynthData& data) {
        std::vector<double> s(data.sigma.size());
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = data.sigma[i];
        if (misspecified)
            for (double& v : s) v = std::sqrt(5.0 * (v * v - 0.5) * (v * v - 0.5) + 0.5);
        return s;
    };

    SeededRng cal_rng = root.substream("calibration");
    SynthData cal = generate(spec, cal_n, cal_rng);
    std::vector<double> cal_spread = spreads_of(cal);
    BinRule rule = equal_frequency_bins(cal_spread, bins);

    std::vector<double> res_scores(cal_n), norm_scores(cal_n);
    for (std::size_t i = 0; i < cal_n; ++i) {
        double err = std::abs(cal.dataset.response(i) - cal.mu[i]);
        res_scores[i] = err;
        norm_scores[i] = err / cal_spread[i];
    }
    double res_a = Calibration(res_scores, alpha).critical_score();
    double norm_a = Calibration(norm_scores, alpha).critical_score();

    // coverage[score][bin 0 = marginal, 1..3][test set]
    std::vector<std::vector<std::vector<double>>> cov(
        2, std::vector<std::vector<double>>(static_cast<std::size_t>(bins) + 1));
    for (auto& score_block : cov)
        for (auto& bin_block : score_block) bin_block.assign(test_sets, 0.0);

    std::vector<SynthData> tests;
    tests.reserve(test_sets);
    for (std::size_t t = 0; t < test_sets; ++t) {
        SeededRng test_rng = root.substream("mc:" + std::to_string(t));
        tests.push_back(generate(spec, test_n, test_rng));
    }

    parallel_for(test_sets, [&](std::size_t t) {
        const SynthData& test = tests[t];
        std::vector<double> spread = spreads_of(test);
        std::vector<std::size_t> bin_counts(static_cast<std::size_t>(bins) + 1, 0);
        std::vector<std::vector<std::size_t>> hits(2,
                                                   std::vector<std::size_t>(static_cast<std::size_t>(bins) + 1, 0));
        for (std::size_t i = 0; i < test_n; ++i) {
            int bin = rule.assign(spread[i]);
            ++bin_counts[static_cast<std::size_t>(bin)];
            ++bin_counts[0];
            double err = std::abs(test.dataset.response(i) - test.mu[i]);
            bool res_hit = err <= res_a;
            bool norm_hit = err / spread[i] <= norm_a;
            if (res_hit) {
                ++hits[0][static_cast<std::size_t>(bin)];
                ++hits[0][0];
            }
            if (norm_hit) {
                ++hits[1][static_cast<std::size_t>(bin)];
                ++hits[1][0];
            }
        }
        for (int s = 0; s < 2; ++s)
            for (int b = 0; b <= bins; ++b)
                cov[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)][t] =
                    static_cast<double>(hits[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)]) /
                    static_cast<double>(bin_counts[static_cast<std::size_t>(b)]);
    });

    CsvWriter csv((out_dir / (name + ".csv")).string());
    csv.row({"score", "bin", "coverage_mean", "coverage_sd"});
    const char* score_names[2] = {"residual", "normalized"};
    const char* bin_names[4] = {"marginal", "low", "medium", "high"};
    for (int s = 0; s < 2; ++s) {
        for (int b = 0; b <= bins; ++b) {
            const auto& values = cov[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)];
            double mean = 0.0;
            for (double v : values) mean += v;
            mean /= static_cast<double>(values.size());
            double ss = 0.0;
            for (double v : values) ss += (v - mean) * (v - mean);
            double sd = std::sqrt(ss / static_cast<double>(values.size()));
            csv.row({score_names[s], bin_names[b], format_number(mean), format_number(sd)});
        }
    }
    write_recipe_readme(out_dir, name,
                        {"Columns of " + name + ".csv:",
                         "- score: nonconformity measure (residual or spread-normalized)",
                         "- bin: marginal or equal-frequency spread bin (low/medium/high)",
                         "- coverage_mean, coverage_sd: over the repeated test sets"});
    return 0;
}

// Conditional-coverage sweep across generator types, misspecification modes
// and the three regression scores.
int recipe_misspec_sweep(const Config& cfg, std::uint64_t seed, const fs::path& out_dir) {
    const std::size_t cal_n = static_cast<std::size_t>(cfg.integer_or("recipe.cal_n", 2000));
    const std::size_t test_n = static_cast<std::size_t>(cfg.integer_or("recipe.test_n", 4000));
    const double alpha = cfg.num_or("alpha", 0.1);
    const int bins = 3;

    struct Mode {
        std::string label;
        MisspecSpec spec;
        bool identity;
    };
    std::vector<Mode> modes = {
        {"oracle", {MisspecMode::SigmaShift, 0.0}, true},
        {"sigma-shift-0.01", {MisspecMode::SigmaShift, 0.01}, false},
        {"sigma-shift-0.1", {MisspecMode::SigmaShift, 0.1}, false},
        {"sigma-shift-1", {MisspecMode::SigmaShift, 1.0}, false},
        {"sigma-scale-5", {MisspecMode::SigmaScale, 5.0}, false},
        {"mu-shift-const-1", {MisspecMode::MuShiftConst, 1.0}, false},
        {"mu-shift-prop-1", {MisspecMode::MuShiftProp, 1.0}, false},
    };

    SeededRng root(seed);
    CsvWriter csv((out_dir / "misspec_sweep.csv").string());
    csv.row({"type", "misspec", "score", "bin", "coverage"});
    double z = normal_quantile(1.0 - alpha / 2.0);

    for (int type = 1; type <= 4; ++type) {
        GeneratorSpec spec;
        spec.dimension = 2;
        switch (type) {
            case 1:
                spec.family = Family::Type1;
                spec.mu_const = 0.0;
                spec.sigma_const = 1.0;
                break;
            case 2:
                spec.family = Family::Type2;
                spec.feature_hi = 10.0;
                spec.cv = 0.1;
                break;
            case 3:
                spec.family = Family::Type3;
                spec.sigma_base = 0.5;
                spec.sigma_slope = 2.0;
                break;
            case 4:
                spec.family = Family::Type4;
                spec.feature_lo = 0.0;
                spec.feature_hi = 4.0;
                spec.cv = 0.1;
                break;
        }
        for (const auto& mode : modes) {
            SeededRng run = root.substream("mc:" + std::to_string(type) + ":" + mode.label);
            SynthData cal = generate(spec, cal_n, run);
            SynthData test = generate(spec, test_n, run);

            auto perturb = [&](const SynthData& data, std::size_t i, SeededRng& rng) {
                auto out = RegressionOutputs::from_mean_spread(data.mu[i], data.sigma[i]);
                return mode.identity ? out : misspecify(out, mode.spec, rng);
            };

            std::vector<double> cal_res(cal_n), cal_int(cal_n), cal_norm(cal_n), cal_spread(cal_n);
            for (std::size_t i = 0; i < cal_n; ++i) {
                auto est = perturb(cal, i, run);
                double y = cal.dataset.response(i);
                cal_res[i] = residual_score(est, y);
                cal_norm[i] = normalized_score(est, y);
                auto iv = RegressionOutputs::from_interval(*est.point - z * *est.spread,
                                                           *est.point + z * *est.spread);
                cal_int[i] = interval_score(iv, y);
                cal_spread[i] = *est.spread;
            }
            BinRule rule = equal_frequency_bins(cal_spread, bins);
            double a_res = Calibration(cal_res, alpha).critical_score();
            double a_int = Calibration(cal_int, alpha).critical_score();
            double a_norm = Calibration(cal_norm, alpha).critical_score();

            std::vector<std::vector<std::size_t>> hits(3, std::vector<std::size_t>(static_cast<std::size_t>(bins) + 1, 0));
            std::vector<std::size_t> counts(static_cast<std::size_t>(bins) + 1, 0);
            for (std::size_t i = 0; i < test_n; ++i) {
                auto est = perturb(test, i, run);
                double y = test.dataset.response(i);
                int bin = rule.assign(*est.spread);
                ++counts[static_cast<std::size_t>(bin)];
                ++counts[0];
                auto iv = RegressionOutputs::from_interval(*est.point - z * *est.spread,
                                                           *est.point + z * *est.spread);
                if (residual_score(est, y) <= a_res) {
                    ++hits[0][0];
                    ++hits[0][static_cast<std::size_t>(bin)];
                }
                if (interval_score(iv, y) <= a_int) {
                    ++hits[1][0];
                    ++hits[1][static_cast<std::size_t>(bin)];
                }
                if (normalized_score(est, y) <= a_norm) {
                    ++hits[2][0];
                    ++hits[2][static_cast<std::size_t>(bin)];
                }
            }
            const char* score_names[3] = {"residual", "interval", "normalized"};
            const char* bin_names[4] = {"marginal", "low", "medium", "high"};
            for (int s = 0; s < 3; ++s)
                for (int b = 0; b <= bins; ++b)
                    csv.row({std::to_string(type), mode.label, score_names[s], bin_names[b],
                             format_number(static_cast<double>(hits[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)]) /
                                           static_cast<double>(counts[static_cast<std::size_t>(b)]))});
        }
    }
    write_recipe_readme(out_dir, "misspec_sweep",
                        {"Columns of misspec_sweep.csv:",
                         "- type: synthetic generator type (1..4)",
                         "- misspec: parameter perturbation applied to the oracle",
                         "- score: residual, interval or normalized nonconformity",
                         "- bin: marginal or equal-frequency estimated-spread bin",
                         "- coverage: empirical conditional coverage"});
    return 0;
}

// Clusterwise sweep over a three-component normal (or half-normal) mixture:
// empirical per-class coverage against the quantile-matched value, the TV
// bound and the mixture bound.
int recipe_clusterwise(const Config& cfg, std::uint64_t seed, const fs::path& out_dir) {
    const std::size_t reps = static_cast<std::size_t>(cfg.integer_or("recipe.reps", 10000));
    const std::size_t n_cal = static_cast<std::size_t>(cfg.integer_or("recipe.cal_n", 100));
    const double alpha = cfg.num_or("alpha", 0.1);
    const std::string mode = cfg.str_or("recipe.mode", "mean");
    std::vector<double> params = cfg.has("recipe.params")
                                     ? cfg.num_list("recipe.params")
                                     : std::vector<double>{0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0};

    SeededRng root(seed);
    CsvWriter csv((out_dir / "clusterwise_sweep.csv").string());
    csv.row({"param", "class", "empirical", "quantile_matched", "tv_bound", "mixture_bound"});

    for (double param : params) {
        // Per-class score laws: shifted normals (mean mode) or half-normals
        // with scaled spread (scale mode).
        std::vector<double> mus(3, 0.0), sigmas(3, 1.0);
        if (mode == "mean") {
            mus = {0.0, param, 2.0 * param};
        } else if (mode == "scale") {
            sigmas = {1.0, std::max(0.1 * param, 1e-3), std::max(0.25 * param, 1e-3)};
        } else {
            throw ConfigError("recipe.mode: unknown value '" + mode + "'");
        }
        bool half_normal = mode == "scale";

        auto class_cdf = [&](int c) {
            double mu = mus[static_cast<std::size_t>(c - 1)];
            double s = sigmas[static_cast<std::size_t>(c - 1)];
            return std::function<double(double)>([mu, s, half_normal](double a) {
                if (half_normal) return a <= 0.0 ? 0.0 : 2.0 * normal_cdf(a / s) - 1.0;
                return normal_cdf((a - mu) / s);
            });
        };
        auto class_pdf = [&](int c) {
            double mu = mus[static_cast<std::size_t>(c - 1)];
            double s = sigmas[static_cast<std::size_t>(c - 1)];
            return std::function<double(double)>([mu, s, half_normal](double a) {
                double z = (a - mu) / s;
                double base = std::exp(-z * z / 2.0) / (s * std::sqrt(2.0 * 3.14159265358979323846));
                if (half_normal) return a < 0.0 ? 0.0 : 2.0 * base;
                return base;
            });
        };
        auto draw = [&](int c, SeededRng& rng) {
            double z = rng.normal();
            double s = sigmas[static_cast<std::size_t>(c - 1)];
            if (half_normal) return std::abs(s * z);
            return mus[static_cast<std::size_t>(c - 1)] + s * z;
        };

        MixtureSpec mix;
        for (int c = 1; c <= 3; ++c) {
            mix.weights[c] = 1.0 / 3.0;
            mix.cdfs[c] = class_cdf(c);
        }
        mix.support_lo = -10.0 - 3.0 * param;
        mix.support_hi = 10.0 + 3.0 * param;

        std::vector<double> empirical(3, 0.0);
        std::vector<std::vector<double>> slots(reps, std::vector<double>(3, 0.0));
        parallel_for(reps, [&](std::size_t r) {
            SeededRng sub = root.substream("mc:" + format_number(param) + ":" + std::to_string(r));
            std::vector<double> cal(n_cal);
            for (std::size_t i = 0; i < n_cal; ++i)
                cal[i] = draw(1 + static_cast<int>(sub.uniform_index(3)), sub);
            double a_star = Calibration(std::move(cal), alpha).critical_score();
            for (int c = 1; c <= 3; ++c)
                slots[r][static_cast<std::size_t>(c - 1)] = draw(c, sub) <= a_star ? 1.0 : 0.0;
        });
        for (const auto& row : slots)
            for (int c = 0; c < 3; ++c) empirical[static_cast<std::size_t>(c)] += row[static_cast<std::size_t>(c)];
        for (double& v : empirical) v /= static_cast<double>(reps);

        std::map<int, double> weights{{1, 1.0 / 3.0}, {2, 1.0 / 3.0}, {3, 1.0 / 3.0}};
        for (int c = 1; c <= 3; ++c) {
            double qm = quantile_matched_coverage(mix, c, alpha);
            double max_tv = 0.0;
            for (int other = 1; other <= 3; ++other) {
                if (other == c) continue;
                auto tv = tv_distance_numeric(class_pdf(c), class_pdf(other), mix.support_lo,
                                              mix.support_hi, 1 << 13);
                max_tv = std::max(max_tv, tv.value);
            }
            csv.row({format_number(param), std::to_string(c),
                     format_number(empirical[static_cast<std::size_t>(c - 1)]), format_number(qm),
                     format_number(std::max(0.0, 1.0 - alpha - max_tv)),
                     format_number(mixture_bound(weights, c, alpha))});
        }
    }
    write_recipe_readme(out_dir, "clusterwise_sweep",
                        {"Columns of clusterwise_sweep.csv:",
                         "- param: sweep parameter (class mean shift or spread scale)",
                         "- class: mixture component",
                         "- empirical: Monte Carlo per-class coverage",
                         "- quantile_matched: asymptotic coverage from the mixture quantile",
                         "- tv_bound: 1 - alpha - max total variation distance (floored at 0)",
                         "- mixture_bound: weight-based lower bound"});
    return 0;
}

// Martingale change-point demo: exchangeable phase, then a 3-sigma location
// shift; per-event p-value, wealth and alert flag.
int recipe_martingale(const Config& cfg, std::uint64_t seed, const fs::path& out_dir) {
    const std::size_t pre_n = static_cast<std::size_t>(cfg.integer_or("recipe.pre_n", 300));
    const std::size_t post_n = static_cast<std::size_t>(cfg.integer_or("recipe.post_n", 100));
    const double threshold = cfg.num_or("monitor.threshold", 20.0);

    SeededRng root(seed);
    SeededRng data_rng = root.substream("data");
    std::vector<double> cal(200);
    for (double& s : cal) s = std::abs(data_rng.normal());
    std::vector<double> stream;
    stream.reserve(pre_n + post_n);
    for (std::size_t i = 0; i < pre_n; ++i) stream.push_back(std::abs(data_rng.normal()));
    for (std::size_t i = 0; i < post_n; ++i) stream.push_back(std::abs(data_rng.normal() + 3.0));

    MonitorConfig monitor_cfg;
    monitor_cfg.betting.kind = Betting::Mixture;
    monitor_cfg.threshold = threshold;
    SeededRng smoothing = root.substream("smoothing");
    auto events = monitor(stream, cal, monitor_cfg, smoothing);

    CsvWriter csv((out_dir / "martingale_demo.csv").string());
    csv.row({"index", "p_value", "wealth", "alert"});
    for (std::size_t i = 0; i < events.size(); ++i)
        csv.row({std::to_string(i), format_number(events[i].p), format_number(events[i].wealth),
                 events[i].alert ? "1" : "0"});
    write_recipe_readme(out_dir, "martingale_demo",
                        {"Columns of martingale_demo.csv:",
                         "- index: event index (change point after recipe.pre_n events)",
                         "- p_value: smoothed conformal p-value of the event",
                         "- wealth: mixture martingale wealth after the event",
                         "- alert: 1 once wealth has crossed the threshold (latched)"});
    return 0;
}

int cmd_experiment(const std::string& recipe, const CommonArgs& args) {
    Config cfg;
    if (!args.config_path.empty()) cfg = Config::load(args.config_path);
    std::uint64_t seed = resolve_seed(cfg, args);
    fs::create_directories(args.out_dir);
    fs::path out_dir(args.out_dir);

    int rc;
    if (recipe == "beta_band") {
        rc = recipe_beta_band(cfg, seed, out_dir);
    } else if (recipe == "weights_illustration") {
        rc = recipe_weights(cfg, seed, out_dir);
    } else if (recipe == "table4_1") {
        rc = recipe_coverage_grid(cfg, seed, out_dir, false, "table4_1");
    } else if (recipe == "table4_2") {
        rc = recipe_coverage_grid(cfg, seed, out_dir, true, "table4_2");
    } else if (recipe == "misspec_sweep") {
        rc = recipe_misspec_sweep(cfg, seed, out_dir);
    } else if (recipe == "clusterwise_sweep") {
        rc = recipe_clusterwise(cfg, seed, out_dir);
    } else if (recipe == "martingale_demo") {
        rc = recipe_martingale(cfg, seed, out_dir);
    } else {
        throw ConfigError(
            "unknown recipe '" + recipe +
            "'; available: beta_band, weights_illustration, table4_1, table4_2, misspec_sweep, "
            "clusterwise_sweep, martingale_demo");
    }
    write_meta(cfg, seed, out_dir);
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distribution-free uncertainty quantification toolkit"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string calibration_path, test_path, stream_path;
    std::string predictions_path, truth_path, classes_path;
    std::string recipe;
    double eval_alpha = 0.1;
    std::uint64_t seed_value = 0;
    bool seed_given = false;

    auto add_seed = [&](CLI::App* sub) {
        sub->add_option("--seed", seed_value, "Override the config seed")->each([&](const std::string&) {
            seed_given = true;
        });
    };

    CLI::App* calibrate_cmd = app.add_subcommand("calibrate", "Fit calibration artifacts");
    calibrate_cmd->add_option("--config", common.config_path, "Config file")->required();
    calibrate_cmd->add_option("--out", common.out_dir, "Output directory")->required();
    add_seed(calibrate_cmd);

    CLI::App* predict_cmd = app.add_subcommand("predict", "Predict bands or label sets");
    predict_cmd->add_option("--config", common.config_path, "Config file")->required();
    predict_cmd->add_option("--calibration", calibration_path, "calibration.csv from calibrate");
    predict_cmd->add_option("--test", test_path, "Test CSV")->required();
    predict_cmd->add_option("--out", common.out_dir, "Output directory")->required();
    add_seed(predict_cmd);

    CLI::App* evaluate_cmd = app.add_subcommand("evaluate", "Score predictions against truths");
    evaluate_cmd->add_option("--predictions", predictions_path, "predictions.csv")->required();
    evaluate_cmd->add_option("--truth", truth_path, "Truth CSV (y or label column)")->required();
    evaluate_cmd->add_option("--classes", classes_path, "Optional per-row class CSV");
    evaluate_cmd->add_option("--alpha", eval_alpha, "Significance level echoed into the report");
    evaluate_cmd->add_option("--out", common.out_dir, "Output directory")->required();

    CLI::App* experiment_cmd = app.add_subcommand("experiment", "Run a named recipe");
    experiment_cmd->add_option("--recipe", recipe, "Recipe name")->required();
    experiment_cmd->add_option("--config", common.config_path, "Optional config overrides");
    experiment_cmd->add_option("--out", common.out_dir, "Output directory")->required();
    add_seed(experiment_cmd);

    CLI::App* monitor_cmd = app.add_subcommand("monitor", "Stream exchangeability monitoring");
    monitor_cmd->add_option("--config", common.config_path, "Config file")->required();
    monitor_cmd->add_option("--stream", stream_path, "Stream CSV (one row per event)")->required();
    monitor_cmd->add_option("--out", common.out_dir, "Output directory")->required();
    add_seed(monitor_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    if (seed_given) common.seed_override = seed_value;

    try {
        if (calibrate_cmd->parsed()) return cmd_calibrate(common);
        if (predict_cmd->parsed()) return cmd_predict(common, calibration_path, test_path);
        if (evaluate_cmd->parsed())
            return cmd_evaluate(predictions_path, truth_path, classes_path, common.out_dir, eval_alpha);
        if (experiment_cmd->parsed()) return cmd_experiment(recipe, common);
        if (monitor_cmd->parsed()) return cmd_monitor(common, stream_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
