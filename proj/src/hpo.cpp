#include "mslm/hpo.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "mslm/corpus.hpp"
#include "mslm/error.hpp"

namespace mslm {

const std::array<std::string, HyperParams::kFeatures>& HyperParams::feature_names() {
    static const std::array<std::string, kFeatures> names{"dropout_e", "dropout_h",   "dropout_i",
                                                          "dropout_o", "weight_drop", "bptt",
                                                          "layers",    "emb_size",    "hidden_size"};
    return names;
}

std::array<double, HyperParams::kFeatures> HyperParams::features() const {
    return {dropout_e, dropout_h, dropout_i, dropout_o, weight_drop, static_cast<double>(bptt),
            static_cast<double>(layers), static_cast<double>(emb_size), static_cast<double>(hidden_size)};
}

HyperParams HyperParams::from_features(std::span<const double> v) {
    if (v.size() != kFeatures) throw DimensionError("hyperparameters: expected " + std::to_string(kFeatures) + " values");
    auto integral = [](double x) {
        if (!(x >= 0.0) || x != std::floor(x)) throw FormatError("hyperparameters: expected a non-negative integer");
        return static_cast<std::size_t>(x);
    };
    HyperParams p;
    p.dropout_e = v[0];
    p.dropout_h = v[1];
    p.dropout_i = v[2];
    p.dropout_o = v[3];
    p.weight_drop = v[4];
    p.bptt = integral(v[5]);
    p.layers = integral(v[6]);
    p.emb_size = integral(v[7]);
    p.hidden_size = integral(v[8]);
    return p;
}

std::size_t feature_index(std::string_view name) {
    const auto& names = HyperParams::feature_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return i;
    }
    throw NamingError("unknown hyperparameter '" + std::string(name) + "'");
}

void HyperBounds::validate() const {
    if (!(dropout.lo >= 0.0 && dropout.lo <= dropout.hi && dropout.hi <= 1.0)) {
        throw DomainError("bounds: dropout range must satisfy 0 <= lo <= hi <= 1");
    }
    auto check = [](const IntRange& r, std::int64_t floor, const char* name) {
        if (r.lo > r.hi || r.lo < floor) {
            throw DomainError(std::string("bounds: invalid range for ") + name + " [" + std::to_string(r.lo) + ", " +
                              std::to_string(r.hi) + "]");
        }
    };
    check(bptt, 2, "bptt");
    check(layers, 1, "layers");
    check(emb_size, 1, "emb_size");
    check(hidden_size, 1, "hidden_size");
}

bool HyperBounds::contains(const HyperParams& p) const {
    auto in_real = [&](double x) { return x >= dropout.lo && x <= dropout.hi; };
    auto in_int = [](std::size_t x, const IntRange& r) {
        return static_cast<std::int64_t>(x) >= r.lo && static_cast<std::int64_t>(x) <= r.hi;
    };
    return in_real(p.dropout_e) && in_real(p.dropout_h) && in_real(p.dropout_i) && in_real(p.dropout_o) &&
           in_real(p.weight_drop) && in_int(p.bptt, bptt) && in_int(p.layers, layers) &&
           in_int(p.emb_size, emb_size) && in_int(p.hidden_size, hidden_size);
}

HyperParams sample_hyperparams(Rng& rng, const HyperBounds& bounds) {
    bounds.validate();
    auto real = [&] {
        return bounds.dropout.lo == bounds.dropout.hi ? bounds.dropout.lo : rng.uniform(bounds.dropout.lo, bounds.dropout.hi);
    };
    auto integer = [&](const IntRange& r) { return static_cast<std::size_t>(rng.uniform_int(r.lo, r.hi)); };
    HyperParams p;
    p.dropout_e = real();
    p.dropout_h = real();
    p.dropout_i = real();
    p.dropout_o = real();
    p.weight_drop = real();
    p.bptt = integer(bounds.bptt);
    p.layers = integer(bounds.layers);
    p.emb_size = integer(bounds.emb_size);
    p.hidden_size = integer(bounds.hidden_size);
    return p;
}

std::string to_string(TrialStatus s) { return s == TrialStatus::ok ? "ok" : "diverged"; }

TrialStatus parse_trial_status(std::string_view s) {
    if (s == "ok") return TrialStatus::ok;
    if (s == "diverged") return TrialStatus::diverged;
    throw FormatError("unknown trial status '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Record file

namespace {

std::string record_header() {
    std::string h;
    for (const auto& n : HyperParams::feature_names()) h += n + ",";
    return h + "metric,status,seed,seconds";
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw FormatError("record file: bad number '" + s + "'");
    }
    if (used != s.size()) throw FormatError("record file: bad number '" + s + "'");
    return v;
}

}  // namespace

void write_record_header(std::ostream& out) { out << record_header() << '\n'; }

void write_record(std::ostream& out, const RunRecord& r) {
    std::ostringstream line;
    line.precision(17);
    const auto f = r.params.features();
    for (double v : f) line << v << ',';
    line << r.metric << ',' << to_string(r.status) << ',' << r.seed << ',';
    line.precision(6);
    line << r.seconds << '\n';
    out << line.str();
}

std::vector<RunRecord> read_records(const std::string& path) {
    const std::string text = read_file(path);
    std::vector<RunRecord> records;
    std::size_t start = 0;
    bool header_seen = false;
    while (start < text.size()) {
        const std::size_t end = text.find('\n', start);
        if (end == std::string::npos) break;  // interrupted write
        const std::string line = text.substr(start, end - start);
        start = end + 1;
        if (!header_seen) {
            if (line != record_header()) throw FormatError("record file '" + path + "' has an unexpected header");
            header_seen = true;
            continue;
        }
        const auto cells = split_csv(line);
        if (cells.size() != HyperParams::kFeatures + 4) throw FormatError("record file: wrong column count");
        std::vector<double> values;
        for (std::size_t i = 0; i < HyperParams::kFeatures; ++i) values.push_back(parse_double(cells[i]));
        RunRecord r;
        r.params = HyperParams::from_features(values);
        r.metric = parse_double(cells[HyperParams::kFeatures]);
        r.status = parse_trial_status(cells[HyperParams::kFeatures + 1]);
        try {
            std::size_t used = 0;
            r.seed = std::stoull(cells[HyperParams::kFeatures + 2], &used);
            if (used != cells[HyperParams::kFeatures + 2].size()) throw FormatError("bad seed");
        } catch (const std::exception&) {
            throw FormatError("record file: bad seed '" + cells[HyperParams::kFeatures + 2] + "'");
        }
        r.seconds = parse_double(cells[HyperParams::kFeatures + 3]);
        records.push_back(r);
    }
    if (!header_seen && !text.empty() && text.find('\n') != std::string::npos) {
        throw FormatError("record file '" + path + "' has no header");
    }
    return records;
}

// ---------------------------------------------------------------------------
// Trials

void StudyConfig::validate() const {
    bounds.validate();
    trainer.reg.validate();
    if (trials == 0) throw DomainError("study: trials must be positive");
    if (workers == 0) throw DomainError("study: workers must be positive");
    if (batch == 0 || eval_batch == 0) throw DomainError("study: batch sizes must be positive");
    if (!(size_scale > 0.0)) throw DomainError("study: size_scale must be positive");
    if (!(trainer.schedule.lr0 > 0.0) || trainer.schedule.epochs == 0) {
        throw DomainError("study: trials need a positive learning rate and at least one epoch");
    }
}

StudyConfig full_scale_study() {
    StudyConfig c;
    c.trials = 200;
    c.trainer.schedule = {1e-3, 300, {150, 225}, 10.0};
    c.batch = 20;
    c.eval_batch = 10;
    return c;
}

StudyConfig desk_scale_study() {
    StudyConfig c;
    c.trials = 20;
    c.trainer.schedule = {3e-3, 4, {}, 10.0};
    c.size_scale = 0.1;
    return c;
}

ModelConfig trial_model_config(const HyperParams& p, const StudyConfig& config, std::size_t vocab_size) {
    auto scaled = [&](std::size_t n) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * config.size_scale)));
    };
    ModelConfig m;
    m.cell = config.cell;
    m.vocab_size = vocab_size;
    m.layers = p.layers;
    m.embedding_size = scaled(p.emb_size);
    m.hidden_size = scaled(p.hidden_size);
    m.dropout = {p.dropout_e, p.dropout_h, p.dropout_i, p.dropout_o, p.weight_drop};
    return m;
}

RunRecord run_trial(std::uint64_t seed, const StudyConfig& config, const StudyData& data) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(seed);
    RunRecord record;
    record.seed = seed;
    record.params = sample_hyperparams(rng, config.bounds);

    LanguageModel model(trial_model_config(record.params, config, data.vocab_size), derive_seed(seed, 1));
    TrainerConfig tc = config.trainer;
    tc.window.base_bptt = record.params.bptt;
    Trainer trainer(model, tc, derive_seed(seed, 2));
    const BatchStream train = batchify(data.train, config.batch);
    const BatchStream valid = batchify(data.valid, config.eval_batch);
    try {
        for (std::size_t e = 0; e < tc.schedule.epochs; ++e) trainer.train_epoch(train);
        const double nats = evaluate(model, valid, record.params.bptt).metrics.nats;
        record.metric = std::exp(nats);
        record.status = std::isfinite(record.metric) ? TrialStatus::ok : TrialStatus::diverged;
    } catch (const DivergenceError&) {
        record.status = TrialStatus::diverged;
    }
    if (record.status == TrialStatus::diverged) record.metric = std::numeric_limits<double>::quiet_NaN();
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return record;
}

std::vector<RunRecord> run_study(const StudyConfig& config, const StudyData& data, const std::string& record_path) {
    config.validate();
    if (data.vocab_size == 0 || data.train.size() < 2 * config.batch || data.valid.size() < 2 * config.eval_batch) {
        throw DataError("study: the training and validation splits are too small for the batch sizes");
    }
    std::vector<RunRecord> records;
    if (std::filesystem::exists(record_path)) records = read_records(record_path);
    if (records.size() > config.trials) throw CompatibilityError("study: record file holds more trials than requested");
    for (std::size_t k = 0; k < records.size(); ++k) {
        if (records[k].seed != derive_seed(config.seed, k)) {
            throw CompatibilityError("study: record " + std::to_string(k) + " does not belong to this study");
        }
    }
    {
        // Rewrite so that a half-written trailing line from an interruption disappears.
        const std::string tmp = record_path + ".tmp";
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IngestionError("cannot write record file '" + record_path + "'");
        write_record_header(out);
        for (const auto& r : records) write_record(out, r);
        out.close();
        std::filesystem::rename(tmp, record_path);
    }

    const std::size_t first = records.size();
    std::size_t last = config.trials;
    if (config.max_new_trials) last = std::min(last, first + *config.max_new_trials);
    std::vector<std::optional<RunRecord>> slots(last - first);
    std::atomic<std::size_t> next{first};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex mutex;
    std::size_t written = first;
    std::ofstream out(record_path, std::ios::binary | std::ios::app);
    if (!out) throw IngestionError("cannot append to record file '" + record_path + "'");

    auto worker = [&] {
        while (!failed) {
            const std::size_t k = next.fetch_add(1);
            if (k >= last) return;
            try {
                RunRecord r = run_trial(derive_seed(config.seed, k), config, data);
                std::lock_guard lock(mutex);
                slots[k - first] = std::move(r);
                while (written < last && slots[written - first]) {
                    write_record(out, *slots[written - first]);
                    ++written;
                }
                out.flush();
            } catch (...) {
                std::lock_guard lock(mutex);
                if (!error) error = std::current_exception();
                failed = true;
            }
        }
    };
    const std::size_t n_workers = std::min(config.workers, std::max<std::size_t>(1, last - first));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (error) std::rethrow_exception(error);
    for (auto& s : slots) records.push_back(std::move(*s));

    if (records.size() == config.trials &&
        std::none_of(records.begin(), records.end(), [](const RunRecord& r) { return r.status == TrialStatus::ok; })) {
        throw DataError("study: no trial finished successfully");
    }
    return records;
}

// ---------------------------------------------------------------------------
// Forest

void ForestConfig::validate() const {
    if (n_trees == 0) throw DomainError("forest: n_trees must be positive");
    if (max_depth == 0) throw DomainError("forest: max_depth must be positive");
    if (min_leaf == 0) throw DomainError("forest: min_leaf must be positive");
    if (!(feature_fraction > 0.0 && feature_fraction <= 1.0)) throw DomainError("forest: feature_fraction must lie in (0, 1]");
}

double RegressionTree::predict(std::span<const double> x) const {
    int i = 0;
    while (nodes[i].feature >= 0) {
        const TreeNode& n = nodes[i];
        i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[i].value;
}

namespace {

class TreeBuilder {
public:
    TreeBuilder(const std::vector<std::vector<double>>& x, const std::vector<double>& y, const ForestConfig& cfg,
                std::size_t features, Rng& rng)
        : x_(x), y_(y), cfg_(cfg), features_(features), rng_(rng) {
        subset_ = std::max<std::size_t>(
            1, std::min(features, static_cast<std::size_t>(std::llround(cfg.feature_fraction * static_cast<double>(features)))));
    }

    RegressionTree build(std::vector<std::size_t> rows) {
        tree_ = {};
        grow(std::move(rows), 0);
        return std::move(tree_);
    }

private:
    struct Split {
        int feature = -1;
        double threshold = 0.0;
        double gain = 0.0;
    };

    int grow(std::vector<std::size_t> rows, std::size_t depth) {
        const int id = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        double sum = 0.0;
        for (auto r : rows) sum += y_[r];
        tree_.nodes[id].value = sum / static_cast<double>(rows.size());
        tree_.nodes[id].samples = rows.size();
        if (depth >= cfg_.max_depth || rows.size() < 2 * cfg_.min_leaf) return id;

        const Split best = best_split(rows);
        if (best.feature < 0) return id;
        std::vector<std::size_t> left, right;
        for (auto r : rows) (x_[r][best.feature] <= best.threshold ? left : right).push_back(r);
        rows.clear();
        rows.shrink_to_fit();
        const int l = grow(std::move(left), depth + 1);
        const int r = grow(std::move(right), depth + 1);
        TreeNode& node = tree_.nodes[id];
        node.feature = best.feature;
        node.threshold = best.threshold;
        node.gain = best.gain;
        node.left = l;
        node.right = r;
        return id;
    }

    std::vector<std::size_t> candidate_features() {
        std::vector<std::size_t> all(features_);
        std::iota(all.begin(), all.end(), 0);
        for (std::size_t i = 0; i < subset_; ++i) {
            const auto j = static_cast<std::size_t>(rng_.uniform_int(static_cast<std::int64_t>(i),
                                                                     static_cast<std::int64_t>(features_ - 1)));
            std::swap(all[i], all[j]);
        }
        all.resize(subset_);
        std::sort(all.begin(), all.end());
        return all;
    }

    Split best_split(const std::vector<std::size_t>& rows) {
        const std::size_t n = rows.size();
        double mean = 0.0;
        double lo = y_[rows[0]], hi = lo;
        for (auto r : rows) {
            mean += y_[r];
            lo = std::min(lo, y_[r]);
            hi = std::max(hi, y_[r]);
        }
        Split best;
        if (lo == hi) return best;
        mean /= static_cast<double>(n);
        double total_sse = 0.0;
        for (auto r : rows) total_sse += (y_[r] - mean) * (y_[r] - mean);
        const double floor = 1e-12 * total_sse;

        std::vector<std::size_t> order(rows);
        for (std::size_t f : candidate_features()) {
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return x_[a][f] < x_[b][f] || (x_[a][f] == x_[b][f] && a < b);
            });
            double total = 0.0;
            for (auto r : order) total += y_[r] - mean;
            double left = 0.0;
            for (std::size_t i = 0; i + 1 < n; ++i) {
                left += y_[order[i]] - mean;
                const std::size_t nl = i + 1, nr = n - nl;
                if (nl < cfg_.min_leaf) continue;
                if (nr < cfg_.min_leaf) break;
                const double a = x_[order[i]][f], b = x_[order[i + 1]][f];
                if (!(a < b)) continue;
                const double right = total - left;
                const double gain = left * left / static_cast<double>(nl) + right * right / static_cast<double>(nr) -
                                    total * total / static_cast<double>(n);
                if (gain > best.gain && gain > floor) {
                    best.feature = static_cast<int>(f);
                    best.threshold = a + 0.5 * (b - a);
                    best.gain = gain;
                }
            }
        }
        return best;
    }

    const std::vector<std::vector<double>>& x_;
    const std::vector<double>& y_;
    const ForestConfig& cfg_;
    std::size_t features_;
    std::size_t subset_;
    Rng& rng_;
    RegressionTree tree_;
};

}  // namespace

RegressionForest::RegressionForest(ForestConfig config) : config_(config) { config_.validate(); }

void RegressionForest::fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y, Rng& rng) {
    if (x.empty() || x.size() != y.size()) throw DataError("forest: need matching, non-empty inputs and targets");
    const std::size_t d = x[0].size();
    if (d == 0) throw DataError("forest: need at least one feature");
    for (const auto& row : x) {
        if (row.size() != d) throw DataError("forest: ragged feature rows");
        for (double v : row) {
            if (!std::isfinite(v)) throw DataError("forest: non-finite feature value");
        }
    }
    for (double v : y) {
        if (!std::isfinite(v)) throw DataError("forest: non-finite target");
    }
    features_ = d;
    trees_.clear();
    TreeBuilder builder(x, y, config_, d, rng);
    const std::size_t n = x.size();
    for (std::size_t t = 0; t < config_.n_trees; ++t) {
        std::vector<std::size_t> rows(n);
        if (config_.bootstrap) {
            for (auto& r : rows) r = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
        } else {
            std::iota(rows.begin(), rows.end(), 0);
        }
        trees_.push_back(builder.build(std::move(rows)));
    }
}

double RegressionForest::predict(std::span<const double> x) const {
    if (!fitted()) throw StateError("forest: predict before fit");
    if (x.size() != features_) throw DimensionError("forest: expected " + std::to_string(features_) + " features");
    double sum = 0.0;
    for (const auto& t : trees_) sum += t.predict(x);
    return sum / static_cast<double>(trees_.size());
}

RegressionForest fit_forest(const std::vector<RunRecord>& records, const ForestConfig& config, Rng& rng) {
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (const auto& r : records) {
        if (r.status != TrialStatus::ok || !(r.metric > 0.0) || !std::isfinite(r.metric)) continue;
        const auto f = r.params.features();
        x.emplace_back(f.begin(), f.end());
        y.push_back(std::log(r.metric));
    }
    if (x.size() < kMinForestRecords) {
        throw DataError("forest: " + std::to_string(x.size()) + " successful records, need at least " +
                        std::to_string(kMinForestRecords));
    }
    RegressionForest forest(config);
    forest.fit(x, y, rng);
    return forest;
}

std::vector<double> feature_importance(const RegressionForest& forest) {
    if (!forest.fitted()) throw StateError("forest: importance requested before fit");
    std::vector<double> imp(forest.features(), 0.0);
    for (const auto& t : forest.trees()) {
        for (const auto& n : t.nodes) {
            if (n.feature >= 0) imp[static_cast<std::size_t>(n.feature)] += n.gain;
        }
    }
    const double total = std::accumulate(imp.begin(), imp.end(), 0.0);
    if (total > 0.0) {
        for (double& v : imp) v /= total;
    }
    return imp;
}

void write_importance_csv(std::ostream& out, std::span<const std::string> names, std::span<const double> importance) {
    if (names.size() != importance.size()) throw DimensionError("importance: names and values differ in length");
    out << "feature,importance\n";
    out.precision(17);
    for (std::size_t i = 0; i < names.size(); ++i) out << names[i] << ',' << importance[i] << '\n';
}

// ---------------------------------------------------------------------------
// Surfaces

Surface interpolate_surface(std::vector<std::array<double, 3>> points, std::size_t grid_size) {
    if (points.empty()) throw DataError("surface: no points");
    if (grid_size < 2) throw DomainError("surface: grid_size must be at least 2");
    Surface s;
    double x_lo = points[0][0], x_hi = x_lo, y_lo = points[0][1], y_hi = y_lo;
    for (const auto& p : points) {
        x_lo = std::min(x_lo, p[0]);
        x_hi = std::max(x_hi, p[0]);
        y_lo = std::min(y_lo, p[1]);
        y_hi = std::max(y_hi, p[1]);
    }
    auto axis = [&](double lo, double hi) {
        std::vector<double> g;
        if (lo == hi) return std::vector<double>{lo};
        for (std::size_t i = 0; i < grid_size; ++i) {
            g.push_back(i + 1 == grid_size ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(grid_size - 1));
        }
        return g;
    };
    s.grid_x = axis(x_lo, x_hi);
    s.grid_y = axis(y_lo, y_hi);
    s.degenerate = x_lo == x_hi || y_lo == y_hi;
    const double sx = x_hi > x_lo ? 1.0 / (x_hi - x_lo) : 0.0;
    const double sy = y_hi > y_lo ? 1.0 / (y_hi - y_lo) : 0.0;
    for (double gy : s.grid_y) {
        for (double gx : s.grid_x) {
            double best = std::numeric_limits<double>::infinity();
            double value = 0.0;
            for (const auto& p : points) {
                const double dx = (p[0] - gx) * sx, dy = (p[1] - gy) * sy;
                const double d = dx * dx + dy * dy;
                if (d < best) {
                    best = d;
                    value = p[2];
                }
            }
            s.grid.push_back(value);
        }
    }
    s.points = std::move(points);
    return s;
}

Surface joint_influence(const std::vector<RunRecord>& records, std::string_view x_feature, std::string_view y_feature,
                        std::size_t grid_size) {
    const std::size_t xi = feature_index(x_feature), yi = feature_index(y_feature);
    std::vector<std::array<double, 3>> points;
    for (const auto& r : records) {
        if (r.status != TrialStatus::ok || !std::isfinite(r.metric)) continue;
        const auto f = r.params.features();
        points.push_back({f[xi], f[yi], r.metric});
    }
    if (points.size() < kMinForestRecords) {
        throw DataError("surface: " + std::to_string(points.size()) + " successful records, need at least " +
                        std::to_string(kMinForestRecords));
    }
    Surface s = interpolate_surface(std::move(points), grid_size);
    s.x_name = std::string(x_feature);
    s.y_name = std::string(y_feature);
    return s;
}

const std::vector<std::pair<std::string, std::string>>& default_surface_pairs() {
    static const std::vector<std::pair<std::string, std::string>> pairs{
        {"weight_drop", "dropout_h"}, {"weight_drop", "dropout_e"}, {"weight_drop", "emb_size"}};
    return pairs;
}

void write_surface_points_csv(std::ostream& out, const Surface& s) {
    out << "x,y,metric\n";
    out.precision(17);
    for (const auto& p : s.points) out << p[0] << ',' << p[1] << ',' << p[2] << '\n';
}

void write_surface_grid_csv(std::ostream& out, const Surface& s) {
    out << "x,y,metric\n";
    out.precision(17);
    for (std::size_t iy = 0; iy < s.grid_y.size(); ++iy) {
        for (std::size_t ix = 0; ix < s.grid_x.size(); ++ix) {
            out << s.grid_x[ix] << ',' << s.grid_y[iy] << ',' << s.at(ix, iy) << '\n';
        }
    }
}

}  // namespace mslm
