#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mslm/recurrent.hpp"
#include "mslm/tensor.hpp"
#include "mslm/tokens.hpp"
#include "mslm/trainer.hpp"

namespace mslm {

struct HyperParams {
    double dropout_e = 0.0;
    double dropout_h = 0.0;
    double dropout_i = 0.0;
    double dropout_o = 0.0;
    double weight_drop = 0.0;
    std::size_t bptt = 30;
    std::size_t layers = 1;
    std::size_t emb_size = 100;
    std::size_t hidden_size = 100;

    static constexpr std::size_t kFeatures = 9;
    /// Column order shared by every record file and forest.
    static const std::array<std::string, kFeatures>& feature_names();
    std::array<double, kFeatures> features() const;
    static HyperParams from_features(std::span<const double> values);

    bool operator==(const HyperParams&) const = default;
};

/// Index of a feature name; NamingError when unknown.
std::size_t feature_index(std::string_view name);

struct IntRange {
    std::int64_t lo = 0;
    std::int64_t hi = 0;
};

struct RealRange {
    double lo = 0.0;
    double hi = 0.0;
};

struct HyperBounds {
    RealRange dropout{0.0, 1.0};
    IntRange bptt{30, 300};
    IntRange layers{1, 10};
    IntRange emb_size{100, 500};
    IntRange hidden_size{100, 500};

    /// DomainError on inverted or out-of-range bounds.
    void validate() const;
    bool contains(const HyperParams& p) const;
};

/// Dropouts continuous-uniform, the rest integer-uniform, all fields independent.
HyperParams sample_hyperparams(Rng& rng, const HyperBounds& bounds = {});

enum class TrialStatus { ok, diverged };

std::string to_string(TrialStatus s);
TrialStatus parse_trial_status(std::string_view s);

struct RunRecord {
    HyperParams params;
    double metric = 0.0;  // validation perplexity; NaN when diverged
    TrialStatus status = TrialStatus::ok;
    std::uint64_t seed = 0;
    double seconds = 0.0;
};

void write_record_header(std::ostream& out);
void write_record(std::ostream& out, const RunRecord& record);
/// Parses a record file. A final line without a newline is treated as an
/// interrupted write and dropped. FormatError on a foreign header or bad row.
std::vector<RunRecord> read_records(const std::string& path);

struct StudyData {
    std::vector<TokenId> train;
    std::vector<TokenId> valid;
    std::size_t vocab_size = 0;
};

struct StudyConfig {
    std::size_t trials = 20;
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    HyperBounds bounds;
    CellType cell = CellType::lstm;
    /// Template for every trial; the window length comes from the trial's bptt.
    TrainerConfig trainer;
    std::size_t batch = 8;
    std::size_t eval_batch = 4;
    /// Multiplies the sampled embedding and hidden sizes when building the
    /// model. Records keep the sampled values.
    double size_scale = 1.0;
    /// Stop after this many new trials in one call (the study stays resumable).
    std::optional<std::size_t> max_new_trials;

    void validate() const;
};

/// 200 trials of 300 epochs at lr 1e-3, decayed 10x at epochs 150 and 225.
StudyConfig full_scale_study();
/// 20 four-epoch trials on models shrunk tenfold in width.
StudyConfig desk_scale_study();

/// Model actually trained for a sampled point.
ModelConfig trial_model_config(const HyperParams& params, const StudyConfig& config, std::size_t vocab_size);

/// Trial k uses seed derive_seed(config.seed, k) for sampling, init and dropout.
RunRecord run_trial(std::uint64_t seed, const StudyConfig& config, const StudyData& data);

/// Runs (or continues) a study whose records live at `record_path`. Existing
/// records must be the leading trials of the same study; the file is rewritten
/// with them and new trials are appended in trial order. Returns every record.
/// DataError when the finished study has no successful trial.
std::vector<RunRecord> run_study(const StudyConfig& config, const StudyData& data, const std::string& record_path);

struct ForestConfig {
    std::size_t n_trees = 200;
    std::size_t max_depth = 8;
    std::size_t min_leaf = 3;
    double feature_fraction = 1.0 / 3.0;
    bool bootstrap = true;

    void validate() const;
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // go left when x[feature] <= threshold
    int left = -1;
    int right = -1;
    double value = 0.0;  // mean target of the node's samples
    std::size_t samples = 0;
    double gain = 0.0;  // reduction in summed squared deviation
};

struct RegressionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root
    double predict(std::span<const double> x) const;
};

class RegressionForest {
public:
    explicit RegressionForest(ForestConfig config = {});

    /// Rows of x share one width. DataError when empty or ragged.
    void fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y, Rng& rng);

    bool fitted() const noexcept { return !trees_.empty(); }
    double predict(std::span<const double> x) const;
    std::size_t features() const noexcept { return features_; }
    const std::vector<RegressionTree>& trees() const noexcept { return trees_; }
    const ForestConfig& config() const noexcept { return config_; }

private:
    ForestConfig config_;
    std::size_t features_ = 0;
    std::vector<RegressionTree> trees_;
};

inline constexpr std::size_t kMinForestRecords = 20;

/// Fits on the ok records with target log(metric). DataError below kMinForestRecords.
RegressionForest fit_forest(const std::vector<RunRecord>& records, const ForestConfig& config, Rng& rng);

/// Impurity decrease per feature summed over all trees, normalized to sum 1
/// (all zeros when no tree ever split). StateError before fitting.
std::vector<double> feature_importance(const RegressionForest& forest);

void write_importance_csv(std::ostream& out, std::span<const std::string> names, std::span<const double> importance);

struct Surface {
    std::string x_name;
    std::string y_name;
    std::vector<std::array<double, 3>> points;  // (x, y, metric) per ok record
    std::vector<double> grid_x;
    std::vector<double> grid_y;
    std::vector<double> grid;  // grid[iy * grid_x.size() + ix]
    bool degenerate = false;   // a feature never varies: grid collapses on that axis

    double at(std::size_t ix, std::size_t iy) const { return grid[iy * grid_x.size() + ix]; }
};

/// Nearest-neighbour surface over a regular grid spanning the observed range,
/// distances measured in range-normalized units.
Surface interpolate_surface(std::vector<std::array<double, 3>> points, std::size_t grid_size);

/// Surface for a feature pair over the ok records. NamingError for an unknown
/// feature, DataError below kMinForestRecords.
Surface joint_influence(const std::vector<RunRecord>& records, std::string_view x_feature, std::string_view y_feature,
                        std::size_t grid_size = 20);

/// weight_drop against dropout_h, dropout_e and emb_size.
const std::vector<std::pair<std::string, std::string>>& default_surface_pairs();

void write_surface_points_csv(std::ostream& out, const Surface& surface);
void write_surface_grid_csv(std::ostream& out, const Surface& surface);

}  // namespace mslm
