#pragma once

// Experiment drivers. Every run is a pure function of its ExperimentConfig:
// the same config (seeds included) gives the same ResultTable, row for row.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sof/continuous.hpp"
#include "sof/datasets.hpp"
#include "sof/models.hpp"
#include "sof/optim.hpp"
#include "sof/simplex.hpp"

namespace sof {

enum class Profile { desk, paper };
Profile parse_profile(std::string_view name);
std::string to_string(Profile p);

enum class ReportFormat { csv, json };
ReportFormat parse_report_format(std::string_view name);

struct ExperimentConfig {
    std::string experiment = "exp1"; // exp1 | exp2 | exp3 | exp4
    Profile profile = Profile::desk;
    std::uint64_t seed = 0;

    std::vector<LossKind> losses;          // empty: the experiment's default set
    std::vector<double> lambdas;           // exp2, exp3; empty: default grid
    std::vector<double> learning_rates;    // empty: the experiment's default
    std::vector<OptimizerKind> optimizers; // exp4; empty: adam and sgd
    std::optional<std::size_t> steps;      // exp1/exp4 steps, exp2/exp3 epochs

    // exp1
    std::vector<std::string> formulas; // truth-table labels ("0110") or formula text
    std::vector<std::vector<double>> inits;
    FspHead head = FspHead::squared_amplitude;

    // exp2, exp3
    std::filesystem::path data_dir = "data";
    std::string dataset = "mnist"; // mnist | fashion
    bool synthetic_fallback = true;
    std::filesystem::path teacher; // checkpoint written by exp2, read by exp3
    std::optional<std::size_t> train_size, val_size, test_size, batch_size;

    // exp4
    std::string region = "quarter_disc"; // or inequalities separated by ';'
    Box region_box{0.0, 1.0, 0.0, 1.0};
    std::size_t num_seeds = 10;
    std::vector<double> sigmas; // empty: 0.35 (desk) or 0.2, 0.35, 0.5 (paper)
    std::optional<std::size_t> train_grid; // per-axis resolution
    std::size_t eval_grid = 256;

    std::size_t threads = 1;
    std::filesystem::path out;
    ReportFormat format = ReportFormat::csv;

    /// Throws on an unknown experiment, a negative lambda, or a non-positive rate.
    void validate() const;
};

/// Applies one `key = value` setting. Keys mirror the CLI flags
/// (loss, lambda, lr, steps, seed, profile, data-dir, out, format, ...);
/// list values are comma separated.
void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value);

/// Reads a flat `key = value` file; blank lines and '#' comments are skipped.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

struct ResultRow {
    std::string experiment;
    std::string cell;
    std::string metric;
    double value = 0.0;
    double uncertainty = 0.0;
    std::uint64_t seed = 0;

    friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

inline constexpr int kReportSchemaVersion = 1;

struct ResultTable {
    std::string experiment;
    std::vector<ResultRow> rows;
    std::map<std::string, std::string> metadata; // config echo and run notes
    std::vector<std::string> warnings;

    void add(std::string cell, std::string metric, double value, double uncertainty, std::uint64_t seed);
    /// Throws when no row matches.
    const ResultRow& at(std::string_view cell, std::string_view metric) const;
    const ResultRow* find(std::string_view cell, std::string_view metric) const;
};

/// "sofkit <version> (<git revision>)"
std::string version_string();

std::string format_csv(const ResultTable& table);
/// `timestamp` is the only field that varies between identical runs.
std::string format_json(const ResultTable& table, const std::string& timestamp);
ResultTable parse_json_report(const std::string& text);
void report(const ResultTable& table, const std::filesystem::path& path, ReportFormat format);

ResultTable run_exp1(const ExperimentConfig& cfg);
ResultTable run_exp2(const ExperimentConfig& cfg);
ResultTable run_exp3(const ExperimentConfig& cfg);
ResultTable run_exp4(const ExperimentConfig& cfg);
ResultTable run_experiment(const ExperimentConfig& cfg);

// Building blocks shared by the drivers and exposed for tests.

/// The five initial distributions over {00, 01, 10, 11} used by exp1.
std::vector<std::vector<double>> canonical_inits();

struct FspRun {
    FSPModel model;
    TrainingTrace trace;
};

/// Trains an FSP from `init` towards the constraint with full-batch updates.
FspRun train_fsp(const ModelSet& m, const CategoricalDistribution& init, LossKind kind,
                 const OptimizerConfig& opt, FspHead head = FspHead::squared_amplitude);

/// What a classifier is trained against. `mse_weight` = 0 leaves labels unused.
struct ClassifierObjective {
    double mse_weight = 1.0;
    double lambda = 0.0;
    LossKind kind = LossKind::fisher;
    /// Divergence to the teacher's outputs (classes x N) instead of the one-hot constraint.
    const Tensor* teacher_outputs = nullptr;
};

struct ClassifierRun {
    MLPModel model;
    TrainingTrace trace;
};

/// Minibatch training; `opt.steps` counts epochs.
ClassifierRun train_classifier(MLPModel init, const ImageDataset& train, const ClassifierObjective& objective,
                               const OptimizerConfig& opt);
double classifier_accuracy(const MLPModel& model, const ImageDataset& ds);
/// Sigmoid outputs for the whole dataset (classes x N).
Tensor classifier_outputs(const MLPModel& model, const ImageDataset& ds);

struct WilsonInterval {
    double low = 0.0, high = 0.0;
};
/// 95% Wilson score interval for a proportion.
WilsonInterval wilson_interval(double proportion, std::size_t n, double z = 1.959963984540054);

struct ContinuousRun {
    std::array<double, 2> mean{};
    double tv = 0.0;
    bool diverged = false;
};

/// Display name of an exp4 objective: W for wmc (trained as -W), logW for
/// sloss (-log W) and KL for kl. Other kinds throw.
std::string continuous_loss_name(LossKind kind);

/// Trains the mean of N(mu, sigma^2 I) from `mu0` and evaluates TV on `eval_grid`.
ContinuousRun train_normal_mean(const Region& region, LossKind loss, std::array<double, 2> mu0, double sigma,
                                const QuadratureGrid& train_grid, const QuadratureGrid& eval_grid,
                                const OptimizerConfig& opt);

/// Runs `n` independent jobs on up to `threads` workers; results keep job order.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& job);

} // namespace sof
