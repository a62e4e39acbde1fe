#include "sof/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "sof/error.hpp"
#include "sof/prop_logic.hpp"
#include "sof/rng.hpp"

#ifndef SOFKIT_VERSION
#define SOFKIT_VERSION "0.0.0"
#endif
#ifndef SOFKIT_GIT_REVISION
#define SOFKIT_GIT_REVISION "unknown"
#endif

namespace sof {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(sep, start);
        auto piece = trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (!piece.empty()) out.push_back(std::move(piece));
        if (pos == std::string_view::npos) return out;
        start = pos + 1;
    }
}

double parse_double(std::string_view key, const std::string& text) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || text.empty())
        throw Error("setting '" + std::string(key) + "': '" + text + "' is not a number");
    return v;
}

std::uint64_t parse_uint(std::string_view key, const std::string& text) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        if (!text.empty() && text[0] != '-') v = std::stoull(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || text.empty())
        throw Error("setting '" + std::string(key) + "': '" + text + "' is not a nonnegative integer");
    return v;
}

std::vector<double> parse_doubles(std::string_view key, std::string_view text) {
    std::vector<double> out;
    for (const auto& piece : split(text, ',')) out.push_back(parse_double(key, piece));
    if (out.empty()) throw Error("setting '" + std::string(key) + "': empty list");
    return out;
}

bool parse_bool(std::string_view key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw Error("setting '" + std::string(key) + "': '" + text + "' is not a boolean");
}

LossKind parse_any_loss(std::string_view name) {
    if (name == "w" || name == "W") return LossKind::wmc;
    if (name == "logw" || name == "logW") return LossKind::sloss;
    return parse_loss_kind(name);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string fmt_list(const std::vector<double>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
    return s + "]";
}

struct MeanStd {
    double mean = 0.0, std = 0.0;
};

// Sample standard deviation (n - 1 in the denominator).
MeanStd mean_std(const std::vector<double>& v) {
    if (v.empty()) return {};
    const double n = static_cast<double>(v.size());
    const double mean = pairwise_sum(v) / n;
    if (v.size() == 1) return {mean, 0.0};
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - mean) * (v[i] - mean);
    return {mean, std::sqrt(pairwise_sum(sq) / (n - 1.0))};
}

void echo_config(ResultTable& t, const ExperimentConfig& cfg) {
    t.metadata["experiment"] = cfg.experiment;
    t.metadata["profile"] = to_string(cfg.profile);
    t.metadata["seed"] = std::to_string(cfg.seed);
    t.metadata["version"] = version_string();
}

const ModelSet& one_hot_models() {
    static const ModelSet m = enumerate_models(one_hot_formula(kNumClasses));
    return m;
}

// ---------------------------------------------------------------------------
// Datasets for exp2 and exp3.

struct Splits {
    ImageDataset train, val, test;
    std::string source;
};

struct SplitSizes {
    std::size_t train, val, test;
};

SplitSizes split_sizes(const ExperimentConfig& cfg) {
    SplitSizes s = cfg.profile == Profile::desk ? SplitSizes{10000, 2000, 10000} : SplitSizes{50000, 10000, 10000};
    if (cfg.train_size) s.train = *cfg.train_size;
    if (cfg.val_size) s.val = *cfg.val_size;
    if (cfg.test_size) s.test = *cfg.test_size;
    if (s.train == 0 || s.val == 0 || s.test == 0) throw Error("split sizes must be positive");
    return s;
}

Splits load_splits(const ExperimentConfig& cfg, ResultTable& table) {
    SplitSizes sizes = split_sizes(cfg);
    std::optional<ImageDataset> train, test;
    for (const auto& dir : {cfg.data_dir / cfg.dataset, cfg.data_dir}) {
        train = load_mnist_split(dir, cfg.dataset, "train");
        test = load_mnist_split(dir, cfg.dataset, "test");
        if (train && test) break;
    }
    Splits s;
    if (train && test) {
        if (train->size() < sizes.train + sizes.val)
            throw Error("dataset '" + cfg.dataset + "' has " + std::to_string(train->size()) +
                        " training images, fewer than train + validation sizes");
        s.train = take(*train, sizes.train, 0);
        s.val = take(*train, sizes.val, sizes.train);
        s.val.split = "validation";
        s.test = take(*test, sizes.test, 0);
        s.source = cfg.dataset;
    } else {
        if (!cfg.synthetic_fallback)
            throw Error("dataset '" + cfg.dataset + "' not found under " + cfg.data_dir.string() +
                        " and the synthetic fallback is disabled");
        const std::string warning = "dataset '" + cfg.dataset + "' not found under " + cfg.data_dir.string() +
                                    "; using the synthetic one-hot dataset";
        table.warnings.push_back(warning);
        if (!cfg.test_size) sizes.test = std::min<std::size_t>(sizes.test, sizes.val);
        s.train = synthetic_onehot_dataset(sizes.train, kNumClasses, cfg.seed, 0);
        s.val = synthetic_onehot_dataset(sizes.val, kNumClasses, cfg.seed, 1);
        s.test = synthetic_onehot_dataset(sizes.test, kNumClasses, cfg.seed, 2);
        s.source = "synthetic";
    }
    table.metadata["dataset"] = s.source;
    table.metadata["preprocessing"] = "pixels divided by 255";
    table.metadata["split_sizes"] = std::to_string(s.train.size()) + "/" + std::to_string(s.val.size()) + "/" +
                                    std::to_string(s.test.size());
    return s;
}

std::vector<std::size_t> teacher_layers(Profile p) {
    return p == Profile::desk ? std::vector<std::size_t>{784, 128, 128, 10} : std::vector<std::size_t>{784, 512, 512, 10};
}

std::vector<std::size_t> student_layers(Profile p) {
    return p == Profile::desk ? std::vector<std::size_t>{784, 64, 64, 10} : std::vector<std::size_t>{784, 256, 256, 10};
}

OptimizerConfig classifier_optimizer(const ExperimentConfig& cfg) {
    OptimizerConfig opt;
    opt.kind = cfg.optimizers.empty() ? OptimizerKind::adam : cfg.optimizers.front();
    opt.learning_rate = cfg.learning_rates.empty() ? 1e-3 : cfg.learning_rates.front();
    opt.steps = cfg.steps ? *cfg.steps : (cfg.profile == Profile::desk ? 3 : 10);
    opt.batch_size = cfg.batch_size ? *cfg.batch_size : 128;
    opt.seed = cfg.seed;
    return opt;
}

std::filesystem::path teacher_path(const ExperimentConfig& cfg) {
    if (!cfg.teacher.empty()) return cfg.teacher;
    if (!cfg.out.empty()) return cfg.out.parent_path() / "teacher.ckpt";
    return "teacher.ckpt";
}

void add_accuracy(ResultTable& t, const std::string& cell, const std::string& metric, double acc, std::size_t n,
                  std::uint64_t seed) {
    const auto ci = wilson_interval(acc, n);
    t.add(cell, metric, acc, 0.5 * (ci.high - ci.low), seed);
}

ad::Var teacher_divergence(LossKind kind, ad::Var teacher, ad::Var student) {
    switch (kind) {
    case LossKind::kl: return ad::factorized_kl(teacher, student);
    case LossKind::fisher: return ad::factorized_fisher(teacher, student);
    case LossKind::l2: return ad::factorized_l2(teacher, student);
    default: throw Error("teacher objective supports fisher, kl and l2, not " + to_string(kind));
    }
}

} // namespace

// ---------------------------------------------------------------------------

Profile parse_profile(std::string_view name) {
    if (name == "desk") return Profile::desk;
    if (name == "paper") return Profile::paper;
    throw Error("unknown profile '" + std::string(name) + "' (expected desk or paper)");
}

std::string to_string(Profile p) { return p == Profile::desk ? "desk" : "paper"; }

ReportFormat parse_report_format(std::string_view name) {
    if (name == "csv") return ReportFormat::csv;
    if (name == "json") return ReportFormat::json;
    throw Error("unknown report format '" + std::string(name) + "' (expected csv or json)");
}

void ExperimentConfig::validate() const {
    if (experiment != "exp1" && experiment != "exp2" && experiment != "exp3" && experiment != "exp4")
        throw Error("unknown experiment '" + experiment + "'");
    for (double l : lambdas)
        if (!(l >= 0.0) || !std::isfinite(l)) throw Error("lambda must be finite and nonnegative");
    for (double lr : learning_rates)
        if (!(lr > 0.0) || !std::isfinite(lr)) throw Error("learning rate must be finite and positive");
    if (threads == 0) throw Error("threads must be at least 1");
    if (num_seeds == 0) throw Error("seeds must be at least 1");
    for (double sg : sigmas)
        if (!(sg > 0.0) || !std::isfinite(sg)) throw Error("sigma must be finite and positive");
    if (eval_grid < 2 || (train_grid && *train_grid < 2)) throw Error("grid resolution must be at least 2");
    if (batch_size && *batch_size == 0) throw Error("batch size must be at least 1");
    if (experiment == "exp4")
        for (LossKind k : losses) continuous_loss_name(k);
}

void apply_setting(ExperimentConfig& cfg, std::string_view raw_key, std::string_view raw_value) {
    std::string key = trim(raw_key);
    std::replace(key.begin(), key.end(), '_', '-');
    const std::string value = trim(raw_value);
    if (key == "experiment") cfg.experiment = value;
    else if (key == "profile") cfg.profile = parse_profile(value);
    else if (key == "seed") cfg.seed = parse_uint(key, value);
    else if (key == "loss" || key == "losses") {
        cfg.losses.clear();
        for (const auto& s : split(value, ',')) cfg.losses.push_back(parse_any_loss(s));
    } else if (key == "lambda" || key == "lambdas") cfg.lambdas = parse_doubles(key, value);
    else if (key == "lr" || key == "learning-rate") cfg.learning_rates = parse_doubles(key, value);
    else if (key == "optimizer" || key == "optimizers") {
        cfg.optimizers.clear();
        for (const auto& s : split(value, ',')) cfg.optimizers.push_back(parse_optimizer_kind(s));
    } else if (key == "steps" || key == "epochs") cfg.steps = parse_uint(key, value);
    else if (key == "formula" || key == "formulas") cfg.formulas = split(value, ';');
    else if (key == "init" || key == "inits") {
        cfg.inits.clear();
        for (const auto& s : split(value, ';')) cfg.inits.push_back(parse_doubles(key, s));
    } else if (key == "head") cfg.head = parse_fsp_head(value);
    else if (key == "data-dir") cfg.data_dir = value;
    else if (key == "dataset") {
        if (value != "mnist" && value != "fashion") throw Error("unknown dataset '" + value + "'");
        cfg.dataset = value;
    } else if (key == "synthetic-fallback") cfg.synthetic_fallback = parse_bool(key, value);
    else if (key == "teacher") cfg.teacher = value;
    else if (key == "train-size") cfg.train_size = parse_uint(key, value);
    else if (key == "val-size") cfg.val_size = parse_uint(key, value);
    else if (key == "test-size") cfg.test_size = parse_uint(key, value);
    else if (key == "batch-size") cfg.batch_size = parse_uint(key, value);
    else if (key == "region") cfg.region = value;
    else if (key == "box") {
        const auto b = parse_doubles(key, value);
        if (b.size() != 4) throw Error("setting 'box': expected x_min,x_max,y_min,y_max");
        cfg.region_box = {b[0], b[1], b[2], b[3]};
    } else if (key == "seeds") cfg.num_seeds = parse_uint(key, value);
    else if (key == "sigma" || key == "sigmas") cfg.sigmas = parse_doubles(key, value);
    else if (key == "train-grid") cfg.train_grid = parse_uint(key, value);
    else if (key == "eval-grid") cfg.eval_grid = parse_uint(key, value);
    else if (key == "threads") cfg.threads = parse_uint(key, value);
    else if (key == "out") cfg.out = value;
    else if (key == "format") cfg.format = parse_report_format(value);
    else throw Error("unknown setting '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file " + path.string());
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return out;
}

// ---------------------------------------------------------------------------

void ResultTable::add(std::string cell, std::string metric, double value, double uncertainty, std::uint64_t seed) {
    rows.push_back({experiment, std::move(cell), std::move(metric), value, uncertainty, seed});
}

const ResultRow* ResultTable::find(std::string_view cell, std::string_view metric) const {
    for (const auto& r : rows)
        if (r.cell == cell && r.metric == metric) return &r;
    return nullptr;
}

const ResultRow& ResultTable::at(std::string_view cell, std::string_view metric) const {
    if (const auto* r = find(cell, metric)) return *r;
    throw Error("result table has no row for cell '" + std::string(cell) + "', metric '" + std::string(metric) + "'");
}

std::string version_string() { return std::string("sofkit ") + SOFKIT_VERSION + " (" + SOFKIT_GIT_REVISION + ")"; }

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string csv_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

std::string format_csv(const ResultTable& table) {
    std::string out = "experiment,cell,metric,value,uncertainty,seed,version\n";
    const std::string version = csv_field(version_string());
    for (const auto& r : table.rows) {
        out += csv_field(r.experiment) + "," + csv_field(r.cell) + "," + csv_field(r.metric) + "," +
               csv_number(r.value) + "," + csv_number(r.uncertainty) + "," + std::to_string(r.seed) + "," + version +
               "\n";
    }
    return out;
}

std::string format_json(const ResultTable& table, const std::string& timestamp) {
    nlohmann::ordered_json j;
    j["schema_version"] = kReportSchemaVersion;
    j["version"] = version_string();
    j["timestamp"] = timestamp;
    j["experiment"] = table.experiment;
    j["metadata"] = table.metadata;
    j["warnings"] = table.warnings;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : table.rows) {
        nlohmann::ordered_json row;
        row["experiment"] = r.experiment;
        row["cell"] = r.cell;
        row["metric"] = r.metric;
        // JSON has no infinities or NaN; those become strings.
        auto number = [](double v) -> nlohmann::ordered_json {
            if (std::isfinite(v)) return v;
            return csv_number(v);
        };
        row["value"] = number(r.value);
        row["uncertainty"] = number(r.uncertainty);
        row["seed"] = r.seed;
        rows.push_back(std::move(row));
    }
    j["rows"] = std::move(rows);
    return j.dump(2) + "\n";
}

ResultTable parse_json_report(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    if (j.at("schema_version").get<int>() != kReportSchemaVersion) throw Error("unsupported report schema version");
    ResultTable t;
    t.experiment = j.at("experiment").get<std::string>();
    t.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    t.warnings = j.at("warnings").get<std::vector<std::string>>();
    auto number = [](const nlohmann::json& v) {
        return v.is_string() ? std::strtod(v.get<std::string>().c_str(), nullptr) : v.get<double>();
    };
    for (const auto& r : j.at("rows"))
        t.rows.push_back({r.at("experiment").get<std::string>(), r.at("cell").get<std::string>(),
                          r.at("metric").get<std::string>(), number(r.at("value")), number(r.at("uncertainty")),
                          r.at("seed").get<std::uint64_t>()});
    return t;
}

void report(const ResultTable& table, const std::filesystem::path& path, ReportFormat format) {
    std::string text;
    if (format == ReportFormat::csv) {
        text = format_csv(table);
    } else {
        const auto now = std::chrono::system_clock::now();
        const std::time_t tt = std::chrono::system_clock::to_time_t(now);
        char buf[32];
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
        text = format_json(table, buf);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write report to " + path.string());
    out << text;
    out.close();
    if (!out) throw Error("failed while writing report to " + path.string());
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& job) {
    const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    job(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

WilsonInterval wilson_interval(double p, std::size_t n, double z) {
    if (n == 0) return {0.0, 1.0};
    const double dn = static_cast<double>(n);
    const double z2 = z * z;
    const double denom = 1.0 + z2 / dn;
    const double centre = (p + z2 / (2.0 * dn)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / dn + z2 / (4.0 * dn * dn)) / denom;
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

// ---------------------------------------------------------------------------
// exp1

std::vector<std::vector<double>> canonical_inits() {
    return {{1.0, 0.0, 0.0, 0.0},
            {0.0, 1.0, 0.0, 0.0},
            {0.5, 0.0, 0.0, 0.5},
            {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0},
            {0.25, 0.25, 0.25, 0.25}};
}

FspRun train_fsp(const ModelSet& m, const CategoricalDistribution& init, LossKind kind, const OptimizerConfig& opt,
                 FspHead head) {
    if (init.size() != m.space_size()) throw ShapeError("train_fsp: init does not match the assignment space");
    FspRun run;
    run.model = init_from_target(init, kFspInitFloor, head);
    std::vector<Tensor> params{Tensor::column(run.model.coefficients)};
    const std::size_t n = m.num_vars();
    LossClosure loss = [&](ad::Graph&, std::span<const ad::Var> p, std::span<const std::size_t>) {
        return ad::sum(ad::constraint_loss(kind, m, ad::fsp_distribution(p[0], n, head)));
    };
    run.trace = train(params, loss, nullptr, opt);
    run.model.coefficients = params[0].data;
    return run;
}

ResultTable run_exp1(const ExperimentConfig& cfg) {
    cfg.validate();
    ResultTable t;
    t.experiment = "exp1";
    echo_config(t, cfg);

    std::vector<LabeledModelSet> formulas;
    if (cfg.formulas.empty()) {
        formulas = enumerate_two_var_formulas();
    } else {
        const auto all = enumerate_two_var_formulas();
        for (const auto& spec : cfg.formulas) {
            const bool is_label = spec.size() == 4 && spec.find_first_not_of("01") == std::string::npos;
            if (is_label) {
                auto it = std::find_if(all.begin(), all.end(), [&](const auto& l) { return l.label == spec; });
                if (it == all.end()) throw UnsatisfiableError("formula '" + spec + "' has no models");
                formulas.push_back(*it);
            } else {
                formulas.push_back({spec, enumerate_models(parse_formula(spec))});
            }
        }
    }
    const std::vector<LossKind> losses =
        cfg.losses.empty() ? std::vector<LossKind>(std::begin(kAllLossKinds), std::end(kAllLossKinds)) : cfg.losses;

    OptimizerConfig opt;
    opt.kind = cfg.optimizers.empty() ? OptimizerKind::sgd : cfg.optimizers.front();
    opt.learning_rate = cfg.learning_rates.empty() ? 0.01 : cfg.learning_rates.front();
    opt.steps = cfg.steps ? *cfg.steps : 2000;
    opt.seed = cfg.seed;
    t.metadata["optimizer"] = to_string(opt.kind) + " lr=" + fmt(opt.learning_rate) + " steps=" + std::to_string(opt.steps);
    t.metadata["head"] = to_string(cfg.head);

    struct Cell {
        const LabeledModelSet* formula;
        std::vector<double> init;
        LossKind loss;
    };
    std::vector<Cell> cells;
    for (const auto& f : formulas) {
        if (f.models.empty()) throw UnsatisfiableError("formula '" + f.label + "' has no models");
        std::vector<std::vector<double>> inits = cfg.inits;
        if (inits.empty()) {
            if (f.models.num_vars() == 2) inits = canonical_inits();
            else inits = {CategoricalDistribution::uniform(f.models.space_size()).probs()};
        }
        for (const auto& init : inits) {
            CategoricalDistribution check(init); // rejects vectors that are not distributions
            if (check.size() != f.models.space_size())
                throw ShapeError("init " + fmt_list(init) + " does not match formula '" + f.label + "'");
            for (LossKind k : losses) cells.push_back({&f, init, k});
        }
    }

    std::vector<std::vector<ResultRow>> rows(cells.size());
    parallel_for(cells.size(), cfg.threads, [&](std::size_t i) {
        const Cell& c = cells[i];
        const auto& m = c.formula->models;
        const auto rho = constraint_distribution(m);
        const CategoricalDistribution init(c.init);
        const std::string name = "formula=" + c.formula->label + " init=" + fmt_list(c.init) + " loss=" + to_string(c.loss);
        const FSPModel start = init_from_target(init, kFspInitFloor, cfg.head);
        auto emit = [&](std::string metric, double v) { rows[i].push_back({"exp1", name, std::move(metric), v, 0.0, cfg.seed}); };
        emit("kl_initial", kl_divergence(rho, fsp_distribution(start)));
        try {
            const FspRun run = train_fsp(m, init, c.loss, opt, cfg.head);
            const auto f = fsp_distribution(run.model);
            emit("kl_final", kl_divergence(rho, f));
            emit("fisher_final", fisher_rao(rho, f));
            emit("l2_final", l2_distance(rho, f));
            emit("loss_final", run.trace.losses.back());
            emit("diverged", 0.0);
        } catch (const TrainingError&) {
            emit("diverged", 1.0);
        }
    });
    for (auto& r : rows) t.rows.insert(t.rows.end(), r.begin(), r.end());
    return t;
}

// ---------------------------------------------------------------------------
// exp2 and exp3

Tensor classifier_outputs(const MLPModel& model, const ImageDataset& ds) {
    Tensor out(model.output_size(), ds.size());
    constexpr std::size_t kChunk = 1000;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += kChunk) {
        const std::size_t end = std::min(ds.size(), start + kChunk);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Tensor p = mlp_predict(model, gather_images(ds, idx));
        for (std::size_t r = 0; r < p.rows; ++r)
            for (std::size_t c = 0; c < p.cols; ++c) out(r, start + c) = p(r, c);
    }
    return out;
}

double classifier_accuracy(const MLPModel& model, const ImageDataset& ds) {
    if (ds.size() == 0) throw Error("classifier_accuracy: empty dataset");
    return accuracy(classifier_outputs(model, ds), ds.labels);
}

ClassifierRun train_classifier(MLPModel init, const ImageDataset& train_set, const ClassifierObjective& obj,
                               const OptimizerConfig& opt) {
    if (!(obj.mse_weight >= 0.0) || !(obj.lambda >= 0.0)) throw Error("train_classifier: weights must be nonnegative");
    if (obj.mse_weight == 0.0 && obj.lambda == 0.0) throw Error("train_classifier: the objective is empty");
    if (obj.teacher_outputs && (obj.teacher_outputs->cols != train_set.size() ||
                                obj.teacher_outputs->rows != init.output_size()))
        throw ShapeError("train_classifier: teacher outputs do not match the training set");
    if (init.input_size() != kImagePixels) throw ShapeError("train_classifier: model input must be 784");
    const ModelSet& models = one_hot_models();
    if (!obj.teacher_outputs && obj.lambda > 0.0 && init.output_size() != kNumClasses)
        throw ShapeError("train_classifier: the one-hot constraint needs 10 outputs");

    ClassifierRun run;
    std::vector<Tensor> params = init.parameters();
    LossClosure loss = [&](ad::Graph& g, std::span<const ad::Var> p, std::span<const std::size_t> batch) {
        const ad::Var x = g.constant(gather_images(train_set, batch));
        const ad::Var out = ad::mlp_forward(p, x);
        std::optional<ad::Var> total;
        if (obj.mse_weight > 0.0) total = ad::scale(ad::mse(out, g.constant(one_hot_targets(train_set, batch))), obj.mse_weight);
        if (obj.lambda > 0.0) {
            ad::Var sof;
            if (obj.teacher_outputs) {
                Tensor t(obj.teacher_outputs->rows, batch.size());
                for (std::size_t r = 0; r < t.rows; ++r)
                    for (std::size_t c = 0; c < batch.size(); ++c) t(r, c) = (*obj.teacher_outputs)(r, batch[c]);
                sof = ad::mean(teacher_divergence(obj.kind, g.constant(std::move(t)), out));
            } else {
                sof = ad::mean(ad::constraint_loss_from_log_weights(obj.kind, models.size(),
                                                                    ad::bernoulli_log_weights(out, models),
                                                                    ad::bernoulli_sum_sq(out)));
            }
            total = total ? ad::add(*total, ad::scale(sof, obj.lambda)) : ad::scale(sof, obj.lambda);
        }
        return *total;
    };
    const std::size_t n = train_set.size();
    BatchPlan plan = [&](std::uint64_t epoch) { return batch_iter(n, opt.batch_size, opt.seed, epoch); };
    run.trace = train(params, loss, plan, opt);
    init.set_parameters(std::move(params));
    run.model = std::move(init);
    return run;
}

ResultTable run_exp2(const ExperimentConfig& cfg) {
    cfg.validate();
    ResultTable t;
    t.experiment = "exp2";
    echo_config(t, cfg);
    const Splits data = load_splits(cfg, t);
    const OptimizerConfig opt = classifier_optimizer(cfg);
    const auto layers = teacher_layers(cfg.profile);
    const MLPModel init = MLPModel::initialize(layers, cfg.seed);
    t.metadata["optimizer"] = to_string(opt.kind) + " lr=" + fmt(opt.learning_rate) + " epochs=" +
                              std::to_string(opt.steps) + " batch=" + std::to_string(opt.batch_size);
    t.metadata["model_parameters"] = std::to_string(init.parameter_count());

    const std::vector<LossKind> losses =
        cfg.losses.empty() ? std::vector<LossKind>(std::begin(kAllLossKinds), std::end(kAllLossKinds)) : cfg.losses;
    const std::vector<double> lambdas = cfg.lambdas.empty() ? std::vector<double>{1.0, 0.1, 0.01, 0.001, 0.0001}
                                                            : cfg.lambdas;
    struct Cell {
        std::string name;
        LossKind kind;
        double lambda;
    };
    std::vector<Cell> cells{{"noreg", LossKind::fisher, 0.0}};
    for (LossKind k : losses)
        for (double l : lambdas)
            if (l > 0.0) cells.push_back({"loss=" + to_string(k) + " lambda=" + fmt(l), k, l});

    struct Outcome {
        double val = 0.0, test = 0.0, final_loss = 0.0;
        MLPModel model;
    };
    std::vector<Outcome> outcomes(cells.size());
    parallel_for(cells.size(), cfg.threads, [&](std::size_t i) {
        ClassifierObjective obj;
        obj.kind = cells[i].kind;
        obj.lambda = cells[i].lambda;
        ClassifierRun run = train_classifier(init, data.train, obj, opt);
        outcomes[i].val = classifier_accuracy(run.model, data.val);
        outcomes[i].test = classifier_accuracy(run.model, data.test);
        outcomes[i].final_loss = run.trace.losses.back();
        outcomes[i].model = std::move(run.model);
    });

    std::size_t best_overall = 0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        add_accuracy(t, cells[i].name, "val_accuracy", outcomes[i].val, data.val.size(), cfg.seed);
        add_accuracy(t, cells[i].name, "test_accuracy", outcomes[i].test, data.test.size(), cfg.seed);
        t.add(cells[i].name, "final_train_loss", outcomes[i].final_loss, 0.0, cfg.seed);
        if (outcomes[i].val > outcomes[best_overall].val) best_overall = i;
    }
    for (LossKind k : losses) {
        std::optional<std::size_t> best;
        for (std::size_t i = 1; i < cells.size(); ++i)
            if (cells[i].kind == k && (!best || outcomes[i].val > outcomes[*best].val)) best = i;
        if (!best) continue;
        const std::string name = "loss=" + to_string(k) + " best";
        t.add(name, "best_lambda", cells[*best].lambda, 0.0, cfg.seed);
        add_accuracy(t, name, "test_accuracy", outcomes[*best].test, data.test.size(), cfg.seed);
    }

    const auto path = teacher_path(cfg);
    save_checkpoint(outcomes[best_overall].model, path);
    t.metadata["teacher_checkpoint"] = path.string();
    t.metadata["teacher_cell"] = cells[best_overall].name;
    t.add("teacher", "parameter_count", static_cast<double>(init.parameter_count()), 0.0, cfg.seed);
    return t;
}

ResultTable run_exp3(const ExperimentConfig& cfg) {
    cfg.validate();
    ResultTable t;
    t.experiment = "exp3";
    echo_config(t, cfg);
    const auto path = teacher_path(cfg);
    if (!std::filesystem::exists(path))
        throw Error("teacher checkpoint " + path.string() + " not found; run exp2 first or pass --teacher");
    const MLPModel teacher = load_checkpoint(path);
    if (teacher.input_size() != kImagePixels || teacher.output_size() != kNumClasses)
        throw ShapeError("teacher checkpoint must map 784 inputs to 10 outputs");
    t.metadata["teacher_checkpoint"] = path.string();

    const Splits data = load_splits(cfg, t);
    const OptimizerConfig opt = classifier_optimizer(cfg);
    const MLPModel student_init = MLPModel::initialize(student_layers(cfg.profile), splitmix64(cfg.seed + 1));
    const Tensor teacher_train = classifier_outputs(teacher, data.train);

    const double teacher_acc = classifier_accuracy(teacher, data.test);
    add_accuracy(t, "teacher", "test_accuracy", teacher_acc, data.test.size(), cfg.seed);
    t.add("teacher", "parameter_count", static_cast<double>(teacher.parameter_count()), 0.0, cfg.seed);
    t.add("student", "parameter_count", static_cast<double>(student_init.parameter_count()), 0.0, cfg.seed);
    t.add("student", "parameter_ratio",
          static_cast<double>(student_init.parameter_count()) / static_cast<double>(teacher.parameter_count()), 0.0,
          cfg.seed);

    const std::vector<LossKind> losses =
        cfg.losses.empty() ? std::vector<LossKind>{LossKind::kl, LossKind::fisher, LossKind::l2} : cfg.losses;
    const std::vector<double> lambdas =
        cfg.lambdas.empty()
            ? (cfg.profile == Profile::desk ? std::vector<double>{0.1} : std::vector<double>{1.0, 0.1, 0.01, 0.001, 0.0001})
            : cfg.lambdas;
    struct Cell {
        std::string name;
        ClassifierObjective obj;
    };
    std::vector<Cell> cells;
    for (LossKind k : losses)
        if (k != LossKind::kl && k != LossKind::fisher && k != LossKind::l2)
            throw Error("teacher objective supports fisher, kl and l2, not " + to_string(k));
    for (LossKind k : losses) cells.push_back({"mode=kd loss=" + to_string(k), {0.0, 1.0, k, &teacher_train}});
    for (LossKind k : losses)
        for (double l : lambdas)
            if (l > 0.0) cells.push_back({"mode=reg loss=" + to_string(k) + " lambda=" + fmt(l), {1.0, l, k, &teacher_train}});

    std::vector<double> acc(cells.size());
    parallel_for(cells.size(), cfg.threads, [&](std::size_t i) {
        const ClassifierRun run = train_classifier(student_init, data.train, cells[i].obj, opt);
        acc[i] = classifier_accuracy(run.model, data.test);
    });
    for (std::size_t i = 0; i < cells.size(); ++i) {
        add_accuracy(t, cells[i].name, "test_accuracy", acc[i], data.test.size(), cfg.seed);
        t.add(cells[i].name, "gap_to_teacher", teacher_acc - acc[i], 0.0, cfg.seed);
    }
    return t;
}

// ---------------------------------------------------------------------------
// exp4

std::string continuous_loss_name(LossKind kind) {
    switch (kind) {
    case LossKind::wmc: return "W";
    case LossKind::sloss: return "logW";
    case LossKind::kl: return "KL";
    default: throw Error("exp4 supports the w, logw and kl objectives, not " + to_string(kind));
    }
}

ContinuousRun train_normal_mean(const Region& region, LossKind kind, std::array<double, 2> mu0, double sigma,
                                const QuadratureGrid& train_grid, const QuadratureGrid& eval_grid,
                                const OptimizerConfig& opt) {
    continuous_loss_name(kind);
    std::vector<Tensor> params{Tensor::column({mu0[0], mu0[1]})};
    LossClosure loss = [&](ad::Graph&, std::span<const ad::Var> p, std::span<const std::size_t>) {
        const ad::Var log_f = ad::normal_log_density(p[0], sigma, train_grid);
        if (kind == LossKind::kl) return ad::kl_continuous(region, log_f, train_grid);
        const ad::Var w = ad::w_integral(ad::exp(log_f), train_grid);
        return kind == LossKind::wmc ? ad::neg(w) : ad::neg(ad::log(w));
    };
    ContinuousRun run;
    try {
        train(params, loss, nullptr, opt);
    } catch (const TrainingError&) {
        run.diverged = true;
    }
    run.mean = {params[0].data[0], params[0].data[1]};
    if (!std::isfinite(run.mean[0]) || !std::isfinite(run.mean[1])) run.diverged = true;
    // A run that left the finite range has moved all its mass off the region.
    run.tv = run.diverged ? 1.0 : tv_continuous(region, BivariateNormal{run.mean, sigma}, eval_grid);
    return run;
}

ResultTable run_exp4(const ExperimentConfig& cfg) {
    cfg.validate();
    ResultTable t;
    t.experiment = "exp4";
    echo_config(t, cfg);

    const Region region = cfg.region == "quarter_disc"
                              ? quarter_disc_region()
                              : region_from_constraints("custom", cfg.region_box, split(cfg.region, ';'), 1'000'000, cfg.seed);
    const std::size_t n_train = cfg.train_grid ? *cfg.train_grid : (cfg.profile == Profile::desk ? 64 : 256);
    const QuadratureGrid train_grid = region_quadrature(region, n_train, n_train);
    const QuadratureGrid eval_grid = region_quadrature(region, cfg.eval_grid, cfg.eval_grid);
    t.metadata["region"] = region.name;
    t.metadata["region_area"] = fmt(region.measure);
    const std::vector<double> sigmas = !cfg.sigmas.empty() ? cfg.sigmas
                                       : cfg.profile == Profile::desk ? std::vector<double>{kDefaultNormalSigma}
                                                                      : std::vector<double>{0.2, kDefaultNormalSigma, 0.5};
    t.metadata["sigma"] = fmt_list(sigmas);
    t.metadata["grids"] = "train " + std::to_string(n_train) + "x" + std::to_string(n_train) + ", eval " +
                          std::to_string(cfg.eval_grid) + "x" + std::to_string(cfg.eval_grid);
    t.metadata["init"] = "mu0 ~ N(0, I) per seed";

    const std::vector<LossKind> losses =
        cfg.losses.empty() ? std::vector<LossKind>{LossKind::wmc, LossKind::sloss, LossKind::kl} : cfg.losses;
    const std::vector<OptimizerKind> optimizers =
        cfg.optimizers.empty() ? std::vector<OptimizerKind>{OptimizerKind::adam, OptimizerKind::sgd} : cfg.optimizers;
    const std::vector<double> lrs =
        cfg.learning_rates.empty() ? std::vector<double>{1.0, 0.1, 0.01, 0.001, 0.0001} : cfg.learning_rates;
    const std::size_t steps = cfg.steps ? *cfg.steps : 2000;

    struct Job {
        double sigma;
        LossKind loss;
        OptimizerKind opt;
        double lr;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (double sg : sigmas)
        for (LossKind l : losses)
            for (OptimizerKind o : optimizers)
                for (double lr : lrs)
                    for (std::size_t s = 0; s < cfg.num_seeds; ++s) jobs.push_back({sg, l, o, lr, cfg.seed + s});
    std::vector<ContinuousRun> runs(jobs.size());
    parallel_for(jobs.size(), cfg.threads, [&](std::size_t i) {
        Rng rng(jobs[i].seed, 4);
        const std::array<double, 2> mu0{rng.normal(), rng.normal()};
        OptimizerConfig opt;
        opt.kind = jobs[i].opt;
        opt.learning_rate = jobs[i].lr;
        opt.steps = steps;
        opt.seed = jobs[i].seed;
        runs[i] = train_normal_mean(region, jobs[i].loss, mu0, jobs[i].sigma, train_grid, eval_grid, opt);
    });

    std::size_t j = 0;
    for (double sg : sigmas) {
        for (LossKind l : losses) {
            for (OptimizerKind o : optimizers) {
                const std::string prefix =
                    "sigma=" + fmt(sg) + " loss=" + continuous_loss_name(l) + " opt=" + to_string(o);
                std::optional<std::size_t> best;
                std::vector<MeanStd> tv_by_lr, mx_by_lr, my_by_lr;
                for (std::size_t k = 0; k < lrs.size(); ++k) {
                    std::vector<double> tv, mx, my;
                    double diverged = 0.0;
                    for (std::size_t s = 0; s < cfg.num_seeds; ++s, ++j) {
                        tv.push_back(runs[j].tv);
                        mx.push_back(runs[j].mean[0]);
                        my.push_back(runs[j].mean[1]);
                        diverged += runs[j].diverged ? 1.0 : 0.0;
                    }
                    tv_by_lr.push_back(mean_std(tv));
                    mx_by_lr.push_back(mean_std(mx));
                    my_by_lr.push_back(mean_std(my));
                    const std::string cell = prefix + " lr=" + fmt(lrs[k]);
                    t.add(cell, "tv", tv_by_lr[k].mean, tv_by_lr[k].std, cfg.seed);
                    t.add(cell, "mu_x", mx_by_lr[k].mean, mx_by_lr[k].std, cfg.seed);
                    t.add(cell, "mu_y", my_by_lr[k].mean, my_by_lr[k].std, cfg.seed);
                    t.add(cell, "diverged_runs", diverged, 0.0, cfg.seed);
                    if (!best || tv_by_lr[k].mean < tv_by_lr[*best].mean) best = k;
                }
                const std::string cell = prefix + " best";
                t.add(cell, "lr", lrs[*best], 0.0, cfg.seed);
                t.add(cell, "tv", tv_by_lr[*best].mean, tv_by_lr[*best].std, cfg.seed);
                t.add(cell, "mu_x", mx_by_lr[*best].mean, mx_by_lr[*best].std, cfg.seed);
                t.add(cell, "mu_y", my_by_lr[*best].mean, my_by_lr[*best].std, cfg.seed);
            }
        }
    }
    return t;
}

ResultTable run_experiment(const ExperimentConfig& cfg) {
    if (cfg.experiment == "exp1") return run_exp1(cfg);
    if (cfg.experiment == "exp2") return run_exp2(cfg);
    if (cfg.experiment == "exp3") return run_exp3(cfg);
    if (cfg.experiment == "exp4") return run_exp4(cfg);
    throw Error("unknown experiment '" + cfg.experiment + "'");
}

} // namespace sof
