#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "sof/error.hpp"
#include "sof/harness.hpp"

using namespace sof;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("sof_harness_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ExperimentConfig small_classifier_config(const fs::path& dir) {
    ExperimentConfig cfg;
    cfg.data_dir = dir / "no-data";
    cfg.train_size = 400;
    cfg.val_size = 100;
    cfg.test_size = 100;
    cfg.steps = 1;
    cfg.losses = {LossKind::fisher};
    cfg.lambdas = {0.1};
    cfg.teacher = dir / "teacher.ckpt";
    cfg.seed = 5;
    return cfg;
}

} // namespace

TEST_CASE("settings and config files") {
    ExperimentConfig cfg;
    apply_setting(cfg, "loss", "fisher,kl");
    apply_setting(cfg, "lambda", "0.1, 0.01");
    apply_setting(cfg, "lr", "0.5");
    apply_setting(cfg, "optimizer", "adam");
    apply_setting(cfg, "steps", "12");
    apply_setting(cfg, "seed", "99");
    apply_setting(cfg, "profile", "paper");
    apply_setting(cfg, "data_dir", "/tmp/x");
    apply_setting(cfg, "formula", "0110;x1 & x2");
    apply_setting(cfg, "init", "1,0,0,0;0.25,0.25,0.25,0.25");
    apply_setting(cfg, "sigma", "0.2,0.5");
    apply_setting(cfg, "format", "json");
    CHECK(cfg.losses == std::vector<LossKind>{LossKind::fisher, LossKind::kl});
    CHECK(cfg.lambdas == std::vector<double>{0.1, 0.01});
    CHECK(cfg.learning_rates == std::vector<double>{0.5});
    CHECK(cfg.optimizers == std::vector<OptimizerKind>{OptimizerKind::adam});
    CHECK(cfg.steps == 12u);
    CHECK(cfg.seed == 99u);
    CHECK(cfg.profile == Profile::paper);
    CHECK(cfg.data_dir == fs::path("/tmp/x"));
    CHECK(cfg.formulas == std::vector<std::string>{"0110", "x1 & x2"});
    REQUIRE(cfg.inits.size() == 2);
    CHECK(cfg.inits[0] == std::vector<double>{1, 0, 0, 0});
    CHECK(cfg.sigmas == std::vector<double>{0.2, 0.5});
    CHECK(cfg.format == ReportFormat::json);
    apply_setting(cfg, "loss", "w,logw");
    CHECK(cfg.losses == std::vector<LossKind>{LossKind::wmc, LossKind::sloss});

    CHECK_THROWS_AS(apply_setting(cfg, "loss", "hinge"), Error);
    CHECK_THROWS_AS(apply_setting(cfg, "steps", "-3"), Error);
    CHECK_THROWS_AS(apply_setting(cfg, "lr", "fast"), Error);
    CHECK_THROWS_AS(apply_setting(cfg, "colour", "blue"), Error);

    cfg.lambdas = {-1.0};
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg.lambdas = {0.1};
    cfg.experiment = "exp9";
    CHECK_THROWS_AS(cfg.validate(), Error);

    const auto dir = scratch_dir("config");
    {
        std::ofstream out(dir / "a.cfg");
        out << "# comment\n\nexperiment = exp4\nseeds = 3\n  sigma = 0.35  # trailing\n";
    }
    const auto settings = read_config_file(dir / "a.cfg");
    REQUIRE(settings.size() == 3);
    CHECK(settings[1] == std::pair<std::string, std::string>{"seeds", "3"});
    CHECK(settings[2].second == "0.35");
    {
        std::ofstream out(dir / "bad.cfg");
        out << "just words\n";
    }
    CHECK_THROWS_AS(read_config_file(dir / "bad.cfg"), Error);
    CHECK_THROWS_AS(read_config_file(dir / "missing.cfg"), Error);
    fs::remove_all(dir);
}

TEST_CASE("reports") {
    ResultTable empty;
    empty.experiment = "exp1";
    CHECK(format_csv(empty) == "experiment,cell,metric,value,uncertainty,seed,version\n");

    ResultTable t;
    t.experiment = "exp4";
    t.metadata["note"] = "a, \"quoted\" value";
    t.add("sigma=0.35 loss=KL opt=adam lr=0.01", "tv", 0.38035712345678901, 3.2e-6, 7);
    t.add("cell,with,commas", "mu_x", -0.0, 0.0, 8);
    t.add("x", "kl_final", std::numeric_limits<double>::infinity(), std::nan(""), 9);
    const std::string csv = format_csv(t);
    CHECK(csv.find("\"cell,with,commas\"") != std::string::npos);
    CHECK(csv.find("0.38035712345678901") != std::string::npos);

    const ResultTable back = parse_json_report(format_json(t, "2026-01-01T00:00:00Z"));
    CHECK(back.experiment == t.experiment);
    CHECK(back.metadata == t.metadata);
    REQUIRE(back.rows.size() == t.rows.size());
    CHECK(back.rows[0] == t.rows[0]);
    CHECK(back.rows[1] == t.rows[1]);
    CHECK(std::isinf(back.rows[2].value));
    CHECK(std::isnan(back.rows[2].uncertainty));
    CHECK(format_json(t, "a") != format_json(t, "b"));

    CHECK(t.at("x", "kl_final").seed == 9);
    CHECK(t.find("x", "nothing") == nullptr);
    CHECK_THROWS_AS(t.at("x", "nothing"), Error);

    const auto dir = scratch_dir("report");
    report(t, dir / "r.csv", ReportFormat::csv);
    std::ifstream in(dir / "r.csv");
    const std::string text((std::istreambuf_iterator<char>(in)), {});
    CHECK(text == csv);
    CHECK_THROWS_AS(report(t, dir / "missing" / "deeper" / "r.csv", ReportFormat::csv), Error);
    fs::remove_all(dir);
    CHECK(version_string().rfind("sofkit ", 0) == 0);
}

TEST_CASE("Wilson interval") {
    // Reference values from the closed form evaluated by hand.
    const auto w = wilson_interval(0.5, 100);
    CHECK(w.low == doctest::Approx(0.4038).epsilon(1e-3));
    CHECK(w.high == doctest::Approx(0.5962).epsilon(1e-3));
    const auto edge = wilson_interval(1.0, 10);
    CHECK(edge.high == doctest::Approx(1.0));
    CHECK(edge.low == doctest::Approx(0.7225).epsilon(1e-3));
    CHECK(wilson_interval(0.0, 10).low == doctest::Approx(0.0));
}

TEST_CASE("parallel_for runs every job once") {
    std::vector<int> hits(37, 0);
    parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += int(i); });
    for (std::size_t i = 0; i < hits.size(); ++i) CHECK(hits[i] == int(i));
    CHECK_THROWS(parallel_for(5, 2, [](std::size_t i) {
        if (i == 3) throw Error("boom");
    }));
}

TEST_CASE("lambda zero is plain MSE training") {
    const ImageDataset ds = synthetic_onehot_dataset(200, 10, 3);
    const MLPModel init = MLPModel::initialize({kImagePixels, 16, 10}, 3);
    OptimizerConfig opt;
    opt.kind = OptimizerKind::adam;
    opt.learning_rate = 1e-3;
    opt.steps = 2;
    opt.batch_size = 32;
    opt.seed = 3;

    ClassifierObjective obj;
    obj.kind = LossKind::sloss;
    obj.lambda = 0.0;
    const ClassifierRun reg = train_classifier(init, ds, obj, opt);

    // The same loop written out with nothing but the MSE term.
    std::vector<Tensor> params = init.parameters();
    const LossClosure mse = [&](ad::Graph& g, std::span<const ad::Var> p, std::span<const std::size_t> batch) {
        return ad::mse(ad::mlp_forward(p, g.constant(gather_images(ds, batch))),
                       g.constant(one_hot_targets(ds, batch)));
    };
    const TrainingTrace plain =
        train(params, mse, [&](std::uint64_t e) { return batch_iter(ds.size(), 32, 3, e); }, opt);
    CHECK(reg.trace.losses == plain.losses);
    CHECK(reg.model.parameters() == params);
}

TEST_CASE("teacher as its own student with zero steps keeps its accuracy") {
    const ImageDataset ds = synthetic_onehot_dataset(300, 10, 4);
    OptimizerConfig opt;
    opt.kind = OptimizerKind::adam;
    opt.learning_rate = 1e-3;
    opt.steps = 1;
    opt.batch_size = 32;
    const ClassifierRun teacher =
        train_classifier(MLPModel::initialize({kImagePixels, 16, 10}, 4), ds, ClassifierObjective{}, opt);
    const Tensor outputs = classifier_outputs(teacher.model, ds);

    opt.steps = 0;
    ClassifierObjective kd;
    kd.mse_weight = 0.0;
    kd.lambda = 1.0;
    kd.kind = LossKind::kl;
    kd.teacher_outputs = &outputs;
    const ClassifierRun student = train_classifier(teacher.model, ds, kd, opt);
    CHECK(classifier_accuracy(student.model, ds) == classifier_accuracy(teacher.model, ds));
    // KL of the teacher to itself.
    CHECK(std::abs(student.trace.losses.front()) < 1e-9);

    kd.kind = LossKind::wmc;
    CHECK_THROWS(train_classifier(teacher.model, ds, kd, opt));
}

TEST_CASE("exp1 on one formula") {
    ExperimentConfig cfg;
    cfg.formulas = {"0110"};
    cfg.inits = {{0, 1, 0, 0}, {0.25, 0.25, 0.25, 0.25}, {0, 0.5, 0.5, 0}};
    cfg.losses = {LossKind::fisher, LossKind::wmc};
    const ResultTable t = run_exp1(cfg);
    CHECK(t.at("formula=0110 init=[0.25,0.25,0.25,0.25] loss=fisher", "kl_final").value < 1e-2);
    CHECK(t.at("formula=0110 init=[0,1,0,0] loss=wmc", "kl_final").value > 0.5);
    // Starting at rho the objective has nothing to do.
    const auto& at_rho = t.at("formula=0110 init=[0,0.5,0.5,0] loss=fisher", "kl_final");
    CHECK(at_rho.value < 1e-3);
    CHECK(at_rho.value <= t.at("formula=0110 init=[0,0.5,0.5,0] loss=fisher", "kl_initial").value + 1e-9);
    CHECK(run_exp1(cfg).rows == t.rows);

    cfg.inits = {{0.5, 0.6, 0, 0}};
    CHECK_THROWS(run_exp1(cfg));
    cfg.inits = {{1, 0}};
    CHECK_THROWS(run_exp1(cfg));
}

TEST_CASE("exp2 and exp3 at toy scale") {
    const auto dir = scratch_dir("exp23");
    ExperimentConfig cfg = small_classifier_config(dir);

    cfg.experiment = "exp3";
    CHECK_THROWS_AS(run_exp3(cfg), Error);

    cfg.experiment = "exp2";
    const ResultTable t2 = run_exp2(cfg);
    CHECK_FALSE(t2.warnings.empty());
    CHECK(t2.metadata.at("dataset") == "synthetic");
    CHECK(t2.find("noreg", "test_accuracy") != nullptr);
    CHECK(t2.find("loss=fisher lambda=0.1", "val_accuracy") != nullptr);
    CHECK(t2.at("loss=fisher best", "best_lambda").value == 0.1);
    CHECK(fs::exists(cfg.teacher));
    CHECK(run_exp2(cfg).rows == t2.rows);

    cfg.experiment = "exp3";
    cfg.losses = {LossKind::kl};
    const ResultTable t3 = run_exp3(cfg);
    CHECK(t3.at("student", "parameter_ratio").value < 0.55);
    CHECK(t3.find("mode=kd loss=kl", "test_accuracy") != nullptr);
    CHECK(t3.find("mode=reg loss=kl lambda=0.1", "gap_to_teacher") != nullptr);
    CHECK(run_exp3(cfg).rows == t3.rows);

    cfg.synthetic_fallback = false;
    CHECK_THROWS_AS(run_exp2(cfg), Error);
    fs::remove_all(dir);
}

TEST_CASE("exp4 at toy scale") {
    ExperimentConfig cfg;
    cfg.experiment = "exp4";
    cfg.num_seeds = 2;
    cfg.learning_rates = {0.1};
    cfg.optimizers = {OptimizerKind::adam};
    cfg.steps = 200;
    cfg.train_grid = 24;
    cfg.eval_grid = 48;
    const ResultTable t = run_exp4(cfg);
    const auto& mx = t.at("sigma=0.35 loss=KL opt=adam lr=0.1", "mu_x");
    CHECK(std::abs(mx.value - kQuarterDiscCentroid) < 2e-2);
    CHECK(t.find("sigma=0.35 loss=W opt=adam best", "tv") != nullptr);
    CHECK(t.find("sigma=0.35 loss=logW opt=adam lr=0.1", "diverged_runs") != nullptr);
    CHECK(run_exp4(cfg).rows == t.rows);

    cfg.losses = {LossKind::fisher};
    CHECK_THROWS(run_exp4(cfg));
    cfg.losses = {};
    cfg.region = "x >= 0; y >= 0; x + y <= 1";
    cfg.region_box = Box{0, 1, 0, 1};
    const ResultTable tri = run_exp4(cfg);
    CHECK(std::stod(tri.metadata.at("region_area")) == doctest::Approx(0.5).epsilon(1e-2));
}

TEST_CASE("train_normal_mean reports divergence instead of failing") {
    const Region r = quarter_disc_region();
    const QuadratureGrid train = polar_quadrature(16, 16);
    const QuadratureGrid eval = polar_quadrature(32, 32);
    OptimizerConfig opt;
    opt.kind = OptimizerKind::sgd;
    opt.learning_rate = 1e4;
    opt.steps = 200;
    // Each step multiplies the distance to the centroid by about lr / sigma^2.
    const ContinuousRun run = train_normal_mean(r, LossKind::kl, {0.3, 0.3}, 0.35, train, eval, opt);
    CHECK(run.diverged);
    CHECK(run.tv == 1.0);
    opt.learning_rate = 0.1;
    CHECK_FALSE(train_normal_mean(r, LossKind::kl, {0.3, 0.3}, 0.35, train, eval, opt).diverged);
    CHECK(continuous_loss_name(LossKind::wmc) == "W");
    CHECK(continuous_loss_name(LossKind::sloss) == "logW");
    CHECK_THROWS(continuous_loss_name(LossKind::l2));
}
