// Command-line front end for the experiment drivers and the dataset fetcher.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sof/datasets.hpp"
#include "sof/error.hpp"
#include "sof/harness.hpp"

#ifdef SOFKIT_HAVE_HTTP
#ifdef SOFKIT_HAVE_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"
#endif

namespace {

struct IdxFile {
    const char* stem;
    bool images;
    std::size_t count;
};

// Decoded payload sizes are fixed by the published datasets, whatever the
// compression used by a mirror.
constexpr std::array<IdxFile, 4> kMnistFiles{{
    {"train-images-idx3-ubyte", true, 60000},
    {"train-labels-idx1-ubyte", false, 60000},
    {"t10k-images-idx3-ubyte", true, 10000},
    {"t10k-labels-idx1-ubyte", false, 10000},
}};

void verify_payload(const std::filesystem::path& path, const IdxFile& f) {
    if (f.images) {
        const auto raw = sof::load_idx_images(path);
        if (raw.count != f.count || raw.rows != sof::kImageSide || raw.cols != sof::kImageSide)
            throw sof::DecodeError(path.string() + ": expected " + std::to_string(f.count) + " 28x28 images, found " +
                                   std::to_string(raw.count) + " of " + std::to_string(raw.rows) + "x" +
                                   std::to_string(raw.cols));
    } else {
        const auto labels = sof::load_idx_labels(path);
        if (labels.size() != f.count)
            throw sof::DecodeError(path.string() + ": expected " + std::to_string(f.count) + " labels, found " +
                                   std::to_string(labels.size()));
    }
}

#ifdef SOFKIT_HAVE_HTTP
std::string http_get(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw sof::Error("URL must start with http:// or https://: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    const std::string origin = url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
    httplib::Client client(origin);
    client.set_follow_location(true);
    client.set_connection_timeout(30);
    client.set_read_timeout(300);
    auto res = client.Get(path);
    if (!res) throw sof::Error("request to " + url + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw sof::Error("request to " + url + " returned HTTP " + std::to_string(res->status));
    return res->body;
}
#endif

int fetch(const std::string& dataset, std::string url_base, const std::filesystem::path& data_dir) {
#ifndef SOFKIT_HAVE_HTTP
    (void)dataset;
    (void)url_base;
    (void)data_dir;
    throw sof::Error("this build has no HTTP support; place the IDX files under the data directory by hand");
#else
    if (dataset != "mnist" && dataset != "fashion") throw sof::Error("unknown dataset '" + dataset + "'");
    while (!url_base.empty() && url_base.back() == '/') url_base.pop_back();
    const auto dir = data_dir / dataset;
    std::filesystem::create_directories(dir);
    for (const auto& f : kMnistFiles) {
        const std::string name = std::string(f.stem) + ".gz";
        const auto target = dir / name;
        if (std::filesystem::exists(target)) {
            verify_payload(target, f);
            std::cout << "ok      " << target.string() << " (already present)\n";
            continue;
        }
        const std::string body = http_get(url_base + "/" + name);
        const auto partial = dir / (name + ".part");
        {
            std::ofstream out(partial, std::ios::binary);
            out.write(body.data(), static_cast<std::streamsize>(body.size()));
            if (!out) throw sof::Error("cannot write " + partial.string());
        }
        try {
            verify_payload(partial, f);
        } catch (...) {
            std::filesystem::remove(partial);
            throw;
        }
        std::filesystem::rename(partial, target);
        std::cout << "fetched " << target.string() << " (" << body.size() << " bytes)\n";
    }
    return 0;
#endif
}

struct ExperimentFlags {
    std::string config;
    std::vector<std::pair<std::string, std::string>> settings;
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semantic objective experiments"};
    app.set_version_flag("--version", sof::version_string());
    app.require_subcommand(1);

    std::map<std::string, ExperimentFlags> flags;
    // Flag name, setting key, help text.
    const std::vector<std::array<const char*, 3>> options{{
        {"--loss", "loss", "Objective(s): fisher, kl, l2, wmc, sloss (exp4: w, logw, kl); comma separated"},
        {"--lambda", "lambda", "Regularization weight(s), comma separated"},
        {"--lr", "lr", "Learning rate(s), comma separated"},
        {"--optimizer", "optimizer", "sgd or adam, comma separated"},
        {"--steps", "steps", "Training steps (exp1, exp4) or epochs (exp2, exp3)"},
        {"--seed", "seed", "Base random seed"},
        {"--seeds", "seeds", "Number of seeds (exp4)"},
        {"--sigma", "sigma", "Normal scale(s) for exp4, comma separated"},
        {"--profile", "profile", "desk or paper"},
        {"--data-dir", "data-dir", "Directory holding <dataset>/ IDX files"},
        {"--dataset", "dataset", "mnist or fashion"},
        {"--teacher", "teacher", "Teacher checkpoint written by exp2 and read by exp3"},
        {"--formula", "formula", "Formulas (exp1): truth-table labels or formula text, ';' separated"},
        {"--init", "init", "Initial distributions (exp1): comma lists, ';' separated"},
        {"--head", "head", "FSP output head: squared or softmax"},
        {"--region", "region", "quarter_disc or inequalities over x, y separated by ';' (exp4)"},
        {"--box", "box", "Bounding box x_min,x_max,y_min,y_max for a custom region"},
        {"--threads", "threads", "Worker threads for independent grid cells"},
        {"--out", "out", "Report path"},
        {"--format", "format", "csv or json"},
    }};
    for (const char* name : {"exp1", "exp2", "exp3", "exp4"}) {
        auto* sub = app.add_subcommand(name, std::string("Run ") + name);
        auto& f = flags[name];
        sub->add_option("--config", f.config, "Flat key = value config file; flags win");
        for (const auto& o : options) {
            sub->add_option_function<std::string>(
                o[0], [&f, key = std::string(o[1])](const std::string& v) { f.settings.emplace_back(key, v); }, o[2]);
        }
    }

    std::string fetch_dataset = "mnist", url_base, fetch_dir = "data";
    auto* fetch_cmd = app.add_subcommand("fetch", "Download and verify IDX dataset files");
    fetch_cmd->add_option("--dataset", fetch_dataset, "mnist or fashion")->check(CLI::IsMember({"mnist", "fashion"}));
    fetch_cmd->add_option("--url-base", url_base, "Base URL holding the four .gz files")->required();
    fetch_cmd->add_option("--data-dir", fetch_dir, "Destination root");

    CLI11_PARSE(app, argc, argv);

    try {
        if (fetch_cmd->parsed()) return fetch(fetch_dataset, url_base, fetch_dir);
        for (auto& [name, f] : flags) {
            if (!app.got_subcommand(name)) continue;
            sof::ExperimentConfig cfg;
            cfg.experiment = name;
            if (!f.config.empty())
                for (const auto& [k, v] : sof::read_config_file(f.config)) sof::apply_setting(cfg, k, v);
            for (const auto& [k, v] : f.settings) sof::apply_setting(cfg, k, v);
            cfg.experiment = name;
            cfg.validate();
            const sof::ResultTable table = sof::run_experiment(cfg);
            for (const auto& w : table.warnings) std::cerr << "warning: " << w << "\n";
            if (cfg.out.empty()) {
                std::cout << sof::format_csv(table);
            } else {
                sof::report(table, cfg.out, cfg.format);
                std::cerr << "wrote " << table.rows.size() << " rows to " << cfg.out.string() << "\n";
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
