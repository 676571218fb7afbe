// snsteg: synthetic data, training, evaluation and experiment runner.
//
// Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "snsteg/checkpoint.hpp"
#include "snsteg/config.hpp"
#include "snsteg/data.hpp"
#include "snsteg/experiments.hpp"
#include "snsteg/gradcheck.hpp"
#include "snsteg/threads.hpp"
#include "snsteg/training.hpp"

namespace fs = std::filesystem;
using namespace snsteg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Flags that map one-to-one onto config keys. Unset flags leave the key alone.
struct Overrides {
    std::string config_file;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flags;

    void bind(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        app->add_option_function<std::string>(
            flag, [this, key](const std::string& v) { flags[key] = v; }, help);
    }

    RunConfig resolve(RunConfig base) const {
        if (!config_file.empty()) base.merge(RunConfig::load(config_file));
        for (const auto& [k, v] : flags) base.set(k, v);
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
            base.set(s.substr(0, eq), s.substr(eq + 1));
        }
        return base;
    }
};

void add_common(CLI::App* app, Overrides& o) {
    app->add_option("--config", o.config_file, "flat key=value config file");
    app->add_option("--set", o.sets, "override any config key (key=value), repeatable");
}

void add_training_flags(CLI::App* app, Overrides& o) {
    o.bind(app, "--norm", "norm", "sn | bn-batch | bn-fixed");
    o.bind(app, "--epochs", "epochs", "training epochs");
    o.bind(app, "--batch-size", "batch_size", "covers + stegos per batch (even)");
    o.bind(app, "--lr-high", "lr_high", "learning rate before the drop");
    o.bind(app, "--lr-low", "lr_low", "learning rate after the drop");
    o.bind(app, "--seed", "seed", "model and shuffling seed");
    o.bind(app, "--image-size", "image_size", "image side length");
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
}

fs::path manifest_path(const std::string& data, const std::string& manifest) {
    if (!manifest.empty()) return manifest;
    if (data.empty()) throw ConfigError("give --data <dataset dir> or --manifest <file>");
    return fs::path(data) / "manifest.txt";
}

std::string pick_payload(const DatasetManifest& m, const std::string& requested) {
    const auto tags = m.payloads();
    if (tags.empty()) throw ConfigError("manifest lists no stego images");
    if (requested.empty()) return tags.front();
    if (std::find(tags.begin(), tags.end(), requested) == tags.end())
        throw ConfigError("payload '" + requested + "' not in manifest");
    return requested;
}

int cmd_synth(const RunConfig& cfg, const fs::path& out) {
    SynthConfig sc;
    sc.count = cfg.size("count");
    sc.size = cfg.size("image_size");
    sc.smoothing = cfg.real("smoothing");
    sc.rates = cfg.reals("rates");
    sc.train_fraction = cfg.real("train_fraction");
    sc.seed = cfg.u64("data_seed");
    for (double r : sc.rates)
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("rate " + std::to_string(r) + " outside [0, 1]");
    if (sc.rates.empty()) throw ConfigError("no rates given");
    const DatasetManifest m = write_synth_dataset(sc, out);
    cfg.save(out / "config.txt");
    std::cout << "wrote " << sc.count << " covers and " << sc.count * sc.rates.size() << " stegos to " << out.string()
              << " (" << m.covers("train").size() << " train / " << m.covers("test").size() << " test covers)\n";
    return kExitOk;
}

int cmd_train(const RunConfig& cfg, const fs::path& manifest_file, const std::string& payload_req,
              const fs::path& out, bool resume) {
    const DatasetManifest m = load_manifest(manifest_file);
    const std::string payload = pick_payload(m, payload_req);
    const fs::path base = manifest_file.parent_path();
    const PairSet train = load_pairs(m, base, "train", payload);
    const PairSet test = load_pairs(m, base, "test", payload);
    RunConfig resolved = cfg;
    if (!resolved.has("image_size") && train.size() > 0)
        resolved.set("image_size", std::to_string(train.covers.front().width));
    const TrainConfig tc = train_config_from(resolved);

    fs::create_directories(out);
    resolved.set("payload", payload);
    resolved.set("manifest", fs::absolute(manifest_file).string());
    resolved.save(out / "config.txt");

    const fs::path ckpt = out / "checkpoint.ckpt";
    TrainState state(tc.net, tc.seed);
    std::vector<std::string> lines;      // metrics rows already written
    std::vector<std::string> stat_lines;  // BN side file rows
    if (resume && fs::exists(ckpt)) {
        Checkpoint ck = load_checkpoint(ckpt);
        if (!ck.state.net.config().compatible_with(tc.net))
            throw ConfigError("checkpoint in " + out.string() + " was trained with a different architecture");
        state = std::move(ck.state);
        const std::size_t done = state.net.epoch();
        auto keep = [done](const fs::path& p, std::vector<std::string>& dst) {
            std::istringstream in(read_file(p));
            std::string line;
            std::getline(in, line);  // header
            while (dst.size() < done && std::getline(in, line)) dst.push_back(line);
        };
        if (fs::exists(out / "metrics.csv")) keep(out / "metrics.csv", lines);
        if (fs::exists(out / "bn_stats.csv")) keep(out / "bn_stats.csv", stat_lines);
        std::cerr << "resuming at epoch " << done << "\n";
    }
    const bool bn = tc.net.norm != NormKind::SN;
    auto flush = [&] {
        std::string s = std::string(kMetricsHeader) + "\n";
        for (const auto& l : lines) s += l + "\n";
        write_file(out / "metrics.csv", s);
        if (bn) {
            std::string b = "epoch,batch_paired,batch_unpaired,fixed_paired,fixed_unpaired\n";
            for (const auto& l : stat_lines) b += l + "\n";
            write_file(out / "bn_stats.csv", b);
        }
    };
    flush();
    const bool verbose = cfg.has("verbose") && cfg.flag("verbose");
    // stop_after ends this invocation early, leaving a checkpoint to --resume from.
    struct Halt {};
    const std::size_t stop_after = cfg.has("stop_after") ? cfg.size("stop_after") : 0;
    std::size_t ran = 0;
    auto on_epoch = [&](const MetricsRow& r, TrainState& st) {
        lines.push_back(metrics_csv_line(r));
        if (bn) {
            const std::string csv = bn_stats_csv({r}, tc.net.norm);
            stat_lines.push_back(csv.substr(csv.find('\n') + 1, csv.size() - csv.find('\n') - 2));
        }
        flush();
        save_checkpoint(ckpt, st, {{"payload", payload}, {"test_pe", std::to_string(r.test_err_paired)}});
        if (verbose)
            std::cerr << "epoch " << r.epoch << " loss " << r.loss << " paired " << r.test_err_paired << " unpaired "
                      << r.test_err_unpaired << "\n";
        if (stop_after != 0 && ++ran == stop_after) throw Halt{};
    };
    try {
        train_loop(state, train, test, tc, on_epoch);
    } catch (const Halt&) {
        std::cout << "stopped after epoch " << state.net.epoch() << "; checkpoint " << ckpt.string() << "\n";
        return kExitOk;
    }
    std::cout << "trained " << tc.optim.epochs << " epochs; checkpoint " << ckpt.string() << "\n";
    return kExitOk;
}

int cmd_eval(const fs::path& ckpt_file, const fs::path& manifest_file, const std::string& payload_req,
             const std::string& split, const std::string& pairing, std::size_t batch_size,
             const std::string& bn_stats, const std::string& out_csv) {
    Checkpoint ck = load_checkpoint(ckpt_file);
    const DatasetManifest m = load_manifest(manifest_file);
    const std::string payload = pick_payload(m, payload_req);
    const PairSet test = load_pairs(m, manifest_file.parent_path(), split, payload);
    if (test.size() == 0) throw Error("evaluation set is empty");
    if (test.covers.front().width != ck.state.net.config().image_size)
        throw ShapeError("checkpoint expects " + std::to_string(ck.state.net.config().image_size) +
                         " px images, test set has " + std::to_string(test.covers.front().width));
    std::optional<StatsSource> src;
    if (bn_stats == "batch")
        src = StatsSource::Batch;
    else if (bn_stats == "fixed")
        src = StatsSource::Fixed;

    std::vector<Pairing> modes;
    if (pairing == "paired" || pairing == "both") modes.push_back(Pairing::Paired);
    if (pairing == "unpaired" || pairing == "both") modes.push_back(Pairing::Unpaired);
    std::string csv = "pairing,P_E,P_MD,P_FA\n";
    for (Pairing p : modes) {
        const DetectionError e = evaluate(ck.state.net, test, batch_size, p, src);
        char line[128];
        std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%.6f\n", to_string(p).c_str(), e.pe, e.pmd, e.pfa);
        csv += line;
    }
    std::cout << csv;
    if (!out_csv.empty()) write_file(out_csv, csv);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"snsteg: steganalysis network with shared or batch normalization"};
    app.require_subcommand(1);

    Overrides synth_o, train_o, exp_o;
    std::string out_dir, data_dir, manifest, payload, checkpoint, split = "test", pairing = "both", bn_stats,
        eval_out, experiment, preset = "paper";
    std::size_t eval_batch = 16;
    std::uint64_t grad_seed = 1;
    bool resume = false;

    auto* synth = app.add_subcommand("synth", "write synthetic covers, +-1 stegos and a manifest");
    add_common(synth, synth_o);
    synth->add_option("--out", out_dir, "dataset directory")->required();
    synth_o.bind(synth, "--count", "count", "number of covers");
    synth_o.bind(synth, "--size", "image_size", "image side length");
    synth_o.bind(synth, "--smoothing", "smoothing", "box filter width of the cover generator");
    synth_o.bind(synth, "--rates", "rates", "comma-separated change rates");
    synth_o.bind(synth, "--train-fraction", "train_fraction", "share of covers in the training split");
    synth_o.bind(synth, "--seed", "data_seed", "data seed");

    auto* train = app.add_subcommand("train", "train a network on a dataset manifest");
    add_common(train, train_o);
    add_training_flags(train, train_o);
    train->add_option("--data", data_dir, "dataset directory containing manifest.txt");
    train->add_option("--manifest", manifest, "manifest file");
    train->add_option("--payload", payload, "payload tag (default: first in manifest)");
    train->add_option("--out", out_dir, "run directory")->required();
    train->add_flag("--resume", resume, "continue from <out>/checkpoint.ckpt when present");
    train->add_option("--preset", preset, "paper (200 epochs) | desk (40 epochs)")
        ->check(CLI::IsMember({"paper", "desk"}));
    train_o.bind(train, "--verbose", "verbose", "print per-epoch progress (1/0)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a test split");
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--data", data_dir, "dataset directory containing manifest.txt");
    eval->add_option("--manifest", manifest, "manifest file");
    eval->add_option("--payload", payload, "payload tag");
    eval->add_option("--split", split, "train | test")->check(CLI::IsMember({"train", "test"}));
    eval->add_option("--pairing", pairing, "paired | unpaired | both")
        ->check(CLI::IsMember({"paired", "unpaired", "both"}));
    eval->add_option("--batch-size", eval_batch, "covers + stegos per evaluation batch");
    eval->add_option("--bn-stats", bn_stats, "BN statistics at evaluation: batch | fixed")
        ->check(CLI::IsMember({"batch", "fixed"}));
    eval->add_option("--csv", eval_out, "also write the report to this CSV");

    auto* exp = app.add_subcommand("experiment", "run a named experiment");
    add_common(exp, exp_o);
    add_training_flags(exp, exp_o);
    exp->add_option("name", experiment, "fig7 | fig2 | mismatch-payload | mismatch-algo | aug-ens")->required();
    exp->add_option("--out", out_dir, "output directory")->required();
    exp_o.bind(exp, "--data-root", "data_root", "root of cover/ and stego/<algo>_<payload>/ (mismatch-algo)");
    exp_o.bind(exp, "--train-covers", "train_covers", "synthetic training covers");
    exp_o.bind(exp, "--test-covers", "test_covers", "synthetic test covers");
    exp_o.bind(exp, "--verbose", "verbose", "print per-epoch progress (1/0)");

    auto* grad = app.add_subcommand("gradcheck", "finite-difference verification of every backward pass");
    grad->add_option("--seed", grad_seed, "seed of the random test tensors");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        configure_threads();
        if (*synth) {
            RunConfig base = default_run_config();
            base.set("count", "512");
            base.set("rates", "0.4");
            base.set("train_fraction", "0.5");
            return cmd_synth(synth_o.resolve(base), out_dir);
        }
        if (*train) {
            // Full-length schedule unless the desk preset is asked for; image size follows the data.
            RunConfig base;
            const RunConfig defaults = default_run_config();
            for (const auto& [k, v] : defaults.values())
                if (k != "image_size") base.set(k, v);
            base.set("epochs", preset == "desk" ? "40" : "200");
            return cmd_train(train_o.resolve(base), manifest_path(data_dir, manifest), payload, out_dir, resume);
        }
        if (*eval) return cmd_eval(checkpoint, manifest_path(data_dir, manifest), payload, split, pairing, eval_batch,
                                   bn_stats, eval_out);
        if (*exp) {
            experiment_defaults(experiment);  // rejects unknown names before any work
            const RunConfig over = exp_o.resolve(RunConfig{});
            std::cout << run_experiment(experiment, over, out_dir);
            return kExitOk;
        }
        if (*grad) {
            const auto results = run_gradcheck_suite(grad_seed);
            std::cout << format_gradcheck_table(results);
            for (const auto& r : results)
                if (!r.passed) return kExitRuntime;
            return kExitOk;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
