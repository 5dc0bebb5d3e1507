// spaars: dataset generation, CVAE pretraining, curriculum training, verification,
// evaluation and metric export.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "spaars/curriculum.hpp"
#include "spaars/cvae.hpp"
#include "spaars/envs.hpp"
#include "spaars/error.hpp"
#include "spaars/run.hpp"
#include "spaars/verify.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace spaars;

namespace {

void refuse_overwrite(const std::string& path, bool force) {
    if (fs::exists(path) && !force) throw ConfigError(path + " exists; pass --force to overwrite");
}

void ensure_parent(const std::string& path) {
    const fs::path parent = fs::absolute(fs::path(path)).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

std::string rooted(const std::string& path) {
    return run::resolve_output_dir(path, run::output_root_from_env());
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << text;
    if (!out) throw InputError("failed writing " + path);
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
    std::string env = "reach-1d";
    std::string behavior = "medium";
    int pairs = 10000;
    std::uint64_t seed = 0;
    double noise = 0.1;
    std::string out;
    bool force = false;
};

int cmd_gen_data(const GenDataArgs& a) {
    const std::string out = rooted(a.out);
    refuse_overwrite(out, a.force);
    if (a.pairs < 1) throw ConfigError("--pairs must be >= 1");
    auto env = envs::make_env(a.env, a.seed);
    envs::BehaviorConfig bc;
    bc.noise = a.noise;
    const envs::OfflineDataset ds = envs::generate_dataset(*env, envs::parse_behavior(a.behavior), a.pairs, a.seed, bc);
    ensure_parent(out);
    envs::save_dataset(out, ds);
    std::cout << json{{"path", out}, {"pairs", ds.size()}, {"state_dim", ds.state_dim()}, {"action_dim", ds.action_dim()}}
                     .dump()
              << '\n';
    return run::kExitOk;
}

// ---------------------------------------------------------------- train-cvae

struct TrainCvaeArgs {
    std::string data;
    std::string out;
    std::uint64_t seed = 0;
    cvae::CvaeTrainConfig cfg;
    double eps_info = 0.05;
    bool force = false;
};

int cmd_train_cvae(const TrainCvaeArgs& a) {
    const std::string out = rooted(a.out);
    refuse_overwrite(out, a.force);
    a.cfg.validate();
    const envs::OfflineDataset ds = envs::load_dataset(a.data);
    if (ds.meta.env.empty()) throw ConfigError("dataset has no env in its header");
    auto env = envs::make_env(ds.meta.env, a.seed);
    envs::validate_dataset(ds, env->spec());
    const cvae::CvaeTrainResult res = cvae::train_cvae(ds, env->spec().action_bounds, a.cfg, a.seed);
    ensure_parent(out);
    res.model.save_file(out);

    const cvae::ReconstructionError rec = cvae::reconstruction_error(res.model, ds);
    const cvae::CollapseReport collapse = cvae::collapse_check(res.model, ds, a.eps_info);
    json report;
    report["model"] = out;
    report["latent_dim"] = res.model.latent_dim();
    report["eps_rec"] = rec.rms;
    report["eps_rec_sup"] = rec.sup;
    report["collapse"] = json::parse(collapse.to_json());
    json epochs = json::array();
    for (const auto& m : res.metrics)
        epochs.push_back({{"epoch", m.epoch}, {"reconstruction", m.reconstruction}, {"kl", m.kl}, {"beta", m.beta},
                          {"loss", m.loss}});
    report["epochs"] = epochs;
    write_text(out + ".json", report.dump(2) + "\n");
    std::cout << json{{"model", out}, {"eps_rec", rec.rms}, {"eps_rec_sup", rec.sup}, {"collapsed", collapse.collapsed}}
                     .dump()
              << '\n';
    return run::kExitOk;
}

// ---------------------------------------------------------------- train

// Drops records written after the checkpoint so a resumed stream matches an uninterrupted one.
void truncate_metrics(const std::string& path, std::int64_t step) {
    std::ifstream in(path);
    if (!in) return;
    std::string kept, line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (json::parse(line).at("step").get<std::int64_t>() > step) break;
        kept += line + '\n';
    }
    in.close();
    write_text(path, kept);
}

struct TrainArgs {
    std::string config;
    std::string out;
    std::string resume;
    bool force = false;
};

int cmd_train(const TrainArgs& a) {
    run::RunConfig rc = run::load_run_config(a.config);
    if (!a.out.empty()) rc.output_dir = rooted(a.out);
    const std::string dir = rc.output_dir;
    const std::string metrics_path = (fs::path(dir) / "metrics.jsonl").string();
    const std::string cvae_path = (fs::path(dir) / "cvae.bin").string();
    const std::string ckpt_path = (fs::path(dir) / "checkpoint.bin").string();
    const bool resuming = !a.resume.empty();
    if (!resuming && fs::exists(metrics_path) && !a.force)
        throw ConfigError(dir + " already holds a run; pass --force to overwrite or --resume to continue");

    // Everything that can be validated is validated before the environment is touched.
    rc.train.validate();
    const envs::OfflineDataset ds = envs::load_dataset(rc.dataset);
    std::optional<cvae::CvaeModel> pretrained;
    if (resuming) {
        if (!fs::is_regular_file(cvae_path)) throw ConfigError("resume needs " + cvae_path);
        pretrained = cvae::CvaeModel::load_file(cvae_path);
    } else if (!rc.cvae_model.empty()) {
        pretrained = cvae::CvaeModel::load_file(rc.cvae_model);
    }

    fs::create_directories(dir);
    write_text((fs::path(dir) / "config.json").string(), run::to_json(rc) + "\n");
    write_text((fs::path(dir) / "run_info.json").string(),
               json{{"version", run::kVersion}, {"seed", rc.train.seed}, {"config", "config.json"}}.dump(2) + "\n");

    curriculum::Trainer trainer(rc.train, ds, pretrained);
    if (resuming) trainer.load_checkpoint(a.resume);
    else trainer.model().save_file(cvae_path);

    if (resuming) truncate_metrics(metrics_path, trainer.state().env_step);
    std::ofstream metrics(metrics_path, resuming ? std::ios::app : std::ios::trunc);
    if (!metrics) throw InputError("cannot write " + metrics_path);
    trainer.set_metrics(&metrics);

    std::size_t snapshots_written = trainer.result().gate_snapshots.size();
    while (trainer.state().env_step < rc.train.total_steps) {
        trainer.step();
        const auto& snaps = trainer.result().gate_snapshots;
        for (; snapshots_written < snaps.size(); ++snapshots_written) {
            const auto& s = snaps[snapshots_written];
            verify::write_heatmap_csv((fs::path(dir) / run::heatmap_filename(s.step)).string(), s);
        }
        if (rc.checkpoint_every > 0 && trainer.state().env_step % rc.checkpoint_every == 0) {
            metrics.flush();
            const std::string name = "checkpoint_" + std::to_string(trainer.state().env_step) + ".bin";
            trainer.save_checkpoint((fs::path(dir) / name).string());
        }
    }
    metrics.flush();
    trainer.save_checkpoint(ckpt_path);

    const double final_return = trainer.evaluate(rc.train.eval_episodes);
    json phases = json::array();
    for (auto p : trainer.result().phases_seen) phases.push_back(curriculum::to_string(p));
    const json report{{"final_eval_return", final_return},
                      {"eval_episodes", rc.train.eval_episodes},
                      {"steps", trainer.state().env_step},
                      {"seed", rc.train.seed},
                      {"variant", curriculum::to_string(rc.train.curriculum.variant)},
                      {"phases_seen", phases},
                      {"phase1_exit_step", trainer.result().phase1_exit_step},
                      {"final_phase", curriculum::to_string(trainer.state().phase)},
                      {"final_alpha", trainer.state().alpha}};
    write_text((fs::path(dir) / "final_report.json").string(), report.dump(2) + "\n");
    std::cout << report.dump() << '\n';
    return run::kExitOk;
}

// ---------------------------------------------------------------- verify

struct VerifyArgs {
    std::string suite = "all";
    std::string run_dir;
    std::uint64_t seed = 0;
    int samples = 100000;
    std::string report;
};

int cmd_verify(const VerifyArgs& a) {
    verify::SuiteOptions opt;
    opt.seed = a.seed;
    opt.variance_samples = a.samples;
    opt.run_dir = a.run_dir;
    const auto reports = verify::run_suite(a.suite, opt);
    std::ostringstream lines;
    for (const auto& r : reports) lines << r.to_json() << '\n';
    std::cout << lines.str() << '\n' << verify::summary_table(reports);
    if (!a.report.empty()) {
        const std::string path = rooted(a.report);
        ensure_parent(path);
        write_text(path, lines.str());
    }
    for (const auto& r : reports)
        if (r.failed()) return run::kExitVerification;
    return run::kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string run_dir;
    std::string checkpoint;
    int episodes = 10;
};

int cmd_eval(const EvalArgs& a) {
    if (a.episodes < 1) throw ConfigError("--episodes must be >= 1");
    const fs::path dir(rooted(a.run_dir));
    const run::RunConfig rc = run::load_run_config((dir / "config.json").string());
    const envs::OfflineDataset ds = envs::load_dataset(rc.dataset);
    const std::string cvae_path = (dir / "cvae.bin").string();
    if (!fs::is_regular_file(cvae_path)) throw ConfigError("missing " + cvae_path);
    curriculum::Trainer trainer(rc.train, ds, cvae::CvaeModel::load_file(cvae_path));
    trainer.load_checkpoint(a.checkpoint.empty() ? (dir / "checkpoint.bin").string() : a.checkpoint);
    const double v = trainer.evaluate(a.episodes);
    std::cout << json{{"eval_return", v},
                      {"episodes", a.episodes},
                      {"step", trainer.state().env_step},
                      {"phase", curriculum::to_string(trainer.state().phase)}}
                     .dump()
              << '\n';
    return run::kExitOk;
}

// ---------------------------------------------------------------- export

struct ExportArgs {
    std::string kind;
    std::vector<std::string> inputs;
    std::string out;
    std::int64_t step = -1;
};

int cmd_export(const ExportArgs& a) {
    const std::string out_path = rooted(a.out);
    ensure_parent(out_path);
    if (a.kind == "csv") {
        if (a.inputs.size() != 1) throw ConfigError("csv export takes exactly one metrics file");
        std::ifstream in(a.inputs[0]);
        if (!in) throw InputError("cannot read " + a.inputs[0]);
        std::ofstream out(out_path);
        run::export_csv(in, out);
    } else if (a.kind == "svg-lines") {
        std::vector<run::Series> all;
        for (const auto& p : a.inputs) {
            std::ifstream in(p);
            if (!in) throw InputError("cannot read " + p);
            for (auto& s : run::eval_series(in)) all.push_back(std::move(s));
        }
        std::ofstream out(out_path);
        run::export_svg_lines(all, out);
    } else {  // heatmap-csv: the run directory's snapshot at --step (default latest)
        if (a.inputs.size() != 1) throw ConfigError("heatmap-csv export takes exactly one run directory");
        const auto files = run::heatmap_files(a.inputs[0]);
        if (files.empty()) throw InputError("no gate heatmap snapshots in " + a.inputs[0]);
        std::string src = files.back();
        if (a.step >= 0) {
            src = (fs::path(a.inputs[0]) / run::heatmap_filename(a.step)).string();
            if (!fs::is_regular_file(src)) throw InputError("no snapshot at step " + std::to_string(a.step));
        }
        verify::write_heatmap_csv(out_path, verify::read_heatmap_csv(src));
    }
    std::cout << json{{"kind", a.kind}, {"out", out_path}}.dump() << '\n';
    return run::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SPAARS: latent-to-raw curriculum reinforcement learning"};
    app.require_subcommand(1);
    app.set_version_flag("--version", run::kVersion);

    GenDataArgs gd;
    auto* gen = app.add_subcommand("gen-data", "Generate an offline dataset from a scripted behavior policy");
    gen->add_option("--env", gd.env, "Environment")->check(CLI::IsMember(envs::env_names()));
    gen->add_option("--behavior", gd.behavior, "Behavior policy")
        ->check(CLI::IsMember({"expert_noisy", "medium", "random_safe"}));
    gen->add_option("--pairs", gd.pairs, "Number of (s, a) pairs");
    gen->add_option("--seed", gd.seed, "Seed");
    gen->add_option("--noise", gd.noise, "Behavior action noise std");
    gen->add_option("--out", gd.out, "Output dataset path")->required();
    gen->add_flag("--force", gd.force, "Overwrite an existing file");

    TrainCvaeArgs tc;
    auto* tcv = app.add_subcommand("train-cvae", "Pretrain the CVAE on an offline dataset");
    tcv->add_option("--data", tc.data, "Dataset path")->required()->check(CLI::ExistingFile);
    tcv->add_option("--out", tc.out, "Output model path")->required();
    tcv->add_option("--seed", tc.seed, "Seed");
    tcv->add_option("--epochs", tc.cfg.epochs, "Training epochs");
    tcv->add_option("--batch-size", tc.cfg.batch_size, "Minibatch size");
    tcv->add_option("--latent-dim", tc.cfg.latent_dim, "Latent dimension (0 selects ceil(d/2))");
    tcv->add_option("--hidden", tc.cfg.hidden, "Hidden width");
    tcv->add_option("--beta-max", tc.cfg.beta_max, "Final KL weight");
    tcv->add_option("--anneal-steps", tc.cfg.anneal_steps, "KL anneal length in gradient steps");
    tcv->add_option("--free-bits", tc.cfg.free_bits, "Free nats per latent dimension");
    tcv->add_option("--lr", tc.cfg.lr, "Learning rate");
    tcv->add_option("--eps-info", tc.eps_info, "Posterior-collapse threshold in nats");
    tcv->add_flag("--force", tc.force, "Overwrite an existing file");

    TrainArgs tr;
    auto* trn = app.add_subcommand("train", "Run the curriculum from a run config");
    trn->add_option("--config", tr.config, "Run config (JSON)")->required();
    trn->add_option("--out", tr.out, "Override the config's output directory");
    trn->add_option("--resume", tr.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
    trn->add_flag("--force", tr.force, "Overwrite an existing run");

    VerifyArgs va;
    auto* ver = app.add_subcommand("verify", "Check the method's guarantees numerically");
    ver->add_option("--suite", va.suite, "Suite")->check(CLI::IsMember(verify::suite_names()));
    ver->add_option("--run-dir", va.run_dir, "Gate run directory with heatmap snapshots");
    ver->add_option("--seed", va.seed, "Seed");
    ver->add_option("--samples", va.samples, "Monte-Carlo samples for the variance check");
    ver->add_option("--report", va.report, "Also write the JSON reports to this file");

    EvalArgs ea;
    auto* evl = app.add_subcommand("eval", "Evaluate a checkpointed run");
    evl->add_option("--run-dir", ea.run_dir, "Run directory")->required();
    evl->add_option("--checkpoint", ea.checkpoint, "Checkpoint (default: <run-dir>/checkpoint.bin)");
    evl->add_option("--episodes", ea.episodes, "Evaluation episodes");

    ExportArgs xa;
    auto* exp = app.add_subcommand("export", "Reformat metrics or heatmaps");
    exp->add_option("--kind", xa.kind, "Export kind")->required()->check(CLI::IsMember({"csv", "svg-lines", "heatmap-csv"}));
    exp->add_option("--input", xa.inputs, "Metrics file(s), or a run directory for heatmap-csv")->required();
    exp->add_option("--out", xa.out, "Output path")->required();
    exp->add_option("--step", xa.step, "Heatmap snapshot step (default: latest)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? run::kExitOk : run::kExitUsage;
    }

    try {
        if (*gen) return cmd_gen_data(gd);
        if (*tcv) return cmd_train_cvae(tc);
        if (*trn) return cmd_train(tr);
        if (*ver) return cmd_verify(va);
        if (*evl) return cmd_eval(ea);
        if (*exp) return cmd_export(xa);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return run::kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return run::kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return run::kExitOther;
    }
    return run::kExitUsage;
}
