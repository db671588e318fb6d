// pode: command-line front end for data generation, training, evaluation,
// plotting and classical baselines.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pode/data.hpp"
#include "pode/harness.hpp"
#include "pode/plot.hpp"

namespace {

struct RunFlags {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string dataset;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("-c,--config", f.config_file, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", f.overrides, "override a config key (key=value), repeatable");
  cmd->add_option("-d,--dataset", f.dataset, "dataset file (JSONL)");
  cmd->add_option("-o,--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "random seed (PODE_SEED wins over this)");
  cmd->add_flag("-q,--quiet", f.quiet, "no per-epoch progress");
}

// file, then flags, then PODE_SEED
pode::RunConfig resolve(const RunFlags& f, const std::string& mode) {
  pode::RunConfig c = f.config_file.empty() ? pode::RunConfig{} : pode::load_config(f.config_file);
  if (!mode.empty()) c.mode = pode::parse_mode(mode);
  if (!f.dataset.empty()) c.dataset = f.dataset;
  if (!f.out.empty()) c.output_dir = f.out;
  if (f.seed) c.seed = *f.seed;
  for (const auto& kv : f.overrides) pode::apply_override(c, kv);
  pode::apply_seed_env(c);
  if (c.dataset.empty()) throw pode::ConfigError("no dataset given (--dataset or dataset = ... in the config)");
  return c;
}

void print_summary(const pode::RunConfig& c, const pode::RunOutcome& o) {
  std::printf("%s: train MSE %.6g, test MSE %.6g -> %s/report.json\n", pode::mode_name(c.mode),
              o.report["mse"]["train"].get<double>(), o.report["mse"]["test"].get<double>(), c.output_dir.c_str());
}

std::vector<std::size_t> parse_ids(const std::string& s) {
  std::vector<std::size_t> ids;
  for (const auto& part : pode::detail::split_list(s)) {
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      ids.push_back(static_cast<std::size_t>(pode::detail::to_int("ids", part)));
    } else {
      const auto a = pode::detail::to_int("ids", part.substr(0, dash));
      const auto b = pode::detail::to_int("ids", part.substr(dash + 1));
      for (auto i = a; i <= b; ++i) ids.push_back(static_cast<std::size_t>(i));
    }
  }
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive latent ODE forecasting"};
  app.set_version_flag("--version", std::string(PODE_VERSION));
  app.require_subcommand(1);

  // generate
  std::size_t gen_n = 250;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  pode::SyntheticRanges gen_ranges;
  auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
  gen->add_option("-n,--n", gen_n, "number of samples (first 80% train)")->capture_default_str();
  gen->add_option("--seed", gen_seed, "random seed (PODE_SEED wins over this)")->capture_default_str();
  gen->add_option("--noise", gen_ranges.noise_sd, "observation noise sd")->capture_default_str();
  gen->add_option("-o,--out", gen_out, "output JSONL file")->required();

  // ingest
  std::string ing_csv, ing_out;
  pode::PemsOptions ing_opt;
  std::size_t ing_keep = 0;
  std::uint64_t ing_seed = 0;
  auto* ing = app.add_subcommand("ingest", "convert a traffic CSV (timestamp,sensor_id,flow) to a dataset");
  ing->add_option("csv", ing_csv, "input CSV")->required()->check(CLI::ExistingFile);
  ing->add_option("-o,--out", ing_out, "output JSONL file")->required();
  ing->add_option("--sensor", ing_opt.sensor_id, "sensor to keep (required when the file has several)");
  ing->add_option("--from", ing_opt.from_date, "first day, YYYY-MM-DD");
  ing->add_option("--to", ing_opt.to_date, "last day, YYYY-MM-DD");
  ing->add_option("--irregular", ing_keep, "subsample each day to this many points (0 keeps all)");
  ing->add_option("--seed", ing_seed, "seed for --irregular");

  // train
  RunFlags tr_flags;
  std::string tr_mode = "pode";
  auto* tr = app.add_subcommand("train", "train a NODE or PODE model and evaluate it");
  add_run_flags(tr, tr_flags);
  tr->add_option("-m,--mode", tr_mode, "node or pode")->check(CLI::IsMember({"node", "pode"}))->capture_default_str();

  // eval
  std::string ev_ckpt, ev_data, ev_out;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("checkpoint", ev_ckpt, "checkpoint JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("-d,--dataset", ev_data, "dataset file")->required()->check(CLI::ExistingFile);
  ev->add_option("-o,--out", ev_out, "report path (default: print to stdout)");

  // plot
  std::string pl_ckpt, pl_data, pl_out = "plots", pl_ids = "0";
  auto* pl = app.add_subcommand("plot", "draw forecasts for some samples as SVG");
  pl->add_option("checkpoint", pl_ckpt, "checkpoint JSON")->required()->check(CLI::ExistingFile);
  pl->add_option("-d,--dataset", pl_data, "dataset file")->required()->check(CLI::ExistingFile);
  pl->add_option("--ids", pl_ids, "sample indices, e.g. 0,3,10-12")->capture_default_str();
  pl->add_option("-o,--out", pl_out, "output directory")->capture_default_str();

  // baseline
  RunFlags bl_flags;
  std::string bl_mode = "arima";
  auto* bl = app.add_subcommand("baseline", "evaluate a classical baseline (static, ha, arima)");
  add_run_flags(bl, bl_flags);
  bl->add_option("-m,--mode", bl_mode, "static, ha or arima")
      ->check(CLI::IsMember({"static", "ha", "arima"}))
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) {
      pode::RunConfig tmp;
      tmp.seed = gen_seed;
      pode::apply_seed_env(tmp);
      const pode::Dataset d = pode::gen_synthetic_suite(gen_n, gen_ranges, tmp.seed);
      pode::write_dataset(gen_out, d);
      std::printf("wrote %zu samples (%zu train) to %s\n", d.samples.size(), d.count(pode::Role::train),
                  gen_out.c_str());
    } else if (ing->parsed()) {
      pode::Dataset d = pode::ingest_pems(ing_csv, ing_opt);
      if (ing_keep) {
        pode::RunConfig tmp;
        tmp.seed = ing_seed;
        pode::apply_seed_env(tmp);
        for (std::size_t i = 0; i < d.samples.size(); ++i)
          d.samples[i] = pode::irregular_subsample(d.samples[i], ing_keep, tmp.seed + i);
      }
      pode::write_dataset(ing_out, d);
      std::printf("wrote %zu samples (%zu train, %zu test) to %s\n", d.samples.size(), d.count(pode::Role::train),
                  d.count(pode::Role::test), ing_out.c_str());
    } else if (tr->parsed()) {
      const pode::RunConfig c = resolve(tr_flags, tr_mode);
      pode::EpochCallback cb;
      if (!tr_flags.quiet)
        cb = [](int s, int e, double loss) { std::fprintf(stderr, "stage %d epoch %3d loss %.6g\n", s, e, loss); };
      print_summary(c, pode::run(c, cb));
    } else if (ev->parsed()) {
      std::string warning;
      const nlohmann::json j = pode::evaluate_checkpoint(ev_ckpt, ev_data, &warning);
      if (!warning.empty()) std::fprintf(stderr, "warning: %s\n", warning.c_str());
      if (ev_out.empty()) {
        std::cout << j.dump(2) << '\n';
      } else {
        pode::write_json(ev_out, j);
        std::printf("test MSE %.6g -> %s\n", j["mse"]["test"].get<double>(), ev_out.c_str());
      }
    } else if (pl->parsed()) {
      pode::Checkpoint ck = pode::load_checkpoint(pl_ckpt);
      const pode::Dataset d = pode::read_dataset(pl_data);
      for (const auto& p : pode::plot_samples(ck.model, ck.normalizer, d, parse_ids(pl_ids), pl_out))
        std::printf("%s\n", p.string().c_str());
    } else if (bl->parsed()) {
      const pode::RunConfig c = resolve(bl_flags, bl_mode);
      print_summary(c, pode::run(c));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
