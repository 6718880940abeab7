// pscl command line: train, evaluate, diagnose, ablate, export-latent,
// convert-usps. One JSON config document drives a run; flags pick the command
// and may override single keys with --set key.path=value.
//
// Exit codes: 0 success, 2 config error, 3 runtime/NaN abort, 4 I/O error.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pscl/runner.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_dir;  // optional override of config output_dir
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "JSON run configuration")->required();
  cmd->add_option("--set", args.overrides, "override a config key, e.g. --set train.epochs=5");
  cmd->add_option("-o,--out", args.output_dir, "output directory (defaults to config output_dir)");
}

pscl::RunConfig load(const CommonArgs& args) {
  pscl::RunConfig cfg = pscl::load_run_config(args.config_path, args.overrides);
  if (!args.output_dir.empty()) cfg.output_dir = args.output_dir;
  std::filesystem::create_directories(cfg.output_dir);
  return cfg;
}

std::unique_ptr<pscl::Trainer> trainer_from_checkpoint(const pscl::RunConfig& cfg,
                                                       const std::string& checkpoint,
                                                       const pscl::Dataset& train_like) {
  auto trainer = pscl::make_trainer(cfg, train_like);
  trainer->load_checkpoint(checkpoint);
  return trainer;
}

int cmd_train(const CommonArgs& args) {
  pscl::RunConfig cfg = load(args);
  auto trainer = pscl::run_train(cfg, cfg.output_dir);
  const auto& last = trainer->log().records.back();
  std::printf("trained %lld epochs: loss %.6f pseudo_acc %.4f -> %s\n",
              static_cast<long long>(last.epoch), last.loss, last.pseudo_acc, cfg.output_dir.c_str());
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& checkpoint, const std::string& split) {
  pscl::RunConfig cfg = load(args);
  pscl::DatasetPair data = pscl::load_datasets(cfg);
  const pscl::Dataset& eval_set = (split == "train" || data.test.m == 0) ? data.train : data.test;
  auto trainer = trainer_from_checkpoint(cfg, checkpoint, data.train);
  pscl::write_config_snapshot(cfg, cfg.output_dir + "/evaluate_config.json");
  pscl::ClusterReport rep = pscl::run_evaluate(cfg, *trainer, eval_set, cfg.output_dir);
  std::printf("evaluate: split=%s tap=%s k=%lld acc=%.4f inertia=%.6g -> %s/report.json\n",
              eval_set.split.c_str(), cfg.eval.tap.c_str(), static_cast<long long>(cfg.eval.k), rep.acc,
              rep.inertia, cfg.output_dir.c_str());
  return 0;
}

int cmd_diagnose(const CommonArgs& args, const std::string& checkpoint, const std::string& split) {
  pscl::RunConfig cfg = load(args);
  pscl::DatasetPair data = pscl::load_datasets(cfg);
  const pscl::Dataset& set = (split == "train" || data.test.m == 0) ? data.train : data.test;
  if (cfg.diagnose.sample > set.m)
    std::fprintf(stderr, "warning: diagnose.sample %lld > %lld examples, clamping\n",
                 static_cast<long long>(cfg.diagnose.sample), static_cast<long long>(set.m));
  auto trainer = trainer_from_checkpoint(cfg, checkpoint, data.train);
  pscl::write_config_snapshot(cfg, cfg.output_dir + "/diagnose_config.json");
  pscl::DiagnoseResult res = pscl::run_diagnose(cfg, *trainer, set, cfg.output_dir);
  std::printf("diagnose: m=%lld delta_y=%lld delta_m=%lld (bounds [%lld, %lld]) spanning=%.3f -> %s\n",
              static_cast<long long>(res.sample_m), static_cast<long long>(res.y_stats.delta),
              static_cast<long long>(res.m_stats.delta), static_cast<long long>(trainer->gar().np),
              static_cast<long long>(trainer->gar().np * trainer->gar().ks), res.spanning.fraction,
              cfg.output_dir.c_str());
  return 0;
}

int cmd_ablate(const CommonArgs& args, const std::vector<std::string>& set_specs, int repeats) {
  pscl::RunConfig cfg = load(args);
  std::vector<std::vector<std::string>> sets;
  for (const auto& spec : set_specs) {
    std::vector<std::string> names;
    std::string cur;
    for (char ch : spec) {
      if (ch == ',') {
        names.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(ch);
      }
    }
    names.push_back(cur);
    sets.push_back(std::move(names));
  }
  if (sets.empty()) sets.push_back(cfg.transforms);
  pscl::write_config_snapshot(cfg, cfg.output_dir + "/ablate_config.json");
  auto rows = pscl::run_ablate(cfg, cfg.output_dir, sets, repeats);
  bool any_ok = false;
  for (const auto& r : rows) {
    if (!r.error.empty()) {
      std::fprintf(stderr, "ablate: set %s failed: %s\n", r.set_name.c_str(), r.error.c_str());
      continue;
    }
    any_ok = true;
    std::printf("ablate: %s acc %.4f +- %.4f\n", r.set_name.c_str(), r.acc_mean, r.acc_std);
  }
  if (!any_ok) throw pscl::config_error("ablate: every transform set failed");
  std::printf("ablate: wrote %s/ablation.csv\n", cfg.output_dir.c_str());
  return 0;
}

int cmd_export_latent(const CommonArgs& args, const std::string& checkpoint, const std::string& split,
                      bool csv) {
  pscl::RunConfig cfg = load(args);
  pscl::DatasetPair data = pscl::load_datasets(cfg);
  const pscl::Dataset& set = (split == "train" || data.test.m == 0) ? data.train : data.test;
  auto trainer = trainer_from_checkpoint(cfg, checkpoint, data.train);
  pscl::write_config_snapshot(cfg, cfg.output_dir + "/export_config.json");
  pscl::Matrix rep = pscl::extract_latent(*trainer, set.images(), pscl::parse_tap(cfg.eval.tap));
  std::filesystem::create_directories(cfg.output_dir);
  const std::string stem = cfg.output_dir + "/latent_" + cfg.eval.tap;
  pscl::write_matrix(stem + ".bin", rep);
  if (csv) pscl::write_matrix_csv(stem + ".csv", rep);
  std::printf("export-latent: %lld x %lld (%s) -> %s.bin\n", static_cast<long long>(rep.rows),
              static_cast<long long>(rep.cols), cfg.eval.tap.c_str(), stem.c_str());
  return 0;
}

int cmd_convert_usps(const std::string& text_path, const std::string& images_out,
                     const std::string& labels_out) {
  const std::uint64_t checksum = pscl::convert_usps_text(text_path, images_out, labels_out);
  std::printf("convert-usps: wrote %s, %s (fnv1a64 %016llx)\n", images_out.c_str(), labels_out.c_str(),
              static_cast<unsigned long long>(checksum));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pseudo-supervised clustering runner"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, diag_args, ablate_args, export_args;
  std::string eval_checkpoint, diag_checkpoint, export_checkpoint;
  std::string eval_split = "test", diag_split = "test", export_split = "test";
  std::vector<std::string> ablate_sets;
  int ablate_repeats = 1;
  bool export_csv = false;
  std::string usps_in, usps_images, usps_labels;

  auto* train = app.add_subcommand("train", "train a model from a config");
  add_common(train, train_args);

  auto* evaluate = app.add_subcommand("evaluate", "k-means + ACC on a checkpointed model");
  add_common(evaluate, eval_args);
  evaluate->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  evaluate->add_option("--split", eval_split, "train|test (default test)");

  auto* diagnose = app.add_subcommand("diagnose", "activity graph statistics");
  add_common(diagnose, diag_args);
  diagnose->add_option("--checkpoint", diag_checkpoint, "checkpoint file")->required();
  diagnose->add_option("--split", diag_split, "train|test (default test)");

  auto* ablate = app.add_subcommand("ablate", "compare transform sets");
  add_common(ablate, ablate_args);
  ablate->add_option("--transform-set", ablate_sets,
                     "comma-joined transform names; repeat the flag per set");
  ablate->add_option("--repeats", ablate_repeats, "training repeats per set");

  auto* exp = app.add_subcommand("export-latent", "dump the learned representation");
  add_common(exp, export_args);
  exp->add_option("--checkpoint", export_checkpoint, "checkpoint file")->required();
  exp->add_option("--split", export_split, "train|test (default test)");
  exp->add_flag("--csv", export_csv, "also write a CSV alongside the binary matrix");

  auto* usps = app.add_subcommand("convert-usps", "convert USPS text data to IDX");
  usps->add_option("input", usps_in, "USPS text file (label then 256 values per line)")->required();
  usps->add_option("images_out", usps_images, "output IDX image file")->required();
  usps->add_option("labels_out", usps_labels, "output IDX label file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (train->parsed()) return cmd_train(train_args);
    if (evaluate->parsed()) return cmd_evaluate(eval_args, eval_checkpoint, eval_split);
    if (diagnose->parsed()) return cmd_diagnose(diag_args, diag_checkpoint, diag_split);
    if (ablate->parsed()) return cmd_ablate(ablate_args, ablate_sets, ablate_repeats);
    if (exp->parsed()) return cmd_export_latent(export_args, export_checkpoint, export_split, export_csv);
    if (usps->parsed()) return cmd_convert_usps(usps_in, usps_images, usps_labels);
  } catch (const pscl::config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const pscl::contract_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const pscl::train_abort_error& e) {
    std::fprintf(stderr, "training aborted: %s\n", e.what());
    return 3;
  } catch (const pscl::io_error& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
