#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "pscl/config.hpp"
#include "pscl/graph.hpp"

namespace pscl {

// Command implementations shared by the CLI and the acceptance suite, so both
// exercise the same path.

struct DatasetPair {
  Dataset train, test;
};

inline DatasetPair load_datasets(const RunConfig& cfg) {
  DatasetPair out;
  if (cfg.dataset.kind == "synthetic") {
    SyntheticSpec train_spec = cfg.dataset.synthetic;
    Rng train_rng = substream(cfg.seed, "synthetic-train");
    out.train = make_synthetic(train_spec, train_rng, "train");
    SyntheticSpec test_spec = cfg.dataset.synthetic;
    test_spec.per_class = cfg.dataset.synthetic_test_per_class;
    Rng test_rng = substream(cfg.seed, "synthetic-test");
    out.test = make_synthetic(test_spec, test_rng, "test");
  } else {
    out.train = load_idx(resolve_data_path(cfg.dataset.train_images),
                         resolve_data_path(cfg.dataset.train_labels), "idx", "train");
    if (!cfg.dataset.test_images.empty())
      out.test = load_idx(resolve_data_path(cfg.dataset.test_images),
                          resolve_data_path(cfg.dataset.test_labels), "idx", "test");
  }
  Rng sub_rng = substream(cfg.seed, "subsample");
  if (cfg.dataset.subsample_train > 0 && cfg.dataset.subsample_train < out.train.m)
    out.train = subsample(out.train, cfg.dataset.subsample_train, sub_rng.next_u64());
  if (out.test.m > 0 && cfg.dataset.subsample_test > 0 && cfg.dataset.subsample_test < out.test.m)
    out.test = subsample(out.test, cfg.dataset.subsample_test, sub_rng.next_u64());
  return out;
}

inline std::unique_ptr<Trainer> make_trainer(const RunConfig& cfg, const Dataset& train) {
  ModelSpec spec = ModelSpec::parse(cfg.model);
  TransformSet set = parse_transform_set(cfg.transforms, cfg.transform_params);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  return std::make_unique<Trainer>(std::move(spec), Shape{train.c, train.h, train.w}, std::move(set),
                                   cfg.gar, tc);
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw io_error(path + ": cannot open for writing");
  out << text;
}

inline void write_config_snapshot(const RunConfig& cfg, const std::string& path) {
  write_text_file(path, run_config_to_json(cfg).dump(2) + "\n");
}

// train: full pipeline; checkpoint + per-epoch CSV + resolved config snapshot.
inline std::unique_ptr<Trainer> run_train(const RunConfig& cfg, const std::string& out_dir,
                                          const Dataset* train_override = nullptr) {
  std::filesystem::create_directories(out_dir);
  write_config_snapshot(cfg, out_dir + "/config.json");
  DatasetPair data;
  const Dataset* train = train_override;
  if (!train) {
    data = load_datasets(cfg);
    train = &data.train;
  }
  auto trainer = make_trainer(cfg, *train);
  const ImagesView view = train->images();
  for (std::int64_t e = 0; e < cfg.train.epochs; ++e) {
    trainer->train_epoch(view);
    if (cfg.train.checkpoint_every > 0 && (e + 1) % cfg.train.checkpoint_every == 0)
      trainer->save_checkpoint(out_dir + "/checkpoint_epoch" + std::to_string(e + 1) + ".bin");
  }
  trainer->save_checkpoint(out_dir + "/checkpoint.bin");
  trainer->log().write_csv(out_dir + "/trainlog.csv");
  return trainer;
}

inline json cluster_report_to_json(const ClusterReport& rep) {
  json j;
  j["acc"] = rep.acc;
  j["k"] = rep.k;
  j["mapping"] = rep.mapping;
  j["contingency"] = rep.contingency;
  j["inertia"] = rep.inertia;
  j["seed"] = rep.seed;
  return j;
}

// evaluate: extract the chosen representation of untransformed examples,
// k-means, optimal-assignment ACC. Writes report JSON + 2-D projection CSV.
inline ClusterReport run_evaluate(const RunConfig& cfg, const Trainer& trainer, const Dataset& data,
                                  const std::string& out_dir, const std::string& stem = "report") {
  std::filesystem::create_directories(out_dir);
  const LatentTap tap = parse_tap(cfg.eval.tap);
  Matrix rep = extract_latent(trainer, data.images(), tap);
  const std::uint64_t kseed = substream(cfg.seed, "kmeans").next_u64();
  KmeansResult km = kmeans(rep, cfg.eval.k, cfg.eval.restarts, kseed);
  const auto& truth = data.labels_for_eval();
  int n_classes = 0;
  for (int t : truth) n_classes = std::max(n_classes, t + 1);
  ClusterReport report = clustering_accuracy(km.assignments, truth, cfg.eval.k, n_classes);
  report.inertia = km.inertia;
  report.seed = kseed;
  write_text_file(out_dir + "/" + stem + ".json", cluster_report_to_json(report).dump(2) + "\n");
  write_matrix_csv(out_dir + "/" + stem + "_projection.csv", project_2d(rep));
  return report;
}

// diagnose: parent-level and duplicate-level similarity graphs on a
// pseudo-labeled sample, component stats, spanning fraction, edge lists.
struct DiagnoseResult {
  ComponentStats y_stats, m_stats;
  SpanningReport spanning;
  double tau_y = 0, tau_m = 0;
  std::int64_t sample_m = 0;
};

inline DiagnoseResult run_diagnose(const RunConfig& cfg, const Trainer& trainer, const Dataset& data,
                                   const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::int64_t sample_m = cfg.diagnose.sample;
  if (sample_m > data.m) sample_m = data.m;  // clamped with a warning at the CLI

  Rng rng = substream(cfg.seed, "diagnose");
  std::vector<std::int64_t> idx(static_cast<std::size_t>(data.m));
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx.data(), idx.size());
  idx.resize(static_cast<std::size_t>(sample_m));

  // Pseudo-label the sample the way training sees it: one random transform
  // per example.
  TransformSet set = parse_transform_set(cfg.transforms, cfg.transform_params);
  prepare_transform_set(set, data.h, data.w);
  const std::int64_t isz = data.c * data.h * data.w;
  Tensor x = Tensor::zeros({sample_m, data.c, data.h, data.w});
  for (std::int64_t i = 0; i < sample_m; ++i) {
    const int label = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(set.np())));
    apply_transform(data.pixels.data() + idx[static_cast<std::size_t>(i)] * isz, x.data() + i * isz,
                    data.c, data.h, data.w, set.items[static_cast<std::size_t>(label)]);
  }

  ForwardResult fr = trainer.forward_eval(x);
  AcolActivations acts = acol_from_z(fr.latent, fr.presoftmax, trainer.gar());

  DiagnoseResult res;
  res.sample_m = sample_m;
  {
    ActivityGraph probe = build_graph(acts.Y.data(), sample_m, acts.Y.dim(1), 0.0);
    res.tau_y = offdiag_percentile(probe.adjacency, sample_m, cfg.diagnose.tau_percentile);
    ActivityGraph g_y = build_graph(acts.Y.data(), sample_m, acts.Y.dim(1), res.tau_y);
    ActivityGraph probe_m = build_graph(acts.B.data(), sample_m, acts.B.dim(1), 0.0);
    res.tau_m = offdiag_percentile(probe_m.adjacency, sample_m, cfg.diagnose.tau_percentile);
    ActivityGraph g_m = build_graph(acts.B.data(), sample_m, acts.B.dim(1), res.tau_m);
    res.y_stats = connected_components(g_y);
    res.m_stats = connected_components(g_m);
    res.spanning = spanning_check(g_y, g_m);
    write_edges_csv(out_dir + "/edges_y.csv", g_y);
    write_edges_csv(out_dir + "/edges_m.csv", g_m);
  }

  json j;
  j["sample_m"] = res.sample_m;
  j["tau_percentile"] = cfg.diagnose.tau_percentile;
  j["graph_y"] = {{"tau", res.tau_y}, {"delta", res.y_stats.delta}, {"sizes", res.y_stats.sizes},
                  {"mean_degree", res.y_stats.mean_degree}};
  j["graph_m"] = {{"tau", res.tau_m}, {"delta", res.m_stats.delta}, {"sizes", res.m_stats.sizes},
                  {"mean_degree", res.m_stats.mean_degree}};
  j["spanning"] = {{"fraction", res.spanning.fraction},
                   {"exact_subset", res.spanning.exact_subset},
                   {"edges_checked", res.spanning.checked}};
  j["bounds"] = {{"np", trainer.gar().np}, {"np_ks", trainer.gar().np * trainer.gar().ks}};
  write_text_file(out_dir + "/graph_stats.json", j.dump(2) + "\n");
  return res;
}

// ablate: one model per transform set, shared seed and budget; ACC mean/std
// over repeats.
struct AblateRow {
  std::string set_name;
  double acc_mean = 0, acc_std = 0;
  std::vector<double> accs;
  std::string error;  // non-empty when this set's runs failed
};

inline std::vector<AblateRow> run_ablate(const RunConfig& base, const std::string& out_dir,
                                         const std::vector<std::vector<std::string>>& sets,
                                         int repeats) {
  std::filesystem::create_directories(out_dir);
  DatasetPair data = load_datasets(base);
  std::vector<AblateRow> rows;
  for (const auto& names : sets) {
    AblateRow row;
    for (std::size_t i = 0; i < names.size(); ++i) row.set_name += (i ? "+" : "") + names[i];
    // Failures abort this set only; completed rows are still written.
    try {
      for (int r = 0; r < repeats; ++r) {
        RunConfig cfg = base;
        cfg.transforms = names;
        cfg.seed = base.seed + static_cast<std::uint64_t>(r);
        validate_run_config(cfg);  // recheck np against the model width
        const std::string run_dir = out_dir + "/" + row.set_name + "_r" + std::to_string(r);
        auto trainer = run_train(cfg, run_dir, &data.train);
        const Dataset& eval_set = data.test.m > 0 ? data.test : data.train;
        ClusterReport rep = run_evaluate(cfg, *trainer, eval_set, run_dir);
        row.accs.push_back(rep.acc);
      }
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    if (!row.accs.empty()) {
      double mean = 0;
      for (double a : row.accs) mean += a;
      mean /= static_cast<double>(row.accs.size());
      double var = 0;
      for (double a : row.accs) var += (a - mean) * (a - mean);
      var /= static_cast<double>(row.accs.size());
      row.acc_mean = mean;
      row.acc_std = std::sqrt(var);
    }
    rows.push_back(std::move(row));
  }
  std::ostringstream csv;
  csv << "set,acc_mean,acc_std\n";
  char buf[128];
  for (const auto& r : rows) {
    if (!r.error.empty()) continue;
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g\n", r.set_name.c_str(), r.acc_mean, r.acc_std);
    csv << buf;
  }
  write_text_file(out_dir + "/ablation.csv", csv.str());
  return rows;
}

}  // namespace pscl
