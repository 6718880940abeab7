#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pscl/clustering.hpp"
#include "pscl/dataset.hpp"
#include "pscl/errors.hpp"
#include "pscl/gar_config.hpp"
#include "pscl/trainer.hpp"
#include "pscl/transforms.hpp"

namespace pscl {

using json = nlohmann::json;

// One JSON document configures a whole run; the CLI only picks the command
// and may override single keys. Unknown keys are rejected so typos cannot
// silently fall back to defaults.

struct DatasetConfig {
  std::string kind = "synthetic";  // "synthetic" | "idx"
  SyntheticSpec synthetic;
  std::int64_t synthetic_test_per_class = 100;
  std::string train_images, train_labels, test_images, test_labels;
  std::int64_t subsample_train = 0;  // 0: whole split
  std::int64_t subsample_test = 0;
};

struct EvalConfig {
  std::int64_t k = 4;
  int restarts = 10;
  std::string tap = "latent";
};

struct DiagnoseConfig {
  std::int64_t sample = 500;
  double tau_percentile = 90.0;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "run";
  DatasetConfig dataset;
  std::string model;
  std::vector<std::string> transforms = {"identity", "rot180"};
  TransformDefaults transform_params;
  GarConfig gar;
  TrainConfig train;
  EvalConfig eval;
  DiagnoseConfig diagnose;

  std::int64_t np() const { return static_cast<std::int64_t>(transforms.size()); }
};

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw config_error("config: unknown key '" + where + it.key() + "'");
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig parse_run_config(const json& j) {
  RunConfig cfg;
  detail::reject_unknown_keys(j,
                              {"seed", "output_dir", "dataset", "model", "transforms",
                               "transform_params", "gar", "train", "eval", "diagnose"},
                              "");
  detail::get_if(j, "seed", cfg.seed);
  detail::get_if(j, "output_dir", cfg.output_dir);
  detail::get_if(j, "model", cfg.model);
  detail::get_if(j, "transforms", cfg.transforms);

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    detail::reject_unknown_keys(d,
                                {"kind", "synthetic", "train_images", "train_labels", "test_images",
                                 "test_labels", "subsample_train", "subsample_test"},
                                "dataset.");
    detail::get_if(d, "kind", cfg.dataset.kind);
    if (cfg.dataset.kind != "synthetic" && cfg.dataset.kind != "idx")
      throw config_error("config: dataset.kind must be 'synthetic' or 'idx'");
    if (d.contains("synthetic")) {
      const json& s = d.at("synthetic");
      detail::reject_unknown_keys(
          s,
          {"classes", "image_size", "prototype_seed", "noise", "class_distance",
           "variants_per_class", "variant_distance", "train_per_class", "test_per_class"},
          "dataset.synthetic.");
      detail::get_if(s, "classes", cfg.dataset.synthetic.classes);
      detail::get_if(s, "image_size", cfg.dataset.synthetic.image_size);
      detail::get_if(s, "prototype_seed", cfg.dataset.synthetic.prototype_seed);
      detail::get_if(s, "noise", cfg.dataset.synthetic.noise);
      detail::get_if(s, "class_distance", cfg.dataset.synthetic.class_distance);
      detail::get_if(s, "variants_per_class", cfg.dataset.synthetic.variants_per_class);
      detail::get_if(s, "variant_distance", cfg.dataset.synthetic.variant_distance);
      detail::get_if(s, "train_per_class", cfg.dataset.synthetic.per_class);
      detail::get_if(s, "test_per_class", cfg.dataset.synthetic_test_per_class);
    }
    detail::get_if(d, "train_images", cfg.dataset.train_images);
    detail::get_if(d, "train_labels", cfg.dataset.train_labels);
    detail::get_if(d, "test_images", cfg.dataset.test_images);
    detail::get_if(d, "test_labels", cfg.dataset.test_labels);
    detail::get_if(d, "subsample_train", cfg.dataset.subsample_train);
    detail::get_if(d, "subsample_test", cfg.dataset.subsample_test);
  }
  if (j.contains("transform_params")) {
    const json& t = j.at("transform_params");
    detail::reject_unknown_keys(
        t, {"scale_factor", "shear_factor", "translate_dx", "translate_dy", "pixperm_seed"},
        "transform_params.");
    detail::get_if(t, "scale_factor", cfg.transform_params.scale_factor);
    detail::get_if(t, "shear_factor", cfg.transform_params.shear_factor);
    detail::get_if(t, "translate_dx", cfg.transform_params.translate_dx);
    detail::get_if(t, "translate_dy", cfg.transform_params.translate_dy);
    detail::get_if(t, "pixperm_seed", cfg.transform_params.pixperm_seed);
  }
  if (j.contains("gar")) {
    const json& g = j.at("gar");
    detail::reject_unknown_keys(g, {"ks", "c_alpha", "c_beta", "c_frob", "eps"}, "gar.");
    detail::get_if(g, "ks", cfg.gar.ks);
    detail::get_if(g, "c_alpha", cfg.gar.c_alpha);
    detail::get_if(g, "c_beta", cfg.gar.c_beta);
    detail::get_if(g, "c_frob", cfg.gar.c_frob);
    detail::get_if(g, "eps", cfg.gar.eps);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    detail::reject_unknown_keys(
        t, {"batch_size", "epochs", "lr", "beta1", "beta2", "eps", "fixed_labels", "checkpoint_every"},
        "train.");
    detail::get_if(t, "batch_size", cfg.train.batch_size);
    detail::get_if(t, "epochs", cfg.train.epochs);
    detail::get_if(t, "lr", cfg.train.adam.lr);
    detail::get_if(t, "beta1", cfg.train.adam.beta1);
    detail::get_if(t, "beta2", cfg.train.adam.beta2);
    detail::get_if(t, "eps", cfg.train.adam.eps);
    detail::get_if(t, "fixed_labels", cfg.train.fixed_labels);
    detail::get_if(t, "checkpoint_every", cfg.train.checkpoint_every);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    detail::reject_unknown_keys(e, {"k", "restarts", "tap"}, "eval.");
    detail::get_if(e, "k", cfg.eval.k);
    detail::get_if(e, "restarts", cfg.eval.restarts);
    detail::get_if(e, "tap", cfg.eval.tap);
  }
  if (j.contains("diagnose")) {
    const json& dg = j.at("diagnose");
    detail::reject_unknown_keys(dg, {"sample", "tau_percentile"}, "diagnose.");
    detail::get_if(dg, "sample", cfg.diagnose.sample);
    detail::get_if(dg, "tau_percentile", cfg.diagnose.tau_percentile);
  }
  return cfg;
}

// Full document with every default resolved; re-running from this snapshot
// reproduces the run.
inline json run_config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["dataset"] = {{"kind", cfg.dataset.kind},
                  {"synthetic",
                   {{"classes", cfg.dataset.synthetic.classes},
                    {"image_size", cfg.dataset.synthetic.image_size},
                    {"prototype_seed", cfg.dataset.synthetic.prototype_seed},
                    {"noise", cfg.dataset.synthetic.noise},
                    {"class_distance", cfg.dataset.synthetic.class_distance},
                    {"variants_per_class", cfg.dataset.synthetic.variants_per_class},
                    {"variant_distance", cfg.dataset.synthetic.variant_distance},
                    {"train_per_class", cfg.dataset.synthetic.per_class},
                    {"test_per_class", cfg.dataset.synthetic_test_per_class}}},
                  {"train_images", cfg.dataset.train_images},
                  {"train_labels", cfg.dataset.train_labels},
                  {"test_images", cfg.dataset.test_images},
                  {"test_labels", cfg.dataset.test_labels},
                  {"subsample_train", cfg.dataset.subsample_train},
                  {"subsample_test", cfg.dataset.subsample_test}};
  j["model"] = cfg.model;
  j["transforms"] = cfg.transforms;
  j["transform_params"] = {{"scale_factor", cfg.transform_params.scale_factor},
                           {"shear_factor", cfg.transform_params.shear_factor},
                           {"translate_dx", cfg.transform_params.translate_dx},
                           {"translate_dy", cfg.transform_params.translate_dy},
                           {"pixperm_seed", cfg.transform_params.pixperm_seed}};
  j["gar"] = {{"ks", cfg.gar.ks},
              {"c_alpha", cfg.gar.c_alpha},
              {"c_beta", cfg.gar.c_beta},
              {"c_frob", cfg.gar.c_frob},
              {"eps", cfg.gar.eps}};
  j["train"] = {{"batch_size", cfg.train.batch_size},
                {"epochs", cfg.train.epochs},
                {"lr", cfg.train.adam.lr},
                {"beta1", cfg.train.adam.beta1},
                {"beta2", cfg.train.adam.beta2},
                {"eps", cfg.train.adam.eps},
                {"fixed_labels", cfg.train.fixed_labels},
                {"checkpoint_every", cfg.train.checkpoint_every}};
  j["eval"] = {{"k", cfg.eval.k}, {"restarts", cfg.eval.restarts}, {"tap", cfg.eval.tap}};
  j["diagnose"] = {{"sample", cfg.diagnose.sample}, {"tau_percentile", cfg.diagnose.tau_percentile}};
  return j;
}

// Dot-path override: --set train.epochs=5. The value is parsed as JSON when
// possible, else taken as a string.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw config_error("override '" + assignment + "' must look like key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  json* cur = &j;
  std::size_t pos = 0;
  while (true) {
    const auto dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (key.empty()) throw config_error("override '" + assignment + "': empty key segment");
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
      (*cur)[key] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    cur = &(*cur)[key];
    pos = dot + 1;
  }
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error(path + ": cannot open");
  json j = json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw config_error(path + ": invalid JSON");
  return j;
}

// Relative IDX paths resolve against $PSCL_DATA_ROOT when it is set.
inline std::string resolve_data_path(const std::string& path) {
  if (path.empty() || path.front() == '/') return path;
  const char* root = std::getenv("PSCL_DATA_ROOT");
  if (!root || !*root) return path;
  return std::string(root) + "/" + path;
}

// Cross-checks that only a whole document can catch: ACOL width vs transform
// count vs gar.ks, evaluation tap names, batch floor.
inline void validate_run_config(RunConfig& cfg) {
  if (cfg.model.empty()) throw config_error("config: model spec string is required");
  ModelSpec spec = ModelSpec::parse(cfg.model);
  TransformSet set = parse_transform_set(cfg.transforms, cfg.transform_params);
  cfg.gar.np = set.np();
  cfg.gar.validate();
  if (cfg.gar.ks < 2) throw config_error("config: gar.ks must be >= 2 for the modified terms");
  if (spec.np > 0 && spec.np != cfg.gar.np)
    throw config_error("config: model declares np = " + std::to_string(spec.np) + " but " +
                       std::to_string(cfg.gar.np) + " transforms are configured");
  if (spec.np > 0 && spec.ks != cfg.gar.ks)
    throw config_error("config: model declares ks = " + std::to_string(spec.ks) + " but gar.ks = " +
                       std::to_string(cfg.gar.ks));
  if (spec.output_units() != cfg.gar.np * cfg.gar.ks)
    throw config_error("config: model output width " + std::to_string(spec.output_units()) +
                       " != np*ks = " + std::to_string(cfg.gar.np * cfg.gar.ks));
  cfg.train.validate(cfg.gar.np);
  parse_tap(cfg.eval.tap);
  if (cfg.eval.k < 1) throw config_error("config: eval.k must be >= 1");
  if (cfg.eval.restarts < 1) throw config_error("config: eval.restarts must be >= 1");
  if (cfg.dataset.kind == "idx") {
    if (cfg.dataset.train_images.empty() || cfg.dataset.train_labels.empty())
      throw config_error("config: dataset.kind 'idx' requires train_images and train_labels");
  } else {
    cfg.dataset.synthetic.validate();
  }
}

inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  json j = load_json_file(path);
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig cfg = parse_run_config(j);
  validate_run_config(cfg);
  return cfg;
}

}  // namespace pscl
