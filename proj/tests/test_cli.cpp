// Drives the built binary end to end: artifact layout, exit codes, and the
// snapshot-rerun determinism contract.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "pscl/config.hpp"

namespace {

namespace fs = std::filesystem;

std::string tmp_dir(const std::string& name) {
  const std::string dir = std::string(PSCL_TEST_TMP) + "/" + name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PSCL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// trainlog minus the wall-time column
std::string strip_seconds(const std::string& csv) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    const auto last_comma = line.rfind(',');
    out << line.substr(0, last_comma) << "\n";
  }
  return out.str();
}

std::string write_smoke_config(const std::string& dir, int epochs = 3) {
  pscl::json j = {
      {"seed", 11},
      {"output_dir", dir + "/out"},
      {"model", "1*(4x3x3)-MP2x2-FC 16-FC 2*4"},
      {"transforms", {"identity", "rot180"}},
      {"gar", {{"ks", 4}}},
      {"train", {{"batch_size", 20}, {"epochs", epochs}}},
      {"eval", {{"k", 4}, {"restarts", 4}}},
      {"diagnose", {{"sample", 40}, {"tau_percentile", 90.0}}},
      {"dataset",
       {{"kind", "synthetic"},
        {"synthetic",
         {{"classes", 4}, {"image_size", 8}, {"noise", 0.2}, {"train_per_class", 15}, {"test_per_class", 10}}}}},
  };
  const std::string path = dir + "/config.json";
  std::ofstream out(path);
  out << j.dump(2);
  return path;
}

}  // namespace

TEST_CASE("train writes checkpoint, log, and config snapshot") {
  const std::string dir = tmp_dir("cli_train");
  const std::string cfg = write_smoke_config(dir, 4);
  CHECK(run_cli("train -c " + cfg + " --set train.checkpoint_every=2") == 0);
  CHECK(fs::exists(dir + "/out/checkpoint.bin"));
  CHECK(fs::exists(dir + "/out/checkpoint_epoch2.bin"));
  CHECK(fs::exists(dir + "/out/checkpoint_epoch4.bin"));
  CHECK(fs::exists(dir + "/out/trainlog.csv"));
  CHECK(fs::exists(dir + "/out/config.json"));
  const std::string log = slurp(dir + "/out/trainlog.csv");
  CHECK(log.rfind("epoch,loss,ce,affinity,balance,frob,pseudo_acc,seconds", 0) == 0);
}

TEST_CASE("exit codes: 2 config, 3 nan abort, 4 io") {
  const std::string dir = tmp_dir("cli_err");
  const std::string cfg = write_smoke_config(dir);
  CHECK(run_cli("train -c " + cfg + " --set transforms=[\\\"identity\\\",\\\"rot45\\\"]") == 2);
  CHECK(run_cli("train -c " + dir + "/missing.json") == 4);
  CHECK(run_cli("train -c " + cfg + " --set gar.ks=3") == 2);  // model/ks mismatch
  // an absurd learning rate overflows the activations into non-finite loss
  CHECK(run_cli("train -c " + cfg + " --set train.lr=1e154") == 3);
}

TEST_CASE("rerunning the same config and seed is bit-identical") {
  const std::string dir = tmp_dir("cli_repro");
  const std::string cfg = write_smoke_config(dir);
  REQUIRE(run_cli("train -c " + cfg) == 0);
  const std::string log1 = slurp(dir + "/out/trainlog.csv");
  const std::string snapshot = dir + "/out/config.json";

  // rerun from the resolved snapshot into a fresh directory
  const std::string dir2 = dir + "/rerun";
  REQUIRE(run_cli("train -c " + snapshot + " -o " + dir2) == 0);
  const std::string log2 = slurp(dir2 + "/trainlog.csv");
  CHECK(strip_seconds(log1) == strip_seconds(log2));

  REQUIRE(run_cli("evaluate -c " + cfg + " --checkpoint " + dir + "/out/checkpoint.bin -o " + dir +
                  "/eval1") == 0);
  REQUIRE(run_cli("evaluate -c " + cfg + " --checkpoint " + dir + "/out/checkpoint.bin -o " + dir +
                  "/eval2") == 0);
  CHECK(slurp(dir + "/eval1/report.json") == slurp(dir + "/eval2/report.json"));
}

TEST_CASE("evaluate, diagnose, export-latent produce their artifacts") {
  const std::string dir = tmp_dir("cli_arts");
  const std::string cfg = write_smoke_config(dir);
  REQUIRE(run_cli("train -c " + cfg) == 0);
  const std::string ckpt = dir + "/out/checkpoint.bin";

  CHECK(run_cli("evaluate -c " + cfg + " --checkpoint " + ckpt + " -o " + dir + "/eval") == 0);
  CHECK(fs::exists(dir + "/eval/report.json"));
  CHECK(fs::exists(dir + "/eval/report_projection.csv"));
  const pscl::json rep = pscl::load_json_file(dir + "/eval/report.json");
  CHECK(rep.contains("acc"));
  CHECK(rep.contains("mapping"));
  CHECK(rep.contains("contingency"));
  CHECK(rep.contains("inertia"));
  CHECK(rep.contains("seed"));
  CHECK(rep["k"] == 4);

  CHECK(run_cli("diagnose -c " + cfg + " --checkpoint " + ckpt + " -o " + dir + "/diag") == 0);
  CHECK(fs::exists(dir + "/diag/graph_stats.json"));
  CHECK(fs::exists(dir + "/diag/edges_y.csv"));
  CHECK(fs::exists(dir + "/diag/edges_m.csv"));

  CHECK(run_cli("export-latent -c " + cfg + " --checkpoint " + ckpt + " --csv -o " + dir + "/latent") == 0);
  CHECK(fs::exists(dir + "/latent/latent_latent.bin"));
  CHECK(fs::exists(dir + "/latent/latent_latent.csv"));
  pscl::Matrix mt = pscl::read_matrix(dir + "/latent/latent_latent.bin");
  CHECK(mt.rows == 40);  // 4 classes x 10 test examples
  CHECK(mt.cols == 16);

  // every tap point is evaluable; softmax vs latent reports land side by side
  CHECK(run_cli("evaluate -c " + cfg + " --set eval.tap=softmax --checkpoint " + ckpt + " -o " + dir +
                "/eval_s") == 0);
  const pscl::json rep_s = pscl::load_json_file(dir + "/eval_s/report.json");
  CHECK(rep_s.contains("acc"));
  CHECK(run_cli("export-latent -c " + cfg + " --set eval.tap=presoftmax --checkpoint " + ckpt +
                " -o " + dir + "/latent_z") == 0);
  pscl::Matrix z = pscl::read_matrix(dir + "/latent_z/latent_presoftmax.bin");
  CHECK(z.cols == 8);  // np * ks of the smoke model
}

TEST_CASE("ablate emits one csv row per transform set") {
  const std::string dir = tmp_dir("cli_ablate");
  const std::string cfg = write_smoke_config(dir, 2);
  CHECK(run_cli("ablate -c " + cfg + " --transform-set identity,rot180 --transform-set identity,fliph "
                "--repeats 2") == 0);
  const std::string csv = slurp(dir + "/out/ablation.csv");
  CHECK(csv.rfind("set,acc_mean,acc_std", 0) == 0);
  CHECK(csv.find("identity+rot180,") != std::string::npos);
  CHECK(csv.find("identity+fliph,") != std::string::npos);
}

TEST_CASE("convert-usps round-trips through idx") {
  const std::string dir = tmp_dir("cli_usps");
  const std::string txt = dir + "/zip.txt";
  {
    std::ofstream out(txt);
    pscl::Rng rng(4);
    for (int ex = 0; ex < 4; ++ex) {
      out << (ex % 10) << ".0000";
      for (int i = 0; i < 256; ++i) out << " " << rng.uniform(-1, 1);
      out << "\n";
    }
  }
  CHECK(run_cli("convert-usps " + txt + " " + dir + "/img.idx " + dir + "/lab.idx") == 0);
  pscl::Dataset d = pscl::load_idx(dir + "/img.idx", dir + "/lab.idx", "usps");
  CHECK(d.m == 4);
  CHECK(d.h == 16);
}
