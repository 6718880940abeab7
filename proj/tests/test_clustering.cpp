#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "pscl/clustering.hpp"
#include "pscl/dataset.hpp"

using namespace pscl;

TEST_CASE("kmeans: k=1 mean, separated pairs, k=m") {
  const std::vector<double> pts = {0, 0, 0, 1, 10, 10, 10, 11};
  KmeansResult one = kmeans(pts.data(), 4, 2, 1, 4, 7);
  CHECK(one.centroids.row(0)[0] == doctest::Approx(5.0));
  CHECK(one.centroids.row(0)[1] == doctest::Approx(5.5));

  KmeansResult two = kmeans(pts.data(), 4, 2, 2, 10, 7);
  CHECK(two.inertia == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(two.assignments[0] == two.assignments[1]);
  CHECK(two.assignments[2] == two.assignments[3]);
  CHECK(two.assignments[0] != two.assignments[2]);

  KmeansResult all = kmeans(pts.data(), 4, 2, 4, 10, 7);
  CHECK(all.inertia == doctest::Approx(0.0));
  CHECK_THROWS_AS(kmeans(pts.data(), 4, 2, 5, 1, 7), contract_error);
}

TEST_CASE("kmeans inertia is non-increasing across lloyd iterations") {
  Rng rng(3);
  std::vector<double> pts(200 * 3);
  for (auto& v : pts) v = rng.uniform(-5, 5);
  KmeansResult r = kmeans(pts.data(), 200, 3, 4, 3, 11);
  for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
    CHECK(r.inertia_history[i] <= r.inertia_history[i - 1] + 1e-9);
}

TEST_CASE("kmeans matches the exhaustive-partition optimum on small instances") {
  Rng rng(5);
  int hit = 0;
  const int trials = 50;
  for (int t = 0; t < trials; ++t) {
    const std::int64_t m = 4 + static_cast<std::int64_t>(rng.uniform_int(5));  // 4..8
    const std::int64_t k = 2 + static_cast<std::int64_t>(rng.uniform_int(2));  // 2..3
    std::vector<double> pts(static_cast<std::size_t>(m * 2));
    for (auto& v : pts) v = rng.uniform(-3, 3);
    const double opt = oracles::kmeans_optimum_exhaustive(pts, m, 2, k);
    KmeansResult r = kmeans(pts.data(), m, 2, k, 10, rng.next_u64());
    CHECK(r.inertia >= opt - 1e-9);
    if (r.inertia <= opt + 1e-9) ++hit;
  }
  CHECK(hit >= trials * 95 / 100);
}

TEST_CASE("clustering accuracy: identity, relabeling, worked example") {
  ClusterReport perfect = clustering_accuracy({0, 1, 2}, {0, 1, 2}, 3, 3);
  CHECK(perfect.acc == 1.0);

  ClusterReport relabeled = clustering_accuracy({2, 0, 1}, {0, 1, 2}, 3, 3);
  CHECK(relabeled.acc == 1.0);
  CHECK(relabeled.mapping[2] == 0);
  CHECK(relabeled.mapping[0] == 1);

  ClusterReport mixed = clustering_accuracy({0, 1, 1, 1}, {0, 0, 1, 1}, 2, 2);
  CHECK(mixed.acc == 0.75);
}

TEST_CASE("accuracy equals the exhaustive mapping search") {
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 1 + static_cast<int>(rng.uniform_int(6));
    const int n_classes = 1 + static_cast<int>(rng.uniform_int(6));
    const int m = 5 + static_cast<int>(rng.uniform_int(30));
    std::vector<int> assign(static_cast<std::size_t>(m)), truth(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      assign[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k)));
      truth[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n_classes)));
    }
    const double got = clustering_accuracy(assign, truth, k, n_classes).acc;
    const double want = oracles::acc_exhaustive(assign, truth, k, n_classes);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("accuracy is invariant to index permutations") {
  Rng rng(13);
  const int m = 40, k = 4, n_classes = 4;
  std::vector<int> assign(m), truth(m);
  for (int i = 0; i < m; ++i) {
    assign[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(k));
    truth[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(n_classes));
  }
  const double base = clustering_accuracy(assign, truth, k, n_classes).acc;
  const int cperm[4] = {2, 3, 1, 0}, lperm[4] = {1, 0, 3, 2};
  std::vector<int> assign2(m), truth2(m);
  for (int i = 0; i < m; ++i) {
    assign2[static_cast<std::size_t>(i)] = cperm[assign[static_cast<std::size_t>(i)]];
    truth2[static_cast<std::size_t>(i)] = lperm[truth[static_cast<std::size_t>(i)]];
  }
  CHECK(clustering_accuracy(assign2, truth, k, n_classes).acc == doctest::Approx(base));
  CHECK(clustering_accuracy(assign, truth2, k, n_classes).acc == doctest::Approx(base));
  CHECK(clustering_accuracy(assign2, truth2, k, n_classes).acc == doctest::Approx(base));
}

TEST_CASE("k=1 accuracy is the majority class frequency") {
  std::vector<int> truth = {0, 0, 0, 1, 1, 2};
  std::vector<int> assign(truth.size(), 0);
  CHECK(clustering_accuracy(assign, truth, 1, 3).acc == doctest::Approx(0.5));
}

TEST_CASE("unmapped clusters count as errors when k > n_classes") {
  // three clusters, two classes: one cluster must stay unmapped
  std::vector<int> assign = {0, 0, 1, 1, 2, 2};
  std::vector<int> truth = {0, 0, 1, 1, 0, 1};
  ClusterReport rep = clustering_accuracy(assign, truth, 3, 2);
  CHECK(rep.acc == doctest::Approx(4.0 / 6.0));
  int unmapped = 0;
  for (int mcls : rep.mapping)
    if (mcls < 0) ++unmapped;
  CHECK(unmapped == 1);
}

TEST_CASE("project_2d: 2-D input keeps distances, rank-1 collapses") {
  Rng rng(17);
  Matrix pts;
  pts.rows = 30;
  pts.cols = 2;
  pts.data.resize(60);
  for (auto& v : pts.data) v = rng.uniform(-2, 2);
  // center the input for a clean isometry comparison
  double mx = 0, my = 0;
  for (std::int64_t i = 0; i < 30; ++i) {
    mx += pts.row(i)[0];
    my += pts.row(i)[1];
  }
  for (std::int64_t i = 0; i < 30; ++i) {
    pts.row(i)[0] -= mx / 30;
    pts.row(i)[1] -= my / 30;
  }
  Matrix proj = project_2d(pts);
  for (std::int64_t i = 0; i < 30; ++i)
    for (std::int64_t j = i + 1; j < 30; ++j) {
      const double din = std::hypot(pts.row(i)[0] - pts.row(j)[0], pts.row(i)[1] - pts.row(j)[1]);
      const double dout = std::hypot(proj.row(i)[0] - proj.row(j)[0], proj.row(i)[1] - proj.row(j)[1]);
      CHECK(dout == doctest::Approx(din).epsilon(1e-9));
    }

  Matrix rank1;
  rank1.rows = 20;
  rank1.cols = 4;
  rank1.data.resize(80);
  for (std::int64_t i = 0; i < 20; ++i) {
    const double t = rng.uniform(-1, 1);
    for (std::int64_t j = 0; j < 4; ++j) rank1.row(i)[j] = t * (j + 1.0);
  }
  Matrix p1 = project_2d(rank1);
  double var2 = 0;
  for (std::int64_t i = 0; i < 20; ++i) var2 += p1.row(i)[1] * p1.row(i)[1];
  CHECK(var2 <= 1e-9);
}

TEST_CASE("project_2d maximizes captured variance (eigen oracle)") {
  Rng rng(19);
  Matrix pts;
  pts.rows = 100;
  pts.cols = 5;
  pts.data.resize(500);
  for (auto& v : pts.data) v = rng.uniform(-1, 1);

  Matrix proj = project_2d(pts);
  double captured = 0;
  for (double v : proj.data) captured += v * v;

  // oracle: top-2 eigenvalues of the covariance (times m) from Jacobi
  std::vector<double> mean(5, 0.0);
  for (std::int64_t i = 0; i < 100; ++i)
    for (std::int64_t j = 0; j < 5; ++j) mean[static_cast<std::size_t>(j)] += pts.row(i)[j];
  for (auto& v : mean) v /= 100;
  std::vector<double> cov(25, 0.0);
  for (std::int64_t i = 0; i < 100; ++i)
    for (std::int64_t a = 0; a < 5; ++a)
      for (std::int64_t b = 0; b < 5; ++b)
        cov[static_cast<std::size_t>(a * 5 + b)] += (pts.row(i)[a] - mean[static_cast<std::size_t>(a)]) *
                                                    (pts.row(i)[b] - mean[static_cast<std::size_t>(b)]);
  std::vector<double> evals, evecs;
  oracles::jacobi_eigen(cov, 5, evals, evecs);
  std::sort(evals.begin(), evals.end());
  const double best2 = evals[4] + evals[3];
  CHECK(captured == doctest::Approx(best2).epsilon(1e-6));
}

TEST_CASE("matrix container round-trips bit exactly") {
  Rng rng(23);
  Matrix mt;
  mt.rows = 7;
  mt.cols = 3;
  mt.data.resize(21);
  for (auto& v : mt.data) v = rng.uniform(-100, 100);
  const std::string path = std::string(PSCL_TEST_TMP) + "/matrix.bin";
  std::filesystem::create_directories(PSCL_TEST_TMP);
  write_matrix(path, mt);
  Matrix back = read_matrix(path);
  CHECK(back.rows == mt.rows);
  CHECK(back.cols == mt.cols);
  CHECK(back.data == mt.data);
}

TEST_CASE("the published architecture exposes a 2048-wide latent") {
  ModelSpec spec = ModelSpec::parse(
      "2*(32x3x3)-MP2x2-Drop(0.2)-2*(64x3x3)-MP2x2-Drop(0.3)-FC 2048-Drop(0.5)-FC 8*20");
  Rng rng(1);
  Network net(spec, {1, 28, 28}, rng);
  CHECK(net.latent_width() == 2048);
  CHECK(net.output_width() == 160);
}

TEST_CASE("extract_latent taps and reproducibility") {
  SyntheticSpec sp;
  sp.classes = 2;
  sp.image_size = 8;
  sp.noise = 0.1;
  sp.per_class = 10;
  Rng rng(29);
  Dataset d = make_synthetic(sp, rng);

  ModelSpec spec = ModelSpec::parse("1*(3x3x3)-MP2x2-FC 12-Drop(0.5)-FC 2*2");
  TransformSet set = parse_transform_set({"identity", "rot180"});
  GarConfig gar;
  gar.np = 2;
  gar.ks = 2;
  TrainConfig tc;
  tc.batch_size = 10;
  tc.epochs = 1;
  tc.seed = 77;
  Trainer t(spec, {1, 8, 8}, set, gar, tc);
  t.train_epoch(d.images());

  Matrix latent = extract_latent(t, d.images(), LatentTap::Latent);
  CHECK(latent.cols == 12);
  Matrix z = extract_latent(t, d.images(), LatentTap::PreSoftmax);
  CHECK(z.cols == 4);
  Matrix s = extract_latent(t, d.images(), LatentTap::Softmax);
  for (std::int64_t i = 0; i < s.rows; ++i) {
    double sum = 0;
    for (std::int64_t j = 0; j < s.cols; ++j) sum += s.row(i)[j];
    CHECK(std::fabs(sum - 1.0) <= 1e-12);
  }

  // identical inputs produce identical rows; repeated extraction is bit-equal
  Matrix again = extract_latent(t, d.images(), LatentTap::Latent);
  CHECK(again.data == latent.data);

  CHECK_THROWS_AS(parse_tap("bogus"), config_error);
}
