#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <map>

#include "pscl/dataset.hpp"

using namespace pscl;

namespace {

std::string tmp_path(const std::string& name) {
  const std::string dir = std::string(PSCL_TEST_TMP);
  std::filesystem::create_directories(dir);
  return dir + "/" + name;
}

template <typename V>
constexpr bool view_has_label_access = requires(V v) { v.labels_for_eval(); } || requires(V v) { v.labels; };

}  // namespace

TEST_CASE("idx round-trip on a hand-built fixture") {
  std::vector<std::uint8_t> img = {0, 255, 17, 128, 64, 1, 2, 3};  // 2 images of 2x2
  std::vector<std::uint8_t> lab = {3, 9};
  const std::string ip = tmp_path("fixture_images.idx"), lp = tmp_path("fixture_labels.idx");
  write_idx_images(ip, img, 2, 2, 2);
  write_idx_labels(lp, lab);

  Dataset d = load_idx(ip, lp);
  CHECK(d.m == 2);
  CHECK(d.h == 2);
  CHECK(d.w == 2);
  CHECK(d.pixels[0] == 0.0);
  CHECK(d.pixels[1] == 1.0);
  CHECK(d.pixels[2] == doctest::Approx(17.0 / 255.0));
  CHECK(d.labels_for_eval() == std::vector<int>{3, 9});

  // normalization preserves ordering and maps {0,255} -> {0,1}
  for (std::size_t i = 0; i + 1 < img.size(); ++i)
    if (img[i] < img[i + 1]) CHECK(d.pixels[i] < d.pixels[i + 1]);
}

TEST_CASE("idx write-read is bit exact on random fixtures") {
  Rng rng(2025);
  for (int trial = 0; trial < 10; ++trial) {
    const std::int64_t m = 1 + static_cast<std::int64_t>(rng.uniform_int(5));
    const std::int64_t h = 2 + static_cast<std::int64_t>(rng.uniform_int(6));
    const std::int64_t w = 2 + static_cast<std::int64_t>(rng.uniform_int(6));
    std::vector<std::uint8_t> img(static_cast<std::size_t>(m * h * w));
    for (auto& v : img) v = static_cast<std::uint8_t>(rng.uniform_int(256));
    std::vector<std::uint8_t> lab(static_cast<std::size_t>(m));
    for (auto& v : lab) v = static_cast<std::uint8_t>(rng.uniform_int(10));
    const std::string ip = tmp_path("rt_images.idx"), lp = tmp_path("rt_labels.idx");
    write_idx_images(ip, img, m, h, w);
    write_idx_labels(lp, lab);
    std::int64_t rm, rh, rw, lm;
    CHECK(load_idx_images_raw(ip, rm, rh, rw) == img);
    CHECK(load_idx_labels_raw(lp, lm) == lab);
    CHECK(rm == m);
    CHECK(lm == m);
  }
}

TEST_CASE("idx errors: bad magic, truncation, count mismatch") {
  const std::string path = tmp_path("bad.idx");
  {
    std::ofstream out(path, std::ios::binary);
    const char junk[] = "\x00\x00\x08\x77junkjunk";
    out.write(junk, sizeof junk - 1);
  }
  std::int64_t m, h, w;
  CHECK_THROWS_WITH_AS(load_idx_images_raw(path, m, h, w), doctest::Contains("bad image magic"),
                       io_error);

  // truncated pixel payload
  {
    std::ofstream out(path, std::ios::binary);
    const unsigned char hdr[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 7};
    out.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
  }
  CHECK_THROWS_WITH_AS(load_idx_images_raw(path, m, h, w), doctest::Contains("truncated"), io_error);

  // label count mismatch
  const std::string ip = tmp_path("cm_images.idx"), lp = tmp_path("cm_labels.idx");
  write_idx_images(ip, std::vector<std::uint8_t>(8, 1), 2, 2, 2);
  write_idx_labels(lp, {1, 2, 3});
  CHECK_THROWS_WITH_AS(load_idx(ip, lp), doctest::Contains("label count"), io_error);
}

TEST_CASE("synthetic: zero noise reproduces prototypes, histogram uniform") {
  SyntheticSpec spec;
  spec.classes = 4;
  spec.image_size = 16;
  spec.noise = 0.0;
  spec.per_class = 250;
  Rng rng(3);
  Dataset d = make_synthetic(spec, rng);
  CHECK(d.m == 1000);
  CHECK(d.h == 16);

  const auto protos = synthetic_prototypes(spec);
  const auto& labels = d.labels_for_eval();
  std::map<int, int> hist;
  for (std::int64_t i = 0; i < d.m; ++i) {
    ++hist[labels[static_cast<std::size_t>(i)]];
    const auto& p = protos[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    for (std::int64_t j = 0; j < 256; ++j)
      CHECK(d.pixels[static_cast<std::size_t>(i * 256 + j)] == p[static_cast<std::size_t>(j)]);
  }
  for (const auto& [cls, count] : hist) CHECK(count == 250);
}

TEST_CASE("synthetic prototypes are rot180-asymmetric in >= 10% of pixels") {
  SyntheticSpec spec;
  spec.classes = 6;
  spec.image_size = 16;
  const auto protos = synthetic_prototypes(spec);
  Transform rot = make_transform("rot180");
  for (const auto& p : protos) {
    std::vector<double> r(p.size());
    apply_transform(p.data(), r.data(), 1, 16, 16, rot);
    std::int64_t diff = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
      if (p[i] != r[i]) ++diff;
    CHECK(diff * 10 >= static_cast<std::int64_t>(p.size()));
  }
}

TEST_CASE("synthetic train/test share prototypes but not samples") {
  SyntheticSpec spec;
  spec.classes = 3;
  spec.image_size = 8;
  spec.noise = 0.2;
  spec.per_class = 10;
  Rng a(1), b(2);
  Dataset train = make_synthetic(spec, a, "train");
  Dataset test = make_synthetic(spec, b, "test");
  CHECK(train.pixels != test.pixels);
  // zero-noise versions coincide because prototypes derive from the spec seed
  spec.noise = 0.0;
  Rng c(1), d2(2);
  CHECK(make_synthetic(spec, c).pixels == make_synthetic(spec, d2).pixels);
}

TEST_CASE("subsample: identity size, stratified counts, determinism") {
  SyntheticSpec spec;
  spec.classes = 4;
  spec.image_size = 8;
  spec.noise = 0.1;
  spec.per_class = 50;
  Rng rng(5);
  Dataset d = make_synthetic(spec, rng);

  Dataset same = subsample(d, d.m, 9);
  CHECK(same.m == d.m);
  std::map<int, int> hist_same;
  for (int l : same.labels_for_eval()) ++hist_same[l];
  for (const auto& [cls, count] : hist_same) CHECK(count == 50);

  Dataset sub = subsample(d, 30, 9);
  std::map<int, int> hist;
  for (int l : sub.labels_for_eval()) ++hist[l];
  // 30 over 4 classes: 8,8,7,7
  int total = 0;
  for (const auto& [cls, count] : hist) {
    CHECK(count >= 7);
    CHECK(count <= 8);
    total += count;
  }
  CHECK(total == 30);

  Dataset sub2 = subsample(d, 30, 9);
  CHECK(sub.pixels == sub2.pixels);
  CHECK_THROWS_AS(subsample(d, d.m + 1, 9), contract_error);
}

TEST_CASE("trainer-facing view exposes no labels and audits reads") {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.image_size = 4;
  spec.per_class = 5;
  Rng rng(8);
  Dataset d = make_synthetic(spec, rng);
  CHECK(d.label_reads() == 0);
  ImagesView view = d.images();
  CHECK(view.m == d.m);
  // the view type carries pixels and geometry only; labels require the
  // audited accessor on the dataset itself
  CHECK_FALSE(view_has_label_access<ImagesView>);
  CHECK(d.label_reads() == 0);
  (void)d.labels_for_eval();
  CHECK(d.label_reads() == 1);
}

TEST_CASE("usps text conversion produces loadable idx with pinned checksum") {
  const std::string txt = tmp_path("usps_sample.txt");
  {
    std::ofstream out(txt);
    Rng rng(77);
    for (int ex = 0; ex < 3; ++ex) {
      out << ex << ".0000";
      for (int i = 0; i < 256; ++i) out << " " << (rng.uniform(-1, 1));
      out << "\n";
    }
  }
  const std::string ip = tmp_path("usps_images.idx"), lp = tmp_path("usps_labels.idx");
  const std::uint64_t checksum1 = convert_usps_text(txt, ip, lp);
  const std::uint64_t checksum2 = convert_usps_text(txt, ip, lp);
  CHECK(checksum1 == checksum2);  // conversion is reproducible, checksum pinnable
  Dataset d = load_idx(ip, lp, "usps");
  CHECK(d.m == 3);
  CHECK(d.h == 16);
  CHECK(d.w == 16);
  CHECK(d.labels_for_eval() == std::vector<int>{0, 1, 2});
  for (double v : d.pixels) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}
