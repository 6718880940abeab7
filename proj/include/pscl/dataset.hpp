#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "pscl/errors.hpp"
#include "pscl/rng.hpp"
#include "pscl/transforms.hpp"

namespace pscl {

// Images in [0,1] plus ground-truth labels. Labels exist for evaluation only;
// training code receives an ImagesView, which has no label member, and every
// label read is counted so tests can audit that the trainer never looked.
struct Dataset {
  std::string name;
  std::string split;  // "train" / "test"
  std::int64_t m = 0, c = 0, h = 0, w = 0;
  std::vector<double> pixels;  // m * c * h * w, row-major

  ImagesView images() const { return ImagesView{pixels.data(), m, c, h, w}; }

  bool has_labels() const { return !labels_.empty(); }
  std::size_t label_reads() const { return label_reads_; }

  const std::vector<int>& labels_for_eval() const {
    ++label_reads_;
    return labels_;
  }

  void set_labels(std::vector<int> labels) { labels_ = std::move(labels); }

 private:
  std::vector<int> labels_;
  mutable std::size_t label_reads_ = 0;
};

// ---------------------------------------------------------------------------
// IDX container (big-endian, ubyte payload)
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_be32(std::ifstream& in, const std::string& path, std::int64_t& offset) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (in.gcount() != 4)
    throw io_error(path + ": truncated at byte offset " + std::to_string(offset));
  offset += 4;
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) | (std::uint32_t(buf[2]) << 8) |
         std::uint32_t(buf[3]);
}

inline void write_be32(std::ofstream& out, std::uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

}  // namespace detail

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;  // ubyte, 3 dims
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;  // ubyte, 1 dim

inline std::vector<std::uint8_t> load_idx_images_raw(const std::string& path, std::int64_t& m,
                                                     std::int64_t& h, std::int64_t& w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(path + ": cannot open");
  std::int64_t offset = 0;
  const std::uint32_t magic = detail::read_be32(in, path, offset);
  if (magic != kIdxImagesMagic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "0x%08X", magic);
    throw io_error(path + ": bad image magic " + buf + " at byte offset 0 (expected 0x00000803)");
  }
  m = detail::read_be32(in, path, offset);
  h = detail::read_be32(in, path, offset);
  w = detail::read_be32(in, path, offset);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(m * h * w));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw io_error(path + ": truncated at byte offset " + std::to_string(offset + in.gcount()) +
                   " (expected " + std::to_string(m * h * w) + " pixel bytes)");
  return bytes;
}

inline std::vector<std::uint8_t> load_idx_labels_raw(const std::string& path, std::int64_t& m) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(path + ": cannot open");
  std::int64_t offset = 0;
  const std::uint32_t magic = detail::read_be32(in, path, offset);
  if (magic != kIdxLabelsMagic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "0x%08X", magic);
    throw io_error(path + ": bad label magic " + buf + " at byte offset 0 (expected 0x00000801)");
  }
  m = detail::read_be32(in, path, offset);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(m));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw io_error(path + ": truncated at byte offset " + std::to_string(offset + in.gcount()));
  return bytes;
}

// Parses an images/labels pair, validates the counts match, scales bytes to
// [0,1] by /255.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        const std::string& name = "idx", const std::string& split = "train") {
  std::int64_t m = 0, h = 0, w = 0, lm = 0;
  const auto img = load_idx_images_raw(images_path, m, h, w);
  const auto lab = load_idx_labels_raw(labels_path, lm);
  if (m != lm)
    throw io_error(labels_path + ": label count " + std::to_string(lm) + " != image count " +
                   std::to_string(m));
  Dataset d;
  d.name = name;
  d.split = split;
  d.m = m;
  d.c = 1;
  d.h = h;
  d.w = w;
  d.pixels.resize(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) d.pixels[i] = static_cast<double>(img[i]) / 255.0;
  std::vector<int> labels(lab.begin(), lab.end());
  d.set_labels(std::move(labels));
  return d;
}

inline void write_idx_images(const std::string& path, const std::vector<std::uint8_t>& bytes,
                             std::int64_t m, std::int64_t h, std::int64_t w) {
  check_contract(static_cast<std::int64_t>(bytes.size()) == m * h * w, "write_idx_images: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error(path + ": cannot open for writing");
  detail::write_be32(out, kIdxImagesMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(m));
  detail::write_be32(out, static_cast<std::uint32_t>(h));
  detail::write_be32(out, static_cast<std::uint32_t>(w));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw io_error(path + ": write failed");
}

inline void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error(path + ": cannot open for writing");
  detail::write_be32(out, kIdxLabelsMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  if (!out) throw io_error(path + ": write failed");
}

// ---------------------------------------------------------------------------
// Synthetic desk-scale dataset
// ---------------------------------------------------------------------------

// k binary prototype images plus per-sample Gaussian noise. Prototypes are
// drawn from prototype_seed alone, so a train/test pair built with different
// sample rngs shares them. Each prototype is rejected until its 180-degree
// rotation differs in at least 10% of pixels, keeping the rotation pretext
// informative.
//
// class_distance controls how separable the classes are in pixel space:
// 1.0 draws fully independent prototypes (pairwise Hamming ~50%); smaller
// values flip only that fraction of a shared base pattern per class, which
// weakens the raw-pixel class signal until only a learned representation can
// recover it.
//
// variants_per_class gives each class style substructure the way real image
// classes have it: variant prototypes are the class prototype with a
// variant_distance fraction of pixels flipped, so sub-clusters of one class
// stay much closer to each other than to any other class.
struct SyntheticSpec {
  std::int64_t classes = 4;
  std::int64_t image_size = 16;
  std::uint64_t prototype_seed = 7;
  double noise = 0.25;
  double class_distance = 1.0;
  std::int64_t variants_per_class = 1;
  double variant_distance = 0.1;
  std::int64_t per_class = 250;

  void validate() const {
    if (classes < 2) throw config_error("synthetic: classes must be >= 2");
    if (noise < 0) throw config_error("synthetic: noise must be >= 0");
    if (image_size < 2) throw config_error("synthetic: image_size must be >= 2");
    if (per_class < 1) throw config_error("synthetic: per_class must be >= 1");
    if (!(class_distance > 0.0) || class_distance > 1.0)
      throw config_error("synthetic: class_distance must be in (0, 1]");
    if (variants_per_class < 1) throw config_error("synthetic: variants_per_class must be >= 1");
    if (variant_distance < 0.0 || variant_distance > 0.5)
      throw config_error("synthetic: variant_distance must be in [0, 0.5]");
  }
};

inline std::vector<std::vector<double>> synthetic_prototypes(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.prototype_seed);
  const std::int64_t hw = spec.image_size * spec.image_size;
  Transform rot180 = make_transform("rot180");
  std::vector<double> rotated(static_cast<std::size_t>(hw));

  auto rot180_diff = [&](const std::vector<double>& p) {
    apply_transform(p.data(), rotated.data(), 1, spec.image_size, spec.image_size, rot180);
    std::int64_t diff = 0;
    for (std::int64_t i = 0; i < hw; ++i)
      if (p[static_cast<std::size_t>(i)] != rotated[static_cast<std::size_t>(i)]) ++diff;
    return diff;
  };

  std::vector<double> base(static_cast<std::size_t>(hw));
  if (spec.class_distance < 1.0) {
    do {
      for (auto& v : base) v = rng.uniform01() < 0.5 ? 0.0 : 1.0;
    } while (rot180_diff(base) * 10 < hw);
  }

  std::vector<std::vector<double>> protos;
  while (static_cast<std::int64_t>(protos.size()) < spec.classes) {
    std::vector<double> p(static_cast<std::size_t>(hw));
    if (spec.class_distance < 1.0) {
      p = base;
      for (std::int64_t i = 0; i < hw; ++i)
        if (rng.uniform01() < spec.class_distance)
          p[static_cast<std::size_t>(i)] = 1.0 - p[static_cast<std::size_t>(i)];
    } else {
      for (auto& v : p) v = rng.uniform01() < 0.5 ? 0.0 : 1.0;
    }
    if (rot180_diff(p) * 10 < hw) continue;  // reject near-symmetric draws
    protos.push_back(std::move(p));
  }
  return protos;
}

// classes * variants_per_class prototypes; proto of (class c, variant v) is
// stored at index c * variants_per_class + v. Variant 0 is the class
// prototype itself.
inline std::vector<std::vector<double>> synthetic_variant_prototypes(const SyntheticSpec& spec) {
  const auto class_protos = synthetic_prototypes(spec);
  if (spec.variants_per_class == 1) return class_protos;
  const std::int64_t hw = spec.image_size * spec.image_size;
  Rng rng(spec.prototype_seed ^ 0x5A5A5A5Aull);
  Transform rot180 = make_transform("rot180");
  std::vector<double> rotated(static_cast<std::size_t>(hw));
  std::vector<std::vector<double>> out;
  for (const auto& proto : class_protos) {
    out.push_back(proto);
    for (std::int64_t v = 1; v < spec.variants_per_class; ++v) {
      while (true) {
        std::vector<double> p = proto;
        for (std::int64_t i = 0; i < hw; ++i)
          if (rng.uniform01() < spec.variant_distance)
            p[static_cast<std::size_t>(i)] = 1.0 - p[static_cast<std::size_t>(i)];
        apply_transform(p.data(), rotated.data(), 1, spec.image_size, spec.image_size, rot180);
        std::int64_t diff = 0;
        for (std::int64_t i = 0; i < hw; ++i)
          if (p[static_cast<std::size_t>(i)] != rotated[static_cast<std::size_t>(i)]) ++diff;
        if (diff * 10 < hw) continue;
        out.push_back(std::move(p));
        break;
      }
    }
  }
  return out;
}

inline Dataset make_synthetic(const SyntheticSpec& spec, Rng& sample_rng,
                              const std::string& split = "train") {
  const auto protos = synthetic_variant_prototypes(spec);
  const std::int64_t hw = spec.image_size * spec.image_size;
  Dataset d;
  d.name = "synthetic";
  d.split = split;
  d.m = spec.classes * spec.per_class;
  d.c = 1;
  d.h = d.w = spec.image_size;
  d.pixels.resize(static_cast<std::size_t>(d.m * hw));
  std::vector<int> labels(static_cast<std::size_t>(d.m));
  std::int64_t row = 0;
  for (std::int64_t cls = 0; cls < spec.classes; ++cls) {
    for (std::int64_t s = 0; s < spec.per_class; ++s, ++row) {
      double* px = d.pixels.data() + row * hw;
      const std::int64_t variant = s % spec.variants_per_class;
      const auto& proto = protos[static_cast<std::size_t>(cls * spec.variants_per_class + variant)];
      for (std::int64_t i = 0; i < hw; ++i) {
        double v = proto[static_cast<std::size_t>(i)] + spec.noise * sample_rng.normal();
        px[i] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      }
      labels[static_cast<std::size_t>(row)] = static_cast<int>(cls);
    }
  }
  d.set_labels(std::move(labels));
  return d;
}

// ---------------------------------------------------------------------------
// Subsampling
// ---------------------------------------------------------------------------

// Labeled datasets are stratified to equal per-class counts (remainder spread
// over the lowest class indices); unlabeled ones get a plain random subset.
// Deterministic for a fixed seed.
inline Dataset subsample(const Dataset& d, std::int64_t m_sub, std::uint64_t seed) {
  check_contract(m_sub <= d.m, "subsample: requested " + std::to_string(m_sub) + " of " +
                                   std::to_string(d.m) + " examples");
  Rng rng(seed);
  std::vector<std::int64_t> chosen;
  if (d.has_labels()) {
    const auto& labels = d.labels_for_eval();
    std::map<int, std::vector<std::int64_t>> per_class;
    for (std::int64_t i = 0; i < d.m; ++i) per_class[labels[static_cast<std::size_t>(i)]].push_back(i);
    const auto k = static_cast<std::int64_t>(per_class.size());
    const std::int64_t base = m_sub / k, rem = m_sub % k;
    std::int64_t ci = 0;
    for (auto& [cls, idx] : per_class) {
      const std::int64_t want = base + (ci < rem ? 1 : 0);
      if (want > static_cast<std::int64_t>(idx.size()))
        throw contract_error("subsample: class " + std::to_string(cls) + " has only " +
                             std::to_string(idx.size()) + " examples, need " + std::to_string(want));
      rng.shuffle(idx.data(), idx.size());
      chosen.insert(chosen.end(), idx.begin(), idx.begin() + want);
      ++ci;
    }
  } else {
    std::vector<std::int64_t> all(static_cast<std::size_t>(d.m));
    std::iota(all.begin(), all.end(), 0);
    rng.shuffle(all.data(), all.size());
    chosen.assign(all.begin(), all.begin() + m_sub);
  }
  rng.shuffle(chosen.data(), chosen.size());

  Dataset out;
  out.name = d.name;
  out.split = d.split;
  out.m = m_sub;
  out.c = d.c;
  out.h = d.h;
  out.w = d.w;
  const std::int64_t isz = d.c * d.h * d.w;
  out.pixels.resize(static_cast<std::size_t>(m_sub * isz));
  std::vector<int> labels;
  const std::vector<int>* src_labels = d.has_labels() ? &d.labels_for_eval() : nullptr;
  for (std::int64_t i = 0; i < m_sub; ++i) {
    const std::int64_t src = chosen[static_cast<std::size_t>(i)];
    std::copy(d.pixels.begin() + src * isz, d.pixels.begin() + (src + 1) * isz,
              out.pixels.begin() + i * isz);
    if (src_labels) labels.push_back((*src_labels)[static_cast<std::size_t>(src)]);
  }
  if (src_labels) out.set_labels(std::move(labels));
  return out;
}

// ---------------------------------------------------------------------------
// USPS text conversion ("zip" format: label then 256 values in [-1,1] per line)
// ---------------------------------------------------------------------------

// Converts to the same IDX container MNIST ships in: 16x16 ubyte images via
// (v+1)/2*255 rounding. Returns an FNV-1a 64 checksum over both output files
// so a conversion can be pinned and compared.
inline std::uint64_t convert_usps_text(const std::string& text_path, const std::string& images_out,
                                       const std::string& labels_out) {
  std::ifstream in(text_path);
  if (!in) throw io_error(text_path + ": cannot open");
  std::vector<std::uint8_t> pixels, labels;
  double label;
  while (in >> label) {
    const int li = static_cast<int>(label);
    if (li < 0 || li > 9) throw io_error(text_path + ": label " + std::to_string(label) + " out of range");
    labels.push_back(static_cast<std::uint8_t>(li));
    for (int i = 0; i < 256; ++i) {
      double v;
      if (!(in >> v)) throw io_error(text_path + ": truncated pixel row at example " +
                                     std::to_string(labels.size() - 1));
      double scaled = (v + 1.0) / 2.0 * 255.0;
      if (scaled < 0) scaled = 0;
      if (scaled > 255) scaled = 255;
      pixels.push_back(static_cast<std::uint8_t>(std::lround(scaled)));
    }
  }
  if (labels.empty()) throw io_error(text_path + ": no examples found");
  write_idx_images(images_out, pixels, static_cast<std::int64_t>(labels.size()), 16, 16);
  write_idx_labels(labels_out, labels);

  auto hash_file = [](const std::string& path, std::uint64_t h) {
    std::ifstream f(path, std::ios::binary);
    char buf[4096];
    while (f.read(buf, sizeof buf) || f.gcount() > 0) {
      for (std::streamsize i = 0; i < f.gcount(); ++i) {
        h ^= static_cast<unsigned char>(buf[i]);
        h *= 0x100000001B3ull;
      }
      if (!f) break;
    }
    return h;
  };
  std::uint64_t h = 0xCBF29CE484222325ull;
  h = hash_file(images_out, h);
  h = hash_file(labels_out, h);
  return h;
}

}  // namespace pscl
