#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pscl/acol.hpp"
#include "pscl/dataset.hpp"
#include "pscl/gar.hpp"
#include "pscl/layers.hpp"
#include "pscl/rng.hpp"
#include "pscl/tensor.hpp"
#include "pscl/transforms.hpp"

namespace pscl {

// Mean over examples of -log(y[i, label_i] + eps). y rows come from the
// pooled head, so they are already distributions.
inline Tensor supervised_loss(const Tensor& y, const std::vector<int>& labels) {
  constexpr double kLogGuard = 1e-12;
  Tensor picked = pick_per_row(y, labels);
  return scalar_mul(mean_all(log_elem(add_const(picked, kLogGuard))), -1.0);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m1, m2;
  std::int64_t step = 0;

  void init(const std::vector<Tensor*>& params) {
    m1.clear();
    m2.clear();
    for (const Tensor* p : params) {
      m1.emplace_back(static_cast<std::size_t>(p->size()), 0.0);
      m2.emplace_back(static_cast<std::size_t>(p->size()), 0.0);
    }
    step = 0;
  }
};

// Standard bias-corrected update; reads each parameter's accumulated grad.
inline void adam_step(const std::vector<Tensor*>& params, AdamState& state, const AdamConfig& hp) {
  check_contract(state.m1.size() == params.size(), "adam: state/parameter count mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    check_contract(state.m1[pi].size() == static_cast<std::size_t>(p.size()),
                   "adam: moment shape mismatch at parameter " + std::to_string(pi));
    const auto& g = p.grad();
    auto& m = state.m1[pi];
    auto& v = state.m2[pi];
    double* w = p.data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
      v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::int64_t batch_size = 100;
  std::int64_t epochs = 50;
  AdamConfig adam;
  std::uint64_t seed = 1;
  bool fixed_labels = false;  // ablation: draw pseudo labels once, not per epoch
  std::int64_t checkpoint_every = 0;  // 0: only at the end

  void validate(std::int64_t np) const {
    if (epochs < 1) throw config_error("train: epochs must be >= 1");
    if (batch_size < np)
      throw config_error("train: batch size " + std::to_string(batch_size) +
                         " < number of pseudo classes " + std::to_string(np));
  }
};

struct EpochRecord {
  std::int64_t epoch = 0;
  double loss = 0, ce = 0, affinity = 0, balance = 0, frob = 0, pseudo_acc = 0;
  double seconds = 0;
};

struct TrainLog {
  std::vector<EpochRecord> records;

  static constexpr const char* kHeader = "epoch,loss,ce,affinity,balance,frob,pseudo_acc,seconds";

  std::string to_csv() const {
    std::ostringstream os;
    os << kHeader << "\n";
    char buf[512];
    for (const auto& r : records) {
      std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                    static_cast<long long>(r.epoch), r.loss, r.ce, r.affinity, r.balance, r.frob,
                    r.pseudo_acc, r.seconds);
      os << buf;
    }
    return os.str();
  }

  // The numeric trajectory without wall time; this is the determinism surface.
  std::string to_csv_without_seconds() const {
    std::ostringstream os;
    os << "epoch,loss,ce,affinity,balance,frob,pseudo_acc\n";
    char buf[512];
    for (const auto& r : records) {
      std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                    static_cast<long long>(r.epoch), r.loss, r.ce, r.affinity, r.balance, r.frob,
                    r.pseudo_acc);
      os << buf;
    }
    return os.str();
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw io_error(path + ": cannot open for writing");
    out << to_csv();
  }
};

// Owns one training run: network, optimizer state, and the named RNG streams.
// Dropout is active only here; every extraction/evaluation path runs the
// network in eval mode.
class Trainer {
 public:
  Trainer() = default;
  // leaf tensors point into tape_, so the object must stay put
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  Trainer(ModelSpec spec, Shape input_chw, TransformSet transforms, GarConfig gar, TrainConfig cfg)
      : transforms_(std::move(transforms)), gar_(gar), cfg_(cfg) {
    gar_.validate();
    cfg_.validate(transforms_.np());
    if (gar_.np != transforms_.np())
      throw config_error("trainer: gar.np " + std::to_string(gar_.np) + " != transform count " +
                         std::to_string(transforms_.np()));
    if (spec.output_units() != gar_.np * gar_.ks)
      throw config_error("trainer: model output width " + std::to_string(spec.output_units()) +
                         " != np*ks = " + std::to_string(gar_.np * gar_.ks));
    Rng init_rng = substream(cfg_.seed, "init");
    net_ = Network(std::move(spec), std::move(input_chw), init_rng);
    net_.attach(tape_);
    labels_rng_ = substream(cfg_.seed, "labels");
    dropout_rng_ = substream(cfg_.seed, "dropout");
    adam_.init(net_.parameters());
  }

  Network& network() { return net_; }
  const Network& network() const { return net_; }
  const GarConfig& gar() const { return gar_; }
  const TransformSet& transforms() const { return transforms_; }
  const TrainConfig& config() const { return cfg_; }
  std::int64_t epoch() const { return epoch_; }
  const AdamState& adam_state() const { return adam_; }

  // One pass over the data: relabel (unless fixed), transform, shuffle, then
  // minimize ce + c_a*affinity + c_b*(1-balance) + c_F*||B||^2_F/m per batch.
  EpochRecord train_epoch(const ImagesView& data) {
    const auto t0 = std::chrono::steady_clock::now();
    if (!prepared_) {
      prepare_transform_set(transforms_, data.h, data.w);
      prepared_ = true;
    }

    PseudoBatch pseudo;
    if (cfg_.fixed_labels) {
      if (!fixed_batch_.images.defined()) fixed_batch_ = make_pseudo_batch(data, transforms_, labels_rng_);
      pseudo = fixed_batch_;
    } else {
      pseudo = make_pseudo_batch(data, transforms_, labels_rng_);
    }

    const std::int64_t m = data.m, b = cfg_.batch_size;
    const std::int64_t isz = data.image_size();
    EpochRecord rec;
    rec.epoch = epoch_ + 1;
    std::int64_t correct = 0;
    std::int64_t batches = 0;

    for (std::int64_t start = 0; start < m; start += b, ++batches) {
      const std::int64_t count = std::min(b, m - start);
      Tensor x = Tensor::zeros({count, data.c, data.h, data.w});
      std::copy(pseudo.images.data() + start * isz, pseudo.images.data() + (start + count) * isz,
                x.data());
      std::vector<int> t(pseudo.labels.begin() + start, pseudo.labels.begin() + start + count);

      ForwardResult fr = net_.forward(x, /*train=*/true, dropout_rng_);
      AcolActivations acts = acol_from_z(fr.latent, fr.presoftmax, gar_);
      GarTerms gt = gar_total(acts.B, gar_);
      Tensor ce = supervised_loss(acts.Y, t);
      Tensor loss = add(ce, gt.total);

      if (!std::isfinite(loss.item())) throw train_abort_error(nan_dump(loss, ce, gt, acts, start, count));

      for (Tensor* p : net_.parameters()) p->zero_grad();
      tape_.backward(loss);
      adam_step(net_.parameters(), adam_, cfg_.adam);
      tape_.clear();

      rec.loss += loss.item() * static_cast<double>(count);
      rec.ce += ce.item() * static_cast<double>(count);
      rec.affinity += gt.affinity.item() * static_cast<double>(count);
      rec.balance += gt.balance.item() * static_cast<double>(count);
      rec.frob += gt.frobenius_sq.item();  // summed over examples already
      correct += count_argmax_matches(acts.Y, t);
    }
    const double dm = static_cast<double>(m);
    rec.loss /= dm;
    rec.ce /= dm;
    rec.affinity /= dm;
    rec.balance /= dm;
    rec.frob /= dm;
    rec.pseudo_acc = static_cast<double>(correct) / dm;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++epoch_;
    log_.records.push_back(rec);
    return rec;
  }

  const TrainLog& log() const { return log_; }
  TrainLog& log() { return log_; }

  // Deterministic eval-mode forward; dropout off, nothing recorded.
  ForwardResult forward_eval(const Tensor& x) const {
    TapePause pause(&tape_);
    Rng unused(0);
    return net_.forward(x, /*train=*/false, unused);
  }

  // --- checkpoint container -------------------------------------------------
  // magic, version, model spec string, input shape, gar config, parameter
  // blobs with shape headers (declaration order), Adam moments, RNG states,
  // epoch counter. Little-endian doubles, bit-exact round trip.

  static constexpr char kMagic[8] = {'P', 'S', 'C', 'L', 'C', 'K', 'P', 'T'};
  static constexpr std::uint32_t kVersion = 1;

  void save_checkpoint(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error(path + ": cannot open for writing");
    out.write(kMagic, 8);
    write_u32(out, kVersion);
    write_string(out, net_.spec().to_string());
    write_u32(out, static_cast<std::uint32_t>(net_.input_shape().size()));
    for (auto e : net_.input_shape()) write_u64(out, static_cast<std::uint64_t>(e));
    write_u64(out, static_cast<std::uint64_t>(gar_.np));
    write_u64(out, static_cast<std::uint64_t>(gar_.ks));
    write_f64(out, gar_.c_alpha);
    write_f64(out, gar_.c_beta);
    write_f64(out, gar_.c_frob);
    write_f64(out, gar_.eps);

    auto params = const_cast<Network&>(net_).parameters();
    write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const Tensor* p : params) {
      write_u32(out, static_cast<std::uint32_t>(p->shape().size()));
      for (auto e : p->shape()) write_u64(out, static_cast<std::uint64_t>(e));
      write_f64_array(out, p->values());
    }
    write_u64(out, static_cast<std::uint64_t>(adam_.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      write_f64_array(out, adam_.m1[i]);
      write_f64_array(out, adam_.m2[i]);
    }
    write_u64(out, labels_rng_.state());
    write_u64(out, dropout_rng_.state());
    write_u64(out, static_cast<std::uint64_t>(epoch_));
    if (!out) throw io_error(path + ": write failed");
  }

  // Restores into this trainer. The current ModelSpec must match; the first
  // mismatching parameter is named in the error.
  void load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error(path + ": cannot open");
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
      throw io_error(path + ": bad checkpoint magic");
    if (read_u32(in, path) != kVersion) throw io_error(path + ": unsupported checkpoint version");
    const std::string spec_str = read_string(in, path);
    if (spec_str != net_.spec().to_string())
      throw io_error(path + ": checkpoint model spec '" + spec_str + "' != trainer spec '" +
                     net_.spec().to_string() + "'");
    const auto in_rank = read_u32(in, path);
    Shape in_shape;
    for (std::uint32_t i = 0; i < in_rank; ++i) in_shape.push_back(static_cast<std::int64_t>(read_u64(in, path)));
    if (in_shape != net_.input_shape()) throw io_error(path + ": checkpoint input shape mismatch");
    GarConfig g;
    g.np = static_cast<std::int64_t>(read_u64(in, path));
    g.ks = static_cast<std::int64_t>(read_u64(in, path));
    g.c_alpha = read_f64(in, path);
    g.c_beta = read_f64(in, path);
    g.c_frob = read_f64(in, path);
    g.eps = read_f64(in, path);
    gar_ = g;

    auto params = net_.parameters();
    const auto pcount = read_u32(in, path);
    if (pcount != params.size()) throw io_error(path + ": parameter count mismatch");
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      const auto rank = read_u32(in, path);
      Shape s;
      for (std::uint32_t i = 0; i < rank; ++i) s.push_back(static_cast<std::int64_t>(read_u64(in, path)));
      if (s != params[pi]->shape())
        throw io_error(path + ": shape mismatch at parameter " + std::to_string(pi) + ", file " +
                       shape_str(s) + " vs model " + shape_str(params[pi]->shape()));
      read_f64_array(in, path, params[pi]->values());
    }
    adam_.init(params);
    adam_.step = static_cast<std::int64_t>(read_u64(in, path));
    for (std::size_t i = 0; i < params.size(); ++i) {
      read_f64_array(in, path, adam_.m1[i]);
      read_f64_array(in, path, adam_.m2[i]);
    }
    labels_rng_.set_state(read_u64(in, path));
    dropout_rng_.set_state(read_u64(in, path));
    epoch_ = static_cast<std::int64_t>(read_u64(in, path));
    fixed_batch_ = PseudoBatch{};
  }

 private:
  static std::int64_t count_argmax_matches(const Tensor& y, const std::vector<int>& t) {
    const std::int64_t m = y.dim(0), n = y.dim(1);
    std::int64_t correct = 0;
    for (std::int64_t i = 0; i < m; ++i) {
      std::int64_t best = 0;
      for (std::int64_t j = 1; j < n; ++j)
        if (y.at(i, j) > y.at(i, best)) best = j;
      if (best == t[static_cast<std::size_t>(i)]) ++correct;
    }
    return correct;
  }

  std::string nan_dump(const Tensor& loss, const Tensor& ce, const GarTerms& gt,
                       const AcolActivations& acts, std::int64_t start, std::int64_t count) const {
    std::ostringstream os;
    os << "non-finite loss at epoch " << (epoch_ + 1) << ", batch rows [" << start << "," << (start + count)
       << "): loss=" << loss.item() << " ce=" << ce.item() << " affinity=" << gt.affinity.item()
       << " balance=" << gt.balance.item() << " frob=" << gt.frobenius_sq.item()
       << " Z[min,max]=[" << acts.Z.min_value() << "," << acts.Z.max_value() << "]"
       << " F[min,max]=[" << acts.F.min_value() << "," << acts.F.max_value() << "]";
    return os.str();
  }

  static void write_u32(std::ofstream& o, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    o.write(reinterpret_cast<const char*>(b), 4);
  }
  static void write_u64(std::ofstream& o, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    o.write(reinterpret_cast<const char*>(b), 8);
  }
  static void write_f64(std::ofstream& o, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    write_u64(o, u);
  }
  static void write_f64_array(std::ofstream& o, const std::vector<double>& v) {
    for (double x : v) write_f64(o, x);
  }
  static void write_string(std::ofstream& o, const std::string& s) {
    write_u32(o, static_cast<std::uint32_t>(s.size()));
    o.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw io_error(path + ": truncated checkpoint");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
    return v;
  }
  static std::uint64_t read_u64(std::ifstream& in, const std::string& path) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (in.gcount() != 8) throw io_error(path + ": truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
  }
  static double read_f64(std::ifstream& in, const std::string& path) {
    const std::uint64_t u = read_u64(in, path);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  static void read_f64_array(std::ifstream& in, const std::string& path, std::vector<double>& v) {
    for (auto& x : v) x = read_f64(in, path);
  }
  static std::string read_string(std::ifstream& in, const std::string& path) {
    const auto n = read_u32(in, path);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (in.gcount() != static_cast<std::streamsize>(n)) throw io_error(path + ": truncated checkpoint");
    return s;
  }

  Network net_;
  mutable Tape tape_;
  TransformSet transforms_;
  GarConfig gar_;
  TrainConfig cfg_;
  AdamState adam_;
  Rng labels_rng_, dropout_rng_;
  std::int64_t epoch_ = 0;
  bool prepared_ = false;
  PseudoBatch fixed_batch_;
  TrainLog log_;
};

}  // namespace pscl
