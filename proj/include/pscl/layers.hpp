#pragma once

#include <cctype>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "pscl/rng.hpp"
#include "pscl/tensor.hpp"

namespace pscl {

// ---------------------------------------------------------------------------
// Structural layer ops: valid cross-correlation, 2x2 max pool, inverted
// dropout. Each is one tape node with a hand-written backward rule.
// ---------------------------------------------------------------------------

// x: (b x ci x h x w), kernels: (co x ci x kh x kw), bias: (co).
// Valid padding, stride 1.
inline Tensor conv2d_forward(const Tensor& x, const Tensor& kernels, const Tensor& bias) {
  check_contract(x.rank() == 4 && kernels.rank() == 4 && bias.rank() == 1,
                 "conv2d: expected x(b,ci,h,w), kernels(co,ci,kh,kw), bias(co)");
  const std::int64_t b = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t co = kernels.dim(0), kci = kernels.dim(1), kh = kernels.dim(2), kw = kernels.dim(3);
  if (ci != kci)
    throw dim_error("conv2d: channel mismatch, input " + shape_str(x.shape()) + " vs kernels " +
                    shape_str(kernels.shape()));
  check_contract(bias.dim(0) == co, "conv2d: bias width != out channels");
  check_contract(h >= kh && w >= kw, "conv2d: spatial extent smaller than kernel");
  const std::int64_t oh = h - kh + 1, ow = w - kw + 1;

  Tensor out = Tensor::zeros({b, co, oh, ow});
  const double* xd = x.data();
  const double* kd = kernels.data();
  double* od = out.data();
  for (std::int64_t ib = 0; ib < b; ++ib) {
    for (std::int64_t oc = 0; oc < co; ++oc) {
      double* oplane = od + ((ib * co + oc) * oh) * ow;
      const double bv = bias.data()[oc];
      for (std::int64_t i = 0; i < oh * ow; ++i) oplane[i] = bv;
      for (std::int64_t ic = 0; ic < ci; ++ic) {
        const double* xplane = xd + ((ib * ci + ic) * h) * w;
        const double* kplane = kd + ((oc * ci + ic) * kh) * kw;
        for (std::int64_t r = 0; r < kh; ++r) {
          for (std::int64_t c = 0; c < kw; ++c) {
            const double kv = kplane[r * kw + c];
            if (kv == 0.0) continue;
            for (std::int64_t y = 0; y < oh; ++y) {
              const double* xrow = xplane + (y + r) * w + c;
              double* orow = oplane + y * ow;
              for (std::int64_t z = 0; z < ow; ++z) orow[z] += kv * xrow[z];
            }
          }
        }
      }
    }
  }

  if (detail::wire_output(out, {&x, &kernels, &bias})) {
    auto xs = x.storage(), ks = kernels.storage(), bs = bias.storage(), os = out.storage();
    out.tape()->record(out, [xs, ks, bs, os, b, ci, co, h, w, kh, kw, oh, ow] {
      const double* g = os->grad.data();
      if (bs->requires_grad) {
        bs->ensure_grad();
        for (std::int64_t ib = 0; ib < b; ++ib)
          for (std::int64_t oc = 0; oc < co; ++oc) {
            const double* gplane = g + ((ib * co + oc) * oh) * ow;
            double s = 0.0;
            for (std::int64_t i = 0; i < oh * ow; ++i) s += gplane[i];
            bs->grad[static_cast<std::size_t>(oc)] += s;
          }
      }
      if (ks->requires_grad) {
        ks->ensure_grad();
        for (std::int64_t ib = 0; ib < b; ++ib)
          for (std::int64_t oc = 0; oc < co; ++oc) {
            const double* gplane = g + ((ib * co + oc) * oh) * ow;
            for (std::int64_t ic = 0; ic < ci; ++ic) {
              const double* xplane = xs->value.data() + ((ib * ci + ic) * h) * w;
              double* kplane = ks->grad.data() + ((oc * ci + ic) * kh) * kw;
              for (std::int64_t r = 0; r < kh; ++r)
                for (std::int64_t c = 0; c < kw; ++c) {
                  double s = 0.0;
                  for (std::int64_t y = 0; y < oh; ++y) {
                    const double* xrow = xplane + (y + r) * w + c;
                    const double* grow = gplane + y * ow;
                    for (std::int64_t z = 0; z < ow; ++z) s += xrow[z] * grow[z];
                  }
                  kplane[r * kw + c] += s;
                }
            }
          }
      }
      if (xs->requires_grad) {
        xs->ensure_grad();
        for (std::int64_t ib = 0; ib < b; ++ib)
          for (std::int64_t oc = 0; oc < co; ++oc) {
            const double* gplane = g + ((ib * co + oc) * oh) * ow;
            for (std::int64_t ic = 0; ic < ci; ++ic) {
              double* xplane = xs->grad.data() + ((ib * ci + ic) * h) * w;
              const double* kplane = ks->value.data() + ((oc * ci + ic) * kh) * kw;
              for (std::int64_t r = 0; r < kh; ++r)
                for (std::int64_t c = 0; c < kw; ++c) {
                  const double kv = kplane[r * kw + c];
                  if (kv == 0.0) continue;
                  for (std::int64_t y = 0; y < oh; ++y) {
                    double* xrow = xplane + (y + r) * w + c;
                    const double* grow = gplane + y * ow;
                    for (std::int64_t z = 0; z < ow; ++z) xrow[z] += kv * grow[z];
                  }
                }
            }
          }
      }
    });
  }
  return out;
}

// Non-overlapping 2x2 max; odd trailing row/col dropped. Gradient goes to the
// first-found argmax cell of each window.
inline Tensor maxpool2x2(const Tensor& x) {
  check_contract(x.rank() == 4, "maxpool2x2: expected (b,c,h,w)");
  const std::int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  check_contract(h >= 2 && w >= 2, "maxpool2x2: spatial extent must be >= 2");
  const std::int64_t oh = h / 2, ow = w / 2;
  Tensor out = Tensor::zeros({b, c, oh, ow});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(b * c * oh * ow));
  for (std::int64_t p = 0; p < b * c; ++p) {
    const double* xp = x.data() + p * h * w;
    double* op = out.data() + p * oh * ow;
    std::int64_t* ap = argmax.data() + p * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t z = 0; z < ow; ++z) {
        std::int64_t best = (2 * y) * w + 2 * z;
        double bv = xp[best];
        for (std::int64_t dy = 0; dy < 2; ++dy)
          for (std::int64_t dz = 0; dz < 2; ++dz) {
            const std::int64_t idx = (2 * y + dy) * w + 2 * z + dz;
            if (xp[idx] > bv) {
              bv = xp[idx];
              best = idx;
            }
          }
        op[y * ow + z] = bv;
        ap[y * ow + z] = p * h * w + best;
      }
  }
  if (detail::wire_output(out, {&x})) {
    auto xs = x.storage(), os = out.storage();
    out.tape()->record(out, [xs, os, argmax = std::move(argmax)] {
      xs->ensure_grad();
      for (std::size_t i = 0; i < argmax.size(); ++i)
        xs->grad[static_cast<std::size_t>(argmax[i])] += os->grad[i];
    });
  }
  return out;
}

// Inverted dropout: train zeroes with probability p and scales survivors by
// 1/(1-p); eval is the identity. The mask consumes one uniform per element.
inline Tensor dropout_apply(const Tensor& x, double p, bool train, Rng& rng) {
  check_contract(p >= 0.0 && p < 1.0, "dropout: rate must be in [0,1)");
  if (!train || p == 0.0) {
    if (!train) return x;  // eval mode: identity, not even a tape node
    // p == 0 in train mode: still identity
    return x;
  }
  const auto n = static_cast<std::size_t>(x.size());
  std::vector<double> mask(n);
  const double scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < n; ++i) mask[i] = rng.uniform01() < p ? 0.0 : scale;
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * mask[i];
  if (detail::wire_output(out, {&x})) {
    auto xs = x.storage(), os = out.storage();
    out.tape()->record(out, [xs, os, mask = std::move(mask), n] {
      xs->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) xs->grad[i] += os->grad[i] * mask[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model spec string
//
// Grammar, tokens separated by '-':
//   <n>*(<ch>x<kh>x<kw>)   n stacked conv layers (bare <ch>x<kh>x<kw> means n=1)
//   MP2x2                  2x2 max pool
//   Drop(<p>)              dropout
//   FC <n>                 dense layer, ReLU unless final
//   FC <np>*<ks>           final dense layer declaring the parent/duplicate split
// ---------------------------------------------------------------------------

enum class LayerKind { Conv, MaxPool, Dropout, Dense };

struct LayerDesc {
  LayerKind kind;
  std::int64_t channels = 0, kh = 0, kw = 0;  // Conv
  double rate = 0.0;                          // Dropout
  std::int64_t units = 0;                     // Dense
};

struct ModelSpec {
  std::vector<LayerDesc> layers;
  std::int64_t np = 0, ks = 0;  // declared by a product-form final FC; 0 if plain

  std::int64_t output_units() const { return layers.empty() ? 0 : layers.back().units; }

  static ModelSpec parse(const std::string& text);
  std::string to_string() const;
};

namespace detail {

inline std::vector<std::string> split_spec_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (ch == '-') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  for (auto& t : out) {
    std::size_t a = 0, b = t.size();
    while (a < b && std::isspace(static_cast<unsigned char>(t[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(t[b - 1]))) --b;
    t = t.substr(a, b - a);
  }
  return out;
}

inline bool parse_i64(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  std::int64_t v = 0;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

}  // namespace detail

inline ModelSpec ModelSpec::parse(const std::string& text) {
  ModelSpec spec;
  const auto tokens = detail::split_spec_tokens(text);
  auto bad = [&](const std::string& tok) {
    throw config_error("model spec: cannot parse token '" + tok + "' in '" + text + "'");
  };
  for (const auto& tok : tokens) {
    if (tok.empty()) bad(tok);
    if (tok == "MP2x2") {
      spec.layers.push_back({LayerKind::MaxPool});
      continue;
    }
    if (tok.rfind("Drop(", 0) == 0 && tok.back() == ')') {
      const std::string inner = tok.substr(5, tok.size() - 6);
      char* end = nullptr;
      const double p = std::strtod(inner.c_str(), &end);
      if (end != inner.c_str() + inner.size() || !(p >= 0.0 && p < 1.0)) bad(tok);
      spec.layers.push_back({LayerKind::Dropout, 0, 0, 0, p});
      continue;
    }
    if (tok.rfind("FC ", 0) == 0 || tok.rfind("FC\t", 0) == 0) {
      std::string rest = tok.substr(3);
      while (!rest.empty() && std::isspace(static_cast<unsigned char>(rest.front()))) rest.erase(rest.begin());
      const auto star = rest.find('*');
      std::int64_t units = 0;
      if (star != std::string::npos) {
        std::int64_t np = 0, ks = 0;
        if (!detail::parse_i64(rest.substr(0, star), np) || !detail::parse_i64(rest.substr(star + 1), ks) ||
            np < 1 || ks < 1)
          bad(tok);
        spec.np = np;
        spec.ks = ks;
        units = np * ks;
      } else {
        if (!detail::parse_i64(rest, units) || units < 1) bad(tok);
        spec.np = spec.ks = 0;  // product form only counts on the last FC
      }
      LayerDesc d{LayerKind::Dense};
      d.units = units;
      spec.layers.push_back(d);
      continue;
    }
    // conv: N*(CxKHxKW) or CxKHxKW
    std::string body = tok;
    std::int64_t repeat = 1;
    const auto star = tok.find("*(");
    if (star != std::string::npos && tok.back() == ')') {
      if (!detail::parse_i64(tok.substr(0, star), repeat) || repeat < 1) bad(tok);
      body = tok.substr(star + 2, tok.size() - star - 3);
    }
    std::int64_t dims[3];
    std::size_t pos = 0;
    for (int i = 0; i < 3; ++i) {
      const auto nx = body.find('x', pos);
      const std::string part = (i == 2) ? body.substr(pos) : body.substr(pos, nx - pos);
      if (i < 2 && nx == std::string::npos) bad(tok);
      if (!detail::parse_i64(part, dims[i]) || dims[i] < 1) bad(tok);
      pos = nx + 1;
    }
    for (std::int64_t r = 0; r < repeat; ++r)
      spec.layers.push_back({LayerKind::Conv, dims[0], dims[1], dims[2]});
  }
  if (spec.layers.empty() || spec.layers.back().kind != LayerKind::Dense)
    throw config_error("model spec: must end with a dense layer: '" + text + "'");
  return spec;
}

inline std::string ModelSpec::to_string() const {
  std::string out;
  auto emit = [&](const std::string& tok) {
    if (!out.empty()) out += "-";
    out += tok;
  };
  std::size_t dense_seen = 0, dense_total = 0;
  for (const auto& l : layers)
    if (l.kind == LayerKind::Dense) ++dense_total;
  for (std::size_t i = 0; i < layers.size();) {
    const auto& l = layers[i];
    char buf[64];
    switch (l.kind) {
      case LayerKind::Conv: {
        std::size_t run = 1;
        while (i + run < layers.size() && layers[i + run].kind == LayerKind::Conv &&
               layers[i + run].channels == l.channels && layers[i + run].kh == l.kh &&
               layers[i + run].kw == l.kw)
          ++run;
        std::snprintf(buf, sizeof buf, "%zu*(%lldx%lldx%lld)", run, static_cast<long long>(l.channels),
                      static_cast<long long>(l.kh), static_cast<long long>(l.kw));
        emit(buf);
        i += run;
        continue;
      }
      case LayerKind::MaxPool:
        emit("MP2x2");
        break;
      case LayerKind::Dropout:
        std::snprintf(buf, sizeof buf, "Drop(%g)", l.rate);
        emit(buf);
        break;
      case LayerKind::Dense:
        ++dense_seen;
        if (dense_seen == dense_total && np > 0) {
          std::snprintf(buf, sizeof buf, "FC %lld*%lld", static_cast<long long>(np),
                        static_cast<long long>(ks));
        } else {
          std::snprintf(buf, sizeof buf, "FC %lld", static_cast<long long>(l.units));
        }
        emit(buf);
        break;
    }
    ++i;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameterized network
// ---------------------------------------------------------------------------

struct Conv2dLayer {
  Tensor kernels;  // (co, ci, kh, kw)
  Tensor bias;     // (co)
};

struct DenseLayer {
  Tensor weights;  // (in, out)
  Tensor bias;     // (out)
};

struct DropoutLayer {
  double rate = 0.0;
  bool train_mode = false;  // eval mode is the identity
};

inline Tensor dropout_apply(const Tensor& x, const DropoutLayer& layer, Rng& rng) {
  return dropout_apply(x, layer.rate, layer.train_mode, rng);
}

struct NetLayer {
  LayerDesc desc;
  Tensor weight;  // kernels / dense weights; undefined for pool & dropout
  Tensor bias;
};

// He-uniform: U(-sqrt(6/fan_in), +sqrt(6/fan_in)); variance 2/fan_in.
inline void he_uniform_fill(Tensor& t, std::int64_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = rng.uniform(-limit, limit);
}

struct ForwardResult {
  Tensor latent;      // F: input of the final dense layer (flattened)
  Tensor presoftmax;  // Z: output of the final dense layer
};

// Layer stack realizing a ModelSpec. The dense fan-ins come from the traced
// shape of the given input, never from hard-coded sizes, so the same spec
// string serves 28x28 and 16x16 inputs.
class Network {
 public:
  Network() = default;

  Network(ModelSpec spec, Shape input_chw, Rng& init_rng) : spec_(std::move(spec)), input_chw_(std::move(input_chw)) {
    check_contract(input_chw_.size() == 3, "network: input shape must be (c,h,w)");
    std::int64_t c = input_chw_[0], h = input_chw_[1], w = input_chw_[2];
    bool flattened = false;
    std::int64_t flat = 0;
    for (const auto& d : spec_.layers) {
      NetLayer layer{d};
      switch (d.kind) {
        case LayerKind::Conv: {
          check_contract(!flattened, "network: conv after dense is not supported");
          layer.weight = Tensor::zeros({d.channels, c, d.kh, d.kw});
          he_uniform_fill(layer.weight, c * d.kh * d.kw, init_rng);
          layer.bias = Tensor::zeros({d.channels});
          c = d.channels;
          h = h - d.kh + 1;
          w = w - d.kw + 1;
          check_contract(h >= 1 && w >= 1, "network: conv shrinks input below 1x1");
          break;
        }
        case LayerKind::MaxPool:
          check_contract(!flattened, "network: pool after dense is not supported");
          h /= 2;
          w /= 2;
          check_contract(h >= 1 && w >= 1, "network: pool shrinks input below 1x1");
          break;
        case LayerKind::Dropout:
          break;
        case LayerKind::Dense: {
          if (!flattened) {
            flat = c * h * w;
            flattened = true;
          }
          layer.weight = Tensor::zeros({flat, d.units});
          he_uniform_fill(layer.weight, flat, init_rng);
          layer.bias = Tensor::zeros({d.units});
          flat = d.units;
          break;
        }
      }
      layers_.push_back(std::move(layer));
    }
    latent_width_ = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i].desc.kind == LayerKind::Dense) last_dense_ = i;
    latent_width_ = layers_[last_dense_].weight.dim(0);
  }

  const ModelSpec& spec() const { return spec_; }
  const Shape& input_shape() const { return input_chw_; }
  std::int64_t latent_width() const { return latent_width_; }
  std::int64_t output_width() const { return layers_[last_dense_].weight.dim(1); }
  const std::vector<NetLayer>& layers() const { return layers_; }
  std::vector<NetLayer>& layers() { return layers_; }

  // Parameters in declaration order (weight then bias per parameterized layer).
  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (auto& l : layers_) {
      if (l.weight.defined()) out.push_back(&l.weight);
      if (l.bias.defined()) out.push_back(&l.bias);
    }
    return out;
  }

  void attach(Tape& tape) {
    for (Tensor* p : parameters()) tape.adopt_leaf(*p);
  }

  // ReLU follows every conv and every non-final dense layer; the final dense
  // layer is linear into the augmented softmax.
  ForwardResult forward(const Tensor& x, bool train, Rng& dropout_rng) const {
    check_contract(x.rank() == 4, "network: input must be (b,c,h,w)");
    check_contract(x.dim(1) == input_chw_[0] && x.dim(2) == input_chw_[1] && x.dim(3) == input_chw_[2],
                   "network: input shape " + shape_str(x.shape()) + " does not match traced (c,h,w)");
    Tensor cur = x;
    bool flattened = false;
    ForwardResult res;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      switch (l.desc.kind) {
        case LayerKind::Conv:
          cur = relu(conv2d_forward(cur, l.weight, l.bias));
          break;
        case LayerKind::MaxPool:
          cur = maxpool2x2(cur);
          break;
        case LayerKind::Dropout:
          cur = dropout_apply(cur, l.desc.rate, train, dropout_rng);
          break;
        case LayerKind::Dense: {
          if (!flattened) {
            cur = reshape(cur, {cur.dim(0), cur.size() / cur.dim(0)});
            flattened = true;
          }
          if (i == last_dense_) {
            res.latent = cur;
            cur = add_rowvec(matmul(cur, l.weight), l.bias);
          } else {
            cur = relu(add_rowvec(matmul(cur, l.weight), l.bias));
          }
          break;
        }
      }
    }
    res.presoftmax = cur;
    return res;
  }

 private:
  ModelSpec spec_;
  Shape input_chw_;
  std::vector<NetLayer> layers_;
  std::size_t last_dense_ = 0;
  std::int64_t latent_width_ = 0;
};

}  // namespace pscl
