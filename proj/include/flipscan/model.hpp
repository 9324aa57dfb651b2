#pragma once

// Small models for the stand-in corpus: layer specs, fake datasets of random
// noise, a deterministic SGD trainer and the in-process reference forward pass
// that the emitted C kernels must match bit for bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flipscan/error.hpp"
#include "flipscan/random.hpp"

namespace flipscan {

enum class LayerKind : std::uint8_t { Conv2d, Dense, Relu };
enum class Head : std::uint8_t { Argmax, Tanh };

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  std::size_t units = 0;  // dense outputs, or conv filters
  std::size_t kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline LayerSpec dense(std::size_t units) { return {LayerKind::Dense, units, 0, 0, 1}; }
inline LayerSpec relu() { return {LayerKind::Relu, 0, 0, 0, 1}; }
inline LayerSpec conv2d(std::size_t filters, std::size_t kh, std::size_t kw, std::size_t stride = 1) {
  return {LayerKind::Conv2d, filters, kh, kw, stride};
}

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

struct ModelSpec {
  std::string name = "model";
  Shape input_shape;  // (d) or (C,H,W)
  std::vector<LayerSpec> layers;
  std::size_t class_count = 0;
  Head head = Head::Argmax;
  bool quantized = false;

  std::size_t input_size() const { return shape_size(input_shape); }

  /// Output shape of every layer; throws when the chain does not fit.
  std::vector<Shape> shapes() const {
    if (input_shape.empty() || input_size() == 0) throw Error(Errc::ShapeMismatch, "empty input shape");
    if (layers.empty()) throw Error(Errc::ShapeMismatch, "model has no layers");
    std::vector<Shape> out;
    Shape cur = input_shape;
    for (const auto& l : layers) {
      switch (l.kind) {
        case LayerKind::Dense:
          if (l.units == 0) throw Error(Errc::ShapeMismatch, "dense layer with no units");
          cur = {l.units};
          break;
        case LayerKind::Relu: break;
        case LayerKind::Conv2d: {
          if (cur.size() != 3) throw Error(Errc::ShapeMismatch, "conv2d needs a (C,H,W) input");
          if (l.units == 0 || l.kernel_h == 0 || l.kernel_w == 0 || l.stride == 0 || l.kernel_h > cur[1] ||
              l.kernel_w > cur[2])
            throw Error(Errc::ShapeMismatch, "conv2d kernel does not fit its input");
          cur = {l.units, (cur[1] - l.kernel_h) / l.stride + 1, (cur[2] - l.kernel_w) / l.stride + 1};
          break;
        }
        default: throw Error(Errc::UnsupportedLayer, "unknown layer kind");
      }
      out.push_back(cur);
    }
    if (shape_size(cur) != class_count) throw Error(Errc::ShapeMismatch, "last layer does not match class count");
    return out;
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline bool has_params(LayerKind k) { return k == LayerKind::Dense || k == LayerKind::Conv2d; }

// ---------------------------------------------------------------------------
// Weights

struct LayerWeights {
  std::vector<float> w;          // dense: [in][out]; conv: [f][c][kh][kw]
  std::vector<float> b;
  std::vector<std::int8_t> wq;   // quantized copy of w
  float scale = 0;               // w ~= wq * scale

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct TrainingMeta {
  std::uint64_t dataset_seed = 0;
  std::uint64_t train_seed = 0;
  std::size_t epochs = 0;
  double lr = 0;
  double fit_accuracy = 0;

  friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

struct WeightSet {
  std::vector<LayerWeights> layers;  // one per spec layer; empty for relu
  TrainingMeta meta;

  friend bool operator==(const WeightSet&, const WeightSet&) = default;
};

inline constexpr double kWellTrainedAccuracy = 0.90;

inline std::size_t weight_count(const LayerSpec& l, const Shape& in) {
  if (l.kind == LayerKind::Dense) return shape_size(in) * l.units;
  if (l.kind == LayerKind::Conv2d) return l.units * in[0] * l.kernel_h * l.kernel_w;
  return 0;
}

inline void check_weights(const ModelSpec& m, const WeightSet& ws) {
  const auto shapes = m.shapes();
  if (ws.layers.size() != m.layers.size()) throw Error(Errc::ShapeMismatch, "weight set has wrong layer count");
  Shape in = m.input_shape;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& l = m.layers[i];
    const auto& lw = ws.layers[i];
    if (has_params(l.kind)) {
      if (lw.w.size() != weight_count(l, in) || lw.b.size() != l.units)
        throw Error(Errc::ShapeMismatch, "layer " + std::to_string(i) + " weights have wrong size");
      if (m.quantized && lw.wq.size() != lw.w.size())
        throw Error(Errc::ShapeMismatch, "layer " + std::to_string(i) + " lacks quantized weights");
    }
    in = shapes[i];
  }
}

/// Symmetric per-tensor int8 quantization of every parameter layer.
inline void quantize(const ModelSpec& m, WeightSet& ws) {
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (!has_params(m.layers[i].kind)) continue;
    auto& lw = ws.layers[i];
    float mx = 0;
    for (float v : lw.w) mx = std::max(mx, std::fabs(v));
    lw.scale = mx > 0 ? mx / 127.0f : 1.0f;
    lw.wq.resize(lw.w.size());
    for (std::size_t k = 0; k < lw.w.size(); ++k)
      lw.wq[k] = static_cast<std::int8_t>(std::clamp(std::lround(lw.w[k] / lw.scale), -127L, 127L));
  }
}

// ---------------------------------------------------------------------------
// Reference forward pass. Loop order and arithmetic mirror the emitted C.

namespace detail {

inline void dense_fwd(const LayerSpec& l, const LayerWeights& lw, bool q, std::span<const float> in,
                      std::span<float> out) {
  const std::size_t n_in = in.size(), n_out = l.units;
  for (std::size_t o = 0; o < n_out; ++o) out[o] = q ? 0.0f : lw.b[o];
  for (std::size_t i = 0; i < n_in; ++i) {
    const float xi = in[i];
    if (q)
      for (std::size_t o = 0; o < n_out; ++o) out[o] += static_cast<float>(lw.wq[i * n_out + o]) * xi;
    else
      for (std::size_t o = 0; o < n_out; ++o) out[o] += lw.w[i * n_out + o] * xi;
  }
  if (q)
    for (std::size_t o = 0; o < n_out; ++o) out[o] = out[o] * lw.scale + lw.b[o];
}

inline void conv_fwd(const LayerSpec& l, const LayerWeights& lw, bool q, const Shape& is, const Shape& os,
                     std::span<const float> in, std::span<float> out) {
  const std::size_t C = is[0], H = is[1], W = is[2], OH = os[1], OW = os[2];
  const std::size_t KH = l.kernel_h, KW = l.kernel_w, S = l.stride;
  for (std::size_t f = 0; f < l.units; ++f)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        float acc = q ? 0.0f : lw.b[f];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t ky = 0; ky < KH; ++ky)
            for (std::size_t kx = 0; kx < KW; ++kx) {
              const std::size_t wi = ((f * C + c) * KH + ky) * KW + kx;
              const float x = in[(c * H + oy * S + ky) * W + ox * S + kx];
              acc += (q ? static_cast<float>(lw.wq[wi]) : lw.w[wi]) * x;
            }
        out[(f * OH + oy) * OW + ox] = q ? acc * lw.scale + lw.b[f] : acc;
      }
}

}  // namespace detail

/// Head output: logits for Argmax models, tanh(logits) for Tanh models.
/// `quantized` selects the int8 path (defaults to the model's flag).
inline std::vector<float> forward(const ModelSpec& m, const WeightSet& ws, std::span<const float> x, int quantized = -1) {
  const bool q = quantized < 0 ? m.quantized : quantized != 0;
  if (x.size() != m.input_size()) throw Error(Errc::ShapeMismatch, "input has wrong size");
  const auto shapes = m.shapes();
  std::vector<float> cur(x.begin(), x.end()), next;
  Shape in = m.input_shape;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& l = m.layers[i];
    next.assign(shape_size(shapes[i]), 0.0f);
    switch (l.kind) {
      case LayerKind::Dense: detail::dense_fwd(l, ws.layers[i], q, cur, next); break;
      case LayerKind::Conv2d: detail::conv_fwd(l, ws.layers[i], q, in, shapes[i], cur, next); break;
      case LayerKind::Relu:
        for (std::size_t k = 0; k < cur.size(); ++k) next[k] = cur[k] > 0.0f ? cur[k] : 0.0f;
        break;
    }
    cur.swap(next);
    in = shapes[i];
  }
  if (m.head == Head::Tanh)
    for (auto& v : cur) v = std::tanh(v);
  return cur;
}

/// First index of the maximum; strict comparison like the emitted kernel.
inline int argmax(std::span<const float> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int>(best);
}

// ---------------------------------------------------------------------------
// Fake datasets

struct FakeDataset {
  std::uint64_t seed = 0;
  std::size_t n = 0, d = 0, class_count = 0;
  std::vector<float> inputs;  // n x d, uniform in [-1, 1)
  std::vector<int> labels;

  std::span<const float> input(std::size_t i) const { return {inputs.data() + i * d, d}; }
  friend bool operator==(const FakeDataset&, const FakeDataset&) = default;
};

/// Noise inputs with balanced labels (i mod C) in shuffled order.
inline FakeDataset make_fake_dataset(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t classes) {
  if (classes == 0 || d == 0 || n < classes) throw Error(Errc::BadShape, "fake dataset needs N >= C >= 1 and d >= 1");
  FakeDataset ds{seed, n, d, classes, {}, {}};
  Rng rng(seed);
  ds.inputs.resize(n * d);
  for (auto& v : ds.inputs) v = static_cast<float>(uniform01(rng) * 2.0 - 1.0);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(i % classes);
  shuffle(ds.labels.begin(), ds.labels.end(), rng);
  return ds;
}

inline double fit_accuracy(const ModelSpec& m, const WeightSet& ws, const FakeDataset& ds, int quantized = -1) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < ds.n; ++i) ok += argmax(forward(m, ws, ds.input(i), quantized)) == ds.labels[i];
  return static_cast<double>(ok) / static_cast<double>(ds.n);
}

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  std::size_t epochs = 200;
  double lr = 0.05;
  std::size_t batch = 16;
  std::uint64_t seed = 1;
};

inline WeightSet init_weights(const ModelSpec& m, Rng& rng) {
  const auto shapes = m.shapes();
  WeightSet ws;
  ws.layers.resize(m.layers.size());
  Shape in = m.input_shape;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& l = m.layers[i];
    if (has_params(l.kind)) {
      const std::size_t n = weight_count(l, in);
      const double fan_in = static_cast<double>(n / l.units);
      const double a = std::sqrt(6.0 / fan_in);
      auto& lw = ws.layers[i];
      lw.w.resize(n);
      for (auto& v : lw.w) v = static_cast<float>((uniform01(rng) * 2.0 - 1.0) * a);
      lw.b.assign(l.units, 0.0f);
    }
    in = shapes[i];
  }
  return ws;
}

namespace detail {

// Backward pass for one sample; accumulates parameter gradients into `g`.
inline void backprop(const ModelSpec& m, const std::vector<Shape>& shapes, const WeightSet& ws,
                     const std::vector<std::vector<float>>& acts, std::vector<float> grad, WeightSet& g) {
  for (std::size_t li = m.layers.size(); li-- > 0;) {
    const auto& l = m.layers[li];
    const auto& in = acts[li];
    const Shape& is = li == 0 ? m.input_shape : shapes[li - 1];
    std::vector<float> gin(in.size(), 0.0f);
    switch (l.kind) {
      case LayerKind::Relu:
        for (std::size_t k = 0; k < in.size(); ++k) gin[k] = in[k] > 0.0f ? grad[k] : 0.0f;
        break;
      case LayerKind::Dense: {
        const std::size_t n_out = l.units;
        auto& gw = g.layers[li];
        const auto& w = ws.layers[li].w;
        for (std::size_t o = 0; o < n_out; ++o) gw.b[o] += grad[o];
        for (std::size_t i = 0; i < in.size(); ++i) {
          float s = 0;
          for (std::size_t o = 0; o < n_out; ++o) {
            gw.w[i * n_out + o] += grad[o] * in[i];
            s += w[i * n_out + o] * grad[o];
          }
          gin[i] = s;
        }
        break;
      }
      case LayerKind::Conv2d: {
        const std::size_t C = is[0], H = is[1], W = is[2], OH = shapes[li][1], OW = shapes[li][2];
        const std::size_t KH = l.kernel_h, KW = l.kernel_w, S = l.stride;
        auto& gw = g.layers[li];
        const auto& w = ws.layers[li].w;
        for (std::size_t f = 0; f < l.units; ++f)
          for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox) {
              const float go = grad[(f * OH + oy) * OW + ox];
              gw.b[f] += go;
              for (std::size_t c = 0; c < C; ++c)
                for (std::size_t ky = 0; ky < KH; ++ky)
                  for (std::size_t kx = 0; kx < KW; ++kx) {
                    const std::size_t wi = ((f * C + c) * KH + ky) * KW + kx;
                    const std::size_t xi = (c * H + oy * S + ky) * W + ox * S + kx;
                    gw.w[wi] += go * in[xi];
                    gin[xi] += w[wi] * go;
                  }
            }
        break;
      }
    }
    grad.swap(gin);
  }
}

}  // namespace detail

/// Plain minibatch SGD on softmax cross-entropy over the pre-head logits.
/// Throws UnderTrained when the float model fits less than 90% of the data.
inline WeightSet train(const ModelSpec& m, const FakeDataset& ds, const TrainOptions& opt) {
  const auto shapes = m.shapes();
  if (ds.d != m.input_size() || ds.class_count != m.class_count)
    throw Error(Errc::ShapeMismatch, "dataset does not match the model's input or head");
  Rng rng(opt.seed);
  WeightSet ws = init_weights(m, rng);
  WeightSet zero = ws;
  for (auto& l : zero.layers) {
    std::fill(l.w.begin(), l.w.end(), 0.0f);
    std::fill(l.b.begin(), l.b.end(), 0.0f);
  }
  std::vector<std::size_t> order(ds.n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = std::max<std::size_t>(1, opt.batch);
  std::vector<std::vector<float>> acts(m.layers.size() + 1);
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < ds.n; start += batch) {
      const std::size_t end = std::min(ds.n, start + batch);
      WeightSet g = zero;
      for (std::size_t k = start; k < end; ++k) {
        const auto idx = order[k];
        const auto x = ds.input(idx);
        acts[0].assign(x.begin(), x.end());
        Shape in = m.input_shape;
        for (std::size_t li = 0; li < m.layers.size(); ++li) {
          acts[li + 1].assign(shape_size(shapes[li]), 0.0f);
          const auto& l = m.layers[li];
          if (l.kind == LayerKind::Dense) detail::dense_fwd(l, ws.layers[li], false, acts[li], acts[li + 1]);
          else if (l.kind == LayerKind::Conv2d)
            detail::conv_fwd(l, ws.layers[li], false, in, shapes[li], acts[li], acts[li + 1]);
          else
            for (std::size_t q = 0; q < acts[li].size(); ++q) acts[li + 1][q] = acts[li][q] > 0.0f ? acts[li][q] : 0.0f;
          in = shapes[li];
        }
        const auto& logits = acts.back();
        const float mx = *std::max_element(logits.begin(), logits.end());
        std::vector<float> p(logits.size());
        float sum = 0;
        for (std::size_t c = 0; c < p.size(); ++c) sum += p[c] = std::exp(logits[c] - mx);
        for (auto& v : p) v /= sum;
        p[static_cast<std::size_t>(ds.labels[idx])] -= 1.0f;
        detail::backprop(m, shapes, ws, acts, std::move(p), g);
      }
      const float step = static_cast<float>(opt.lr / static_cast<double>(end - start));
      for (std::size_t li = 0; li < ws.layers.size(); ++li) {
        for (std::size_t k = 0; k < ws.layers[li].w.size(); ++k) ws.layers[li].w[k] -= step * g.layers[li].w[k];
        for (std::size_t k = 0; k < ws.layers[li].b.size(); ++k) ws.layers[li].b[k] -= step * g.layers[li].b[k];
      }
    }
  }
  ws.meta = {ds.seed, opt.seed, opt.epochs, opt.lr, 0.0};
  ws.meta.fit_accuracy = fit_accuracy(m, ws, ds, 0);
  if (ws.meta.fit_accuracy < kWellTrainedAccuracy)
    throw Error(Errc::UnderTrained, "fit accuracy " + std::to_string(ws.meta.fit_accuracy) + " below 0.90");
  if (m.quantized) quantize(m, ws);
  return ws;
}

// ---------------------------------------------------------------------------
// JSON

using ModelJson = nlohmann::ordered_json;

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Dense: return "dense";
    case LayerKind::Relu: return "relu";
  }
  return "dense";
}

inline ModelJson model_to_json(const ModelSpec& m) {
  ModelJson layers = ModelJson::array();
  for (const auto& l : m.layers) {
    ModelJson j{{"kind", to_string(l.kind)}};
    if (l.kind == LayerKind::Dense) j["units"] = l.units;
    if (l.kind == LayerKind::Conv2d) {
      j["filters"] = l.units;
      j["kernel"] = {l.kernel_h, l.kernel_w};
      j["stride"] = l.stride;
    }
    layers.push_back(j);
  }
  return ModelJson{{"name", m.name},
                   {"input_shape", m.input_shape},
                   {"layers", layers},
                   {"class_count", m.class_count},
                   {"head", m.head == Head::Tanh ? "tanh" : "argmax"},
                   {"quantized", m.quantized}};
}

template <typename J>
ModelSpec model_from_json(const J& j) {
  ModelSpec m;
  try {
    m.name = j.value("name", std::string("model"));
    m.input_shape = j.at("input_shape").template get<Shape>();
    m.class_count = j.at("class_count").template get<std::size_t>();
    const auto head = j.value("head", std::string("argmax"));
    if (head != "argmax" && head != "tanh") throw Error(Errc::UnsupportedLayer, "unknown head " + head);
    m.head = head == "tanh" ? Head::Tanh : Head::Argmax;
    m.quantized = j.value("quantized", false);
    for (const auto& l : j.at("layers")) {
      const auto kind = l.at("kind").template get<std::string>();
      if (kind == "dense") m.layers.push_back(dense(l.at("units").template get<std::size_t>()));
      else if (kind == "relu") m.layers.push_back(relu());
      else if (kind == "conv2d") {
        const auto k = l.at("kernel").template get<std::vector<std::size_t>>();
        if (k.size() != 2) throw Error(Errc::BadFormat, "conv2d kernel must be [h, w]");
        m.layers.push_back(conv2d(l.at("filters").template get<std::size_t>(), k[0], k[1], l.value("stride", std::size_t{1})));
      } else {
        throw Error(Errc::UnsupportedLayer, "unsupported layer kind " + kind);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadFormat, std::string("model spec: ") + e.what());
  }
  m.shapes();
  return m;
}

/// The default family: a small MLP and a small conv net over 64 inputs, 10 classes.
inline ModelSpec default_mlp(bool quantized = false) {
  return {quantized ? "mlp-q" : "mlp", {64}, {dense(32), relu(), dense(10)}, 10, Head::Argmax, quantized};
}
inline ModelSpec default_conv(bool quantized = false) {
  return {quantized ? "conv-q" : "conv", {1, 8, 8}, {conv2d(4, 3, 3), relu(), dense(10)}, 10, Head::Argmax, quantized};
}

}  // namespace flipscan
