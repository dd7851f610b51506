#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "logmilp/autodiff.hpp"
#include "logmilp/bagging.hpp"
#include "logmilp/errors.hpp"
#include "logmilp/rng.hpp"
#include "logmilp/tensor.hpp"

namespace logmilp::model {

inline constexpr double kNormFloor = 1e-8;
inline constexpr double kAssignTemperature = 0.1;
inline constexpr double kAssignEps = 1e-8;
inline constexpr double kLogitClamp = 30.0;
inline constexpr int kEncoderLayers = 2;

struct ModelConfig {
  int d = 64;          // input embedding width
  int d_h = 16;        // hidden width
  int n_proto = 8;     // prototype count
  int pool_heads = 4;  // attention-pooling heads (K)
  int d_a = 0;         // pooling attention width; 0 means d_h / 2
  int heads_enc = 4;   // self-attention heads per encoder layer
  int h_c = 32;        // classifier hidden width
  std::uint64_t seed = 0;

  int attn_width() const { return d_a > 0 ? d_a : d_h / 2; }
  int classifier_in() const { return pool_heads * d_h + 3; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class S>
struct EncoderLayerSlots {
  S ln1_g, ln1_b;
  S wq, bq, wk, bk, wv, bv, wo, bo;
  S ln2_g, ln2_b;
  S w1, b1, w2, b2;
};

/// Every learnable tensor, generic over the slot type so the same layout serves
/// values, tape variables, gradients and optimizer moments.
template <class S>
struct ParamSlots {
  S w_proj, b_proj;
  std::vector<EncoderLayerSlots<S>> encoder;
  S lnf_g, lnf_b;
  S prototypes;
  std::vector<S> pool_v, pool_u;
  S beta_raw;
  S cls_w1, cls_b1, cls_w2, cls_b2;
};

/// Calls f(name, slot_of_sets...) for every tensor in a fixed order. All sets
/// must have the same layer and head counts.
template <class F, class First, class... Rest>
void zip_slots(F&& f, First&& first, Rest&&... rest) {
  f(std::string("w_proj"), first.w_proj, rest.w_proj...);
  f(std::string("b_proj"), first.b_proj, rest.b_proj...);
  for (std::size_t l = 0; l < first.encoder.size(); ++l) {
    const std::string p = "encoder." + std::to_string(l) + ".";
    auto& e = first.encoder[l];
    f(p + "ln1_g", e.ln1_g, rest.encoder[l].ln1_g...);
    f(p + "ln1_b", e.ln1_b, rest.encoder[l].ln1_b...);
    f(p + "wq", e.wq, rest.encoder[l].wq...);
    f(p + "bq", e.bq, rest.encoder[l].bq...);
    f(p + "wk", e.wk, rest.encoder[l].wk...);
    f(p + "bk", e.bk, rest.encoder[l].bk...);
    f(p + "wv", e.wv, rest.encoder[l].wv...);
    f(p + "bv", e.bv, rest.encoder[l].bv...);
    f(p + "wo", e.wo, rest.encoder[l].wo...);
    f(p + "bo", e.bo, rest.encoder[l].bo...);
    f(p + "ln2_g", e.ln2_g, rest.encoder[l].ln2_g...);
    f(p + "ln2_b", e.ln2_b, rest.encoder[l].ln2_b...);
    f(p + "w1", e.w1, rest.encoder[l].w1...);
    f(p + "b1", e.b1, rest.encoder[l].b1...);
    f(p + "w2", e.w2, rest.encoder[l].w2...);
    f(p + "b2", e.b2, rest.encoder[l].b2...);
  }
  f(std::string("lnf_g"), first.lnf_g, rest.lnf_g...);
  f(std::string("lnf_b"), first.lnf_b, rest.lnf_b...);
  f(std::string("prototypes"), first.prototypes, rest.prototypes...);
  for (std::size_t k = 0; k < first.pool_v.size(); ++k) {
    const std::string p = "pool." + std::to_string(k) + ".";
    f(p + "v", first.pool_v[k], rest.pool_v[k]...);
    f(p + "u", first.pool_u[k], rest.pool_u[k]...);
  }
  f(std::string("beta_raw"), first.beta_raw, rest.beta_raw...);
  f(std::string("cls_w1"), first.cls_w1, rest.cls_w1...);
  f(std::string("cls_b1"), first.cls_b1, rest.cls_b1...);
  f(std::string("cls_w2"), first.cls_w2, rest.cls_w2...);
  f(std::string("cls_b2"), first.cls_b2, rest.cls_b2...);
}

/// Resizes the vector members of `dst` to match `src`'s layer/head counts.
template <class A, class B>
void match_layout(ParamSlots<A>& dst, const ParamSlots<B>& src) {
  dst.encoder.resize(src.encoder.size());
  dst.pool_v.resize(src.pool_v.size());
  dst.pool_u.resize(src.pool_u.size());
}

template <class T>
struct ModelParams {
  ModelConfig config;
  ParamSlots<Mat<T>> w;

  /// Attention bias coefficient β = softplus(beta_raw) ≥ 0.
  T beta() const {
    const T x = w.beta_raw.data[0];
    return x > T(20) ? x : std::log1p(std::exp(x));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    zip_slots([&](const std::string&, const Mat<T>& m) { n += m.size(); }, w);
    return n;
  }

  /// Same layout, all zeros.
  ModelParams zeros_like() const {
    ModelParams z;
    z.config = config;
    match_layout(z.w, w);
    zip_slots([](const std::string&, Mat<T>& dst, const Mat<T>& src) { dst = Mat<T>(src.rows, src.cols); }, z.w, w);
    return z;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (!(a.config == b.config)) return false;
    bool same = true;
    zip_slots([&](const std::string&, const Mat<T>& x, const Mat<T>& y) { same = same && x == y; }, a.w, b.w);
    return same;
  }
};

template <class To, class From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out;
  out.config = p.config;
  match_layout(out.w, p.w);
  zip_slots([](const std::string&, Mat<To>& dst, const Mat<From>& s) { dst = cast<To>(s); }, out.w, p.w);
  return out;
}

/// Xavier-uniform weights, zero biases, unit layer-norm gains, prototypes uniform
/// on the unit sphere, β = 1. The output projections of each encoder sublayer
/// start at zero, so at init every instance is just its own projection.
/// All draws come from the seed's init stream.
template <class T>
ModelParams<T> init_params(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed, Stream::Init);
  auto xavier = [&](int in, int out) {
    Mat<T> m(in, out);
    const double a = std::sqrt(6.0 / (in + out));
    for (auto& v : m.data) v = static_cast<T>(rng.uniform(-a, a));
    return m;
  };
  auto zeros = [](int n) { return Mat<T>(1, n); };
  auto ones = [](int n) { return Mat<T>(1, n, T(1)); };

  ModelParams<T> p;
  p.config = cfg;
  p.config.d_a = cfg.attn_width();
  auto& w = p.w;
  const int dh = cfg.d_h;
  w.w_proj = xavier(cfg.d, dh);
  w.b_proj = zeros(dh);
  for (int l = 0; l < kEncoderLayers; ++l) {
    EncoderLayerSlots<Mat<T>> e;
    e.ln1_g = ones(dh);
    e.ln1_b = zeros(dh);
    e.wq = xavier(dh, dh);
    e.bq = zeros(dh);
    e.wk = xavier(dh, dh);
    e.bk = zeros(dh);
    e.wv = xavier(dh, dh);
    e.bv = zeros(dh);
    e.wo = Mat<T>(dh, dh);  // residual branches start closed
    e.bo = zeros(dh);
    e.ln2_g = ones(dh);
    e.ln2_b = zeros(dh);
    e.w1 = xavier(dh, 4 * dh);
    e.b1 = zeros(4 * dh);
    e.w2 = Mat<T>(4 * dh, dh);
    e.b2 = zeros(dh);
    w.encoder.push_back(std::move(e));
  }
  w.lnf_g = ones(dh);
  w.lnf_b = zeros(dh);
  w.prototypes = Mat<T>(cfg.n_proto, dh);
  for (int j = 0; j < cfg.n_proto; ++j) {
    std::vector<double> g(dh);
    double ss = 0;
    for (auto& v : g) {
      v = rng.normal();
      ss += v * v;
    }
    for (int c = 0; c < dh; ++c) w.prototypes(j, c) = static_cast<T>(g[c] / std::sqrt(ss));
  }
  for (int k = 0; k < cfg.pool_heads; ++k) {
    w.pool_v.push_back(xavier(dh, cfg.attn_width()));
    w.pool_u.push_back(xavier(cfg.attn_width(), 1));
  }
  w.beta_raw = Mat<T>(1, 1, static_cast<T>(std::log(std::exp(1.0) - 1.0)));
  w.cls_w1 = xavier(cfg.classifier_in(), cfg.h_c);
  w.cls_b1 = zeros(cfg.h_c);
  w.cls_w2 = xavier(cfg.h_c, 1);
  w.cls_b2 = zeros(1);
  return p;
}

// ---------------------------------------------------------------------------------
// Outputs

template <class T>
struct PrototypeStats {
  Mat<T> s;          // W×N_p similarities
  std::vector<T> m;  // per-instance max similarity
  std::vector<T> b;  // 1 - m
  T m_bag = 0;
  T e_bag = 0;
  T v_bag = 0;

  std::array<T, 3> features() const { return {m_bag, e_bag, v_bag}; }
};

template <class T>
struct PoolOutput {
  Mat<T> attention;  // K×W
  std::vector<T> z_cat;
};

template <class T>
struct ForwardOutput {
  double p = 0.5;  // bag anomaly probability
  T logit = 0;
  Mat<T> attention;  // K×W
  std::vector<T> z_cat;
  PrototypeStats<T> stats;
};

/// sigmoid computed in double so that a clamped logit of ±30 stays strictly inside (0, 1).
inline double probability(double logit) { return 1.0 / (1.0 + std::exp(-logit)); }

// ---------------------------------------------------------------------------------
// Graph construction shared by inference and training.

namespace graph {

using ad::Tape;
using ad::Var;

template <class T>
ParamSlots<Var> bind(Tape<T>& tape, const ModelParams<T>& params, bool trainable) {
  ParamSlots<Var> vars;
  match_layout(vars, params.w);
  zip_slots([&](const std::string&, Var& v, const Mat<T>& m) { v = tape.parameter(m, trainable); }, vars, params.w);
  return vars;
}

template <class T>
Var project(Tape<T>& t, const ParamSlots<Var>& pv, Var x) {
  return t.add_row(t.matmul(x, pv.w_proj), pv.b_proj);
}

template <class T>
Var encode(Tape<T>& t, const ParamSlots<Var>& pv, const ModelConfig& cfg, Var h, std::span<const unsigned char> mask) {
  const int dh = cfg.d_h;
  const int dk = dh / cfg.heads_enc;
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));
  Var x = h;
  for (const auto& e : pv.encoder) {
    Var x1 = t.layer_norm(x, e.ln1_g, e.ln1_b);
    Var q = t.add_row(t.matmul(x1, e.wq), e.bq);
    Var k = t.add_row(t.matmul(x1, e.wk), e.bk);
    Var v = t.add_row(t.matmul(x1, e.wv), e.bv);
    std::vector<Var> heads;
    for (int hd = 0; hd < cfg.heads_enc; ++hd) {
      Var qh = t.slice_cols(q, hd * dk, dk);
      Var kh = t.slice_cols(k, hd * dk, dk);
      Var vh = t.slice_cols(v, hd * dk, dk);
      Var scores = t.affine(t.matmul_nt(qh, kh), scale, T(0));
      Var attn = t.masked_softmax(scores, mask, mask);
      heads.push_back(t.matmul(attn, vh));
    }
    Var o = heads.size() == 1 ? heads[0] : t.concat_cols(heads);
    x = t.add(x, t.add_row(t.matmul(o, e.wo), e.bo));
    Var x2 = t.layer_norm(x, e.ln2_g, e.ln2_b);
    Var f = t.gelu(t.add_row(t.matmul(x2, e.w1), e.b1));
    x = t.add(x, t.add_row(t.matmul(f, e.w2), e.b2));
  }
  return t.layer_norm(x, pv.lnf_g, pv.lnf_b);
}

struct StatsVars {
  Var s, m, b, m_bag, e_bag, v_bag;
};

template <class T>
void check_norms(const Mat<T>& m, std::span<const unsigned char> mask, const char* what) {
  for (int i = 0; i < m.rows; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    T ss = 0;
    for (T v : m.row(i)) ss += v * v;
    // A zero row is fine: the floor maps it to the zero direction. Only a norm the
    // floor cannot repair (NaN or infinite) is fatal.
    if (!std::isfinite(ss)) throw DegenerateVector(std::string(what) + " row " + std::to_string(i) + " has a non-finite norm");
  }
}

template <class T>
StatsVars prototype_stats(Tape<T>& t, Var z, Var protos, std::span<const unsigned char> mask) {
  check_norms(t.value(z), mask, "instance");
  check_norms(t.value(protos), {}, "prototype");
  const T floor = static_cast<T>(kNormFloor);
  Var zn = t.row_normalize(z, floor);
  Var pn = t.row_normalize(protos, floor);
  StatsVars sv;
  sv.s = t.reciprocal_one_plus(t.pairwise_distance(zn, pn));
  sv.m = t.row_max(sv.s);
  sv.b = t.affine(sv.m, T(-1), T(1));
  sv.m_bag = t.masked_max(sv.m, mask);
  sv.v_bag = t.masked_mean_rows(sv.m, mask);
  const int n_proto = t.value(protos).rows;
  if (n_proto >= 2) {
    const int w = t.value(z).rows;
    std::vector<unsigned char> rows(w, 1), cols(n_proto, 1);
    Var q = t.masked_softmax(t.affine(sv.s, T(1) / static_cast<T>(kAssignTemperature), T(0)), rows, cols);
    Var qbar = t.masked_mean_rows(q, mask);
    Var e = t.entropy(qbar, static_cast<T>(kAssignEps), static_cast<T>(std::log(static_cast<double>(n_proto))));
    sv.e_bag = t.clamp(e, T(0), T(1));
  } else {
    sv.e_bag = t.constant(Mat<T>(1, 1));
  }
  return sv;
}

struct PoolVars {
  std::vector<Var> attention;  // K rows of 1×W
  Var z_cat;
};

template <class T>
PoolVars attention_pool(Tape<T>& t, const ParamSlots<Var>& pv, Var z, Var b, std::span<const unsigned char> mask) {
  static const unsigned char one = 1;
  Var beta = t.softplus(pv.beta_raw);
  Var bias = t.scale_by(b, beta);
  PoolVars out;
  std::vector<Var> pooled;
  for (std::size_t k = 0; k < pv.pool_v.size(); ++k) {
    Var gate = t.tanh(t.matmul(z, pv.pool_v[k]));
    Var logits = t.add(t.matmul(gate, pv.pool_u[k]), bias);
    Var a = t.masked_softmax(t.transpose(logits), std::span<const unsigned char>(&one, 1), mask);
    out.attention.push_back(a);
    pooled.push_back(t.matmul(a, z));
  }
  out.z_cat = pooled.size() == 1 ? pooled[0] : t.concat_cols(pooled);
  return out;
}

/// Returns the clamped logit as a 1×1 variable.
template <class T>
Var classify(Tape<T>& t, const ParamSlots<Var>& pv, Var z_cat, Var m_bag, Var e_bag, Var v_bag) {
  Var in = t.concat_cols({z_cat, m_bag, e_bag, v_bag});
  Var hidden = t.tanh(t.add_row(t.matmul(in, pv.cls_w1), pv.cls_b1));
  Var logit = t.add_row(t.matmul(hidden, pv.cls_w2), pv.cls_b2);
  return t.clamp(logit, static_cast<T>(-kLogitClamp), static_cast<T>(kLogitClamp));
}

struct BagVars {
  Var h, z;
  StatsVars stats;
  PoolVars pool;
  Var logit;
};

template <class T>
BagVars forward(Tape<T>& t, const ParamSlots<Var>& pv, const ModelConfig& cfg, Var x, std::span<const unsigned char> mask) {
  if (std::find(mask.begin(), mask.end(), 1) == mask.end()) throw ShapeMismatch("bag has no valid instance");
  BagVars bv;
  bv.h = project(t, pv, x);
  bv.z = encode(t, pv, cfg, bv.h, mask);
  bv.stats = prototype_stats(t, bv.z, pv.prototypes, mask);
  bv.pool = attention_pool(t, pv, bv.z, bv.stats.b, mask);
  bv.logit = classify(t, pv, bv.pool.z_cat, bv.stats.m_bag, bv.stats.e_bag, bv.stats.v_bag);
  return bv;
}

template <class T>
PrototypeStats<T> read_stats(const Tape<T>& t, const StatsVars& sv) {
  PrototypeStats<T> st;
  st.s = t.value(sv.s);
  st.m = t.value(sv.m).data;
  st.b = t.value(sv.b).data;
  st.m_bag = t.scalar(sv.m_bag);
  st.e_bag = t.scalar(sv.e_bag);
  st.v_bag = t.scalar(sv.v_bag);
  return st;
}

template <class T>
Mat<T> read_attention(const Tape<T>& t, const PoolVars& pool) {
  const int w = t.value(pool.attention.front()).cols;
  Mat<T> a(static_cast<int>(pool.attention.size()), w);
  for (std::size_t k = 0; k < pool.attention.size(); ++k) {
    const auto& row = t.value(pool.attention[k]);
    std::copy(row.data.begin(), row.data.end(), a.row(static_cast<int>(k)).begin());
  }
  return a;
}

template <class T>
ForwardOutput<T> read_output(const Tape<T>& t, const BagVars& bv) {
  ForwardOutput<T> out;
  out.logit = t.scalar(bv.logit);
  out.p = probability(static_cast<double>(out.logit));
  out.attention = read_attention(t, bv.pool);
  out.z_cat = t.value(bv.pool.z_cat).data;
  out.stats = read_stats(t, bv.stats);
  return out;
}

}  // namespace graph

// ---------------------------------------------------------------------------------
// Inference entry points. Each is a pure function of its inputs.

template <class T>
void check_bag_shape(const Mat<T>& x, std::span<const unsigned char> mask, const ModelConfig& cfg) {
  if (x.cols != cfg.d) throw ShapeMismatch("input width " + std::to_string(x.cols) + " != d " + std::to_string(cfg.d));
  if (static_cast<int>(mask.size()) != x.rows) throw ShapeMismatch("mask length differs from bag width");
}

template <class T>
Mat<T> project(const Mat<T>& x, const ModelParams<T>& params) {
  if (x.cols != params.config.d) throw ShapeMismatch("project: input width != d");
  ad::Tape<T> t;
  auto pv = graph::bind(t, params, false);
  return t.value(graph::project(t, pv, t.constant(x)));
}

template <class T>
Mat<T> encode(const Mat<T>& h, std::span<const unsigned char> mask, const ModelParams<T>& params) {
  if (h.cols != params.config.d_h || static_cast<int>(mask.size()) != h.rows) throw ShapeMismatch("encode: shape");
  ad::Tape<T> t;
  auto pv = graph::bind(t, params, false);
  return t.value(graph::encode(t, pv, params.config, t.constant(h), mask));
}

template <class T>
PrototypeStats<T> prototype_stats(const Mat<T>& z, std::span<const unsigned char> mask, const Mat<T>& prototypes) {
  if (z.cols != prototypes.cols || static_cast<int>(mask.size()) != z.rows) throw ShapeMismatch("prototype_stats: shape");
  ad::Tape<T> t;
  return graph::read_stats(t, graph::prototype_stats(t, t.constant(z), t.constant(prototypes), mask));
}

template <class T>
PoolOutput<T> attention_pool(const Mat<T>& z, std::span<const T> bias, std::span<const unsigned char> mask,
                             const ModelParams<T>& params) {
  if (z.cols != params.config.d_h || static_cast<int>(bias.size()) != z.rows || static_cast<int>(mask.size()) != z.rows)
    throw ShapeMismatch("attention_pool: shape");
  ad::Tape<T> t;
  auto pv = graph::bind(t, params, false);
  Mat<T> b(z.rows, 1);
  std::copy(bias.begin(), bias.end(), b.data.begin());
  auto pool = graph::attention_pool(t, pv, t.constant(z), t.constant(b), mask);
  return {graph::read_attention(t, pool), t.value(pool.z_cat).data};
}

/// Bag probability from [Z_cat ; F_p].
template <class T>
double classify(std::span<const T> z_cat, std::array<T, 3> features, const ModelParams<T>& params) {
  if (static_cast<int>(z_cat.size()) != params.config.pool_heads * params.config.d_h)
    throw ShapeMismatch("classify: Z_cat length");
  ad::Tape<T> t;
  auto pv = graph::bind(t, params, false);
  Mat<T> zc(1, static_cast<int>(z_cat.size()));
  std::copy(z_cat.begin(), z_cat.end(), zc.data.begin());
  ad::Var logit = graph::classify(t, pv, t.constant(zc), t.constant(Mat<T>(1, 1, features[0])),
                              t.constant(Mat<T>(1, 1, features[1])), t.constant(Mat<T>(1, 1, features[2])));
  return probability(static_cast<double>(t.scalar(logit)));
}

template <class T>
ForwardOutput<T> forward_one(const Mat<T>& x, std::span<const unsigned char> mask, const ModelParams<T>& params) {
  check_bag_shape(x, mask, params.config);
  ad::Tape<T> t;
  auto pv = graph::bind(t, params, false);
  return graph::read_output(t, graph::forward(t, pv, params.config, t.constant(x), mask));
}

template <class T>
std::vector<ForwardOutput<T>> forward(std::span<const bagging::Bag> bags, const ModelParams<T>& params) {
  std::vector<ForwardOutput<T>> out;
  out.reserve(bags.size());
  for (const auto& bag : bags) out.push_back(forward_one(cast<T>(bag.embeddings), bag.mask, params));
  return out;
}

// ---------------------------------------------------------------------------------
// Checkpoints: "LMCKPT1", key=value header, then per tensor a line
// "param <name> <rows> <cols>" followed by rows·cols little-endian float32 values.

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params);
ModelParams<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace logmilp::model
