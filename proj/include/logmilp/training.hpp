#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "logmilp/autodiff.hpp"
#include "logmilp/bagging.hpp"
#include "logmilp/errors.hpp"
#include "logmilp/model.hpp"
#include "logmilp/rng.hpp"

namespace logmilp::training {

struct TrainConfig {
  double lambda_p = 0.1;
  double lambda_a = 0.01;
  double lambda_c = 0.5;
  double delta_p = 0.7;
  double delta_e = 0.5;
  double w_ent = 1.0;
  double delta_c = 0.3;
  double eps = 1e-8;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  bool use_consistency = true;
  int epochs = 50;
  int batch_size = 32;
  double lr = 1e-3;
  int patience = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossTerms {
  double cls = 0;
  double proto = 0;
  double attn = 0;
  double con = 0;
  double total = 0;

  friend bool operator==(const LossTerms&, const LossTerms&) = default;
};

struct EpochReport {
  LossTerms mean;  // averaged over mini-batches
  std::size_t bags = 0;
  std::size_t positive_bags = 0;
  std::size_t batches = 0;
  double seconds = 0;
};

// ---------------------------------------------------------------- loss functions

/// Mean of −α_t (1−p_t)^γ ln p_t over the batch.
double focal_loss(std::span<const double> p, std::span<const int> y, double gamma, double alpha);

/// Focal loss of one bag and its derivative with respect to the logit, computed
/// from the logit for numerical stability.
struct FocalTerm {
  double loss;
  double dlogit;
};
FocalTerm focal_from_logit(double logit, int y, double gamma, double alpha);

/// mean_{Y=1} max(0, Δ_p − M_bag) + w_ent · mean_{Y=0} max(0, Δ_e − E_bag); empty groups give 0.
double proto_loss(std::span<const double> m_bag, std::span<const double> e_bag, std::span<const int> y, double delta_p,
                  double delta_e, double w_ent);

/// Normalized attention entropy of one head row over its valid positions; 0 when
/// fewer than two positions are valid.
double normalized_entropy(std::span<const double> attention, std::span<const unsigned char> mask, double eps);

/// Mean normalized entropy over every bag (K×W attention each) and head.
double attention_entropy_loss(std::span<const Mat<double>> attention, std::span<const std::vector<unsigned char>> masks,
                              double eps);

/// mean_{Y=1} max(0, Δ_c − (P_orig − P_pert)); 0 without positive bags.
double consistency_loss(std::span<const double> p_orig, std::span<const double> p_pert, std::span<const int> y,
                        double delta_c);

// ---------------------------------------------------------------- key instances

/// Zero-based head and position of the key instance.
struct KeyInstance {
  int head = 0;
  int index = 0;
  friend bool operator==(const KeyInstance&, const KeyInstance&) = default;
};

/// Head of minimum attention entropy (ties → lowest head), then its valid position
/// of maximum attention (ties → lowest index).
template <class T>
KeyInstance select_key_instance(const Mat<T>& attention, std::span<const unsigned char> mask) {
  KeyInstance key;
  double best = 0;
  for (int k = 0; k < attention.rows; ++k) {
    double h = 0;
    for (int i = 0; i < attention.cols; ++i) {
      const double a = static_cast<double>(attention(k, i));
      if (mask[i] && a > 0) h -= a * std::log(a);
    }
    if (k == 0 || h < best) {
      best = h;
      key.head = k;
    }
  }
  key.index = -1;
  for (int i = 0; i < attention.cols; ++i) {
    if (!mask[i]) continue;
    if (key.index < 0 || attention(key.head, i) > attention(key.head, key.index)) key.index = i;
  }
  if (key.index < 0) throw InvalidIndex("attention row has no valid position");
  return key;
}

/// Copy of `bag` with embedding row `index` zeroed; the mask is unchanged.
bagging::Bag perturb_bag(const bagging::Bag& bag, int index);

// ---------------------------------------------------------------- sampling

/// Per-bag weight 1 / (count of its class); uniform when a class is absent.
std::vector<double> sampling_weights(std::span<const int> labels);

/// `n` indices drawn with replacement in proportion to `weights`.
std::vector<std::size_t> sample_indices(std::span<const double> weights, std::size_t n, Rng& rng);

// ---------------------------------------------------------------- one mini-batch

template <class T>
struct BatchResult {
  LossTerms loss;
  std::vector<double> p_orig;
  std::vector<double> p_pert;          // only for positive bags when consistency is on; else empty
  std::vector<KeyInstance> keys;       // per bag; meaningful for positive bags
  model::ParamSlots<Mat<T>> grads;     // filled when requested
  bool has_grads = false;
};

/// Forward, the four losses and (optionally) the gradient of L_total for one
/// mini-batch. `fixed_keys`, when given, replaces key-instance selection; the
/// gradient checker uses it to hold the perturbation indices constant.
template <class T>
BatchResult<T> batch_loss(const model::ModelParams<T>& params, std::span<const bagging::Bag* const> bags,
                          const TrainConfig& cfg, bool want_grads,
                          const std::vector<KeyInstance>* fixed_keys = nullptr) {
  using ad::Var;
  const std::size_t n = bags.size();
  ad::Tape<T> tape;
  auto pv = model::graph::bind(tape, params, want_grads);

  std::vector<model::graph::BagVars> orig;
  orig.reserve(n);
  std::vector<int> y(n);
  std::size_t n_pos = 0;
  for (std::size_t b = 0; b < n; ++b) {
    const auto& bag = *bags[b];
    model::check_bag_shape(bag.embeddings, bag.mask, params.config);
    orig.push_back(model::graph::forward(tape, pv, params.config, tape.constant(cast<T>(bag.embeddings)), bag.mask));
    y[b] = bag.label;
    n_pos += bag.label == 1;
  }
  const std::size_t n_neg = n - n_pos;

  BatchResult<T> res;
  res.p_orig.resize(n);
  res.keys.resize(n);
  std::vector<double> logit(n), m_bag(n), e_bag(n);
  for (std::size_t b = 0; b < n; ++b) {
    logit[b] = static_cast<double>(tape.scalar(orig[b].logit));
    res.p_orig[b] = model::probability(logit[b]);
    m_bag[b] = static_cast<double>(tape.scalar(orig[b].stats.m_bag));
    e_bag[b] = static_cast<double>(tape.scalar(orig[b].stats.e_bag));
  }

  // Classification.
  std::vector<double> d_logit(n, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    const auto term = focal_from_logit(logit[b], y[b], cfg.focal_gamma, cfg.focal_alpha);
    res.loss.cls += term.loss / static_cast<double>(n);
    d_logit[b] += term.dlogit / static_cast<double>(n);
  }

  // Prototype margins.
  std::vector<double> d_m(n, 0.0), d_e(n, 0.0);
  double pos_sum = 0, neg_sum = 0;
  for (std::size_t b = 0; b < n; ++b) {
    if (y[b] == 1) {
      const double h = cfg.delta_p - m_bag[b];
      if (h > 0) {
        pos_sum += h;
        d_m[b] = -cfg.lambda_p / static_cast<double>(n_pos);
      }
    } else {
      const double h = cfg.delta_e - e_bag[b];
      if (h > 0) {
        neg_sum += h;
        d_e[b] = -cfg.lambda_p * cfg.w_ent / static_cast<double>(n_neg);
      }
    }
  }
  res.loss.proto = (n_pos ? pos_sum / n_pos : 0.0) + cfg.w_ent * (n_neg ? neg_sum / n_neg : 0.0);

  // Attention entropy, averaged over bags and heads.
  const int heads = params.config.pool_heads;
  std::vector<std::vector<Mat<T>>> d_attn(n);
  for (std::size_t b = 0; b < n; ++b) {
    const auto& mask = bags[b]->mask;
    const int valid = bags[b]->valid_count();
    d_attn[b].resize(heads);
    for (int k = 0; k < heads; ++k) {
      const Mat<T>& a = tape.value(orig[b].pool.attention[k]);
      d_attn[b][k] = Mat<T>(1, a.cols);
      if (valid < 2) continue;
      const double denom = std::log(static_cast<double>(valid));
      const double scale = cfg.lambda_a / (static_cast<double>(n) * heads);
      double h = 0;
      for (int i = 0; i < a.cols; ++i) {
        if (!mask[i]) continue;
        const double ai = static_cast<double>(a.data[i]);
        h -= ai * std::log(ai + cfg.eps);
        d_attn[b][k].data[i] = static_cast<T>(-scale * (std::log(ai + cfg.eps) + ai / (ai + cfg.eps)) / denom);
      }
      res.loss.attn += h / denom / (static_cast<double>(n) * heads);
    }
  }

  // Counterfactual consistency on positive bags.
  std::vector<double> d_logit_pert(n, 0.0);
  std::vector<Var> pert_logit(n);
  if (cfg.use_consistency && n_pos > 0) {
    res.p_pert.assign(n, 0.0);
    double con_sum = 0;
    for (std::size_t b = 0; b < n; ++b) {
      if (y[b] != 1) continue;
      res.keys[b] = fixed_keys ? (*fixed_keys)[b]
                               : select_key_instance(model::graph::read_attention(tape, orig[b].pool), bags[b]->mask);
      Mat<T> x = cast<T>(bags[b]->embeddings);
      if (res.keys[b].index < 0 || res.keys[b].index >= x.rows || !bags[b]->mask[res.keys[b].index])
        throw InvalidIndex("key instance is not a valid position");
      for (auto& v : x.row(res.keys[b].index)) v = T(0);
      auto pert = model::graph::forward(tape, pv, params.config, tape.constant(std::move(x)), bags[b]->mask);
      pert_logit[b] = pert.logit;
      const double lp = static_cast<double>(tape.scalar(pert.logit));
      res.p_pert[b] = model::probability(lp);
      const double h = cfg.delta_c - (res.p_orig[b] - res.p_pert[b]);
      if (h > 0) {
        con_sum += h;
        const double g = cfg.lambda_c / static_cast<double>(n_pos);
        d_logit[b] += -g * res.p_orig[b] * (1.0 - res.p_orig[b]);
        d_logit_pert[b] = g * res.p_pert[b] * (1.0 - res.p_pert[b]);
      }
    }
    res.loss.con = con_sum / static_cast<double>(n_pos);
  }

  res.loss.total = res.loss.cls + cfg.lambda_p * res.loss.proto + cfg.lambda_a * res.loss.attn + cfg.lambda_c * res.loss.con;
  if (!std::isfinite(res.loss.total)) {
    throw NonFiniteLoss("non-finite loss: cls=" + std::to_string(res.loss.cls) + " proto=" + std::to_string(res.loss.proto) +
                        " attn=" + std::to_string(res.loss.attn) + " con=" + std::to_string(res.loss.con));
  }

  if (!want_grads) return res;

  for (std::size_t b = 0; b < n; ++b) {
    tape.seed_scalar(orig[b].logit, static_cast<T>(d_logit[b]));
    tape.seed_scalar(orig[b].stats.m_bag, static_cast<T>(d_m[b]));
    tape.seed_scalar(orig[b].stats.e_bag, static_cast<T>(d_e[b]));
    for (int k = 0; k < heads; ++k) tape.seed(orig[b].pool.attention[k], d_attn[b][k]);
    if (pert_logit[b].id >= 0) tape.seed_scalar(pert_logit[b], static_cast<T>(d_logit_pert[b]));
  }
  tape.backward();

  model::match_layout(res.grads, params.w);
  model::zip_slots(
      [&](const std::string&, Mat<T>& g, const Var& v, const Mat<T>& p) {
        const Mat<T>& tg = tape.grad(v);
        g = tg.empty() ? Mat<T>(p.rows, p.cols) : tg;
      },
      res.grads, pv, params.w);
  res.has_grads = true;
  return res;
}

// ---------------------------------------------------------------- optimizer

/// Adam with bias correction and no weight decay.
class Adam {
 public:
  Adam(const model::ModelParams<float>& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(model::ModelParams<float>& params, const model::ParamSlots<Mat<float>>& grads);
  long steps() const { return t_; }

 private:
  model::ParamSlots<Mat<float>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// ---------------------------------------------------------------- loops

/// One pass of weighted-sampled indices (length = dataset size) in mini-batches.
EpochReport train_epoch(model::ModelParams<float>& params, const bagging::BagDataset& data, const TrainConfig& cfg,
                        Adam& optimizer, Rng& sampler);

struct EpochRecord {
  int epoch = 0;
  EpochReport report;
  double val_f1 = 0;
};

struct FitResult {
  model::ModelParams<float> best;
  int best_epoch = 0;  // 0 = initial parameters
  double best_val_f1 = -1;
  std::vector<EpochRecord> history;
};

/// Trains up to cfg.epochs, keeping the parameters with the best validation F1
/// (threshold chosen on validation) and stopping after cfg.patience epochs without
/// improvement. When `log` is set, writes the tab-separated epoch log.
FitResult fit(const model::ModelParams<float>& init, const bagging::BagDataset& train, const bagging::BagDataset& val,
              const TrainConfig& cfg, std::ostream* log = nullptr);

/// Validation F1 at the validation-selected threshold; 0 when validation lacks a class.
double validation_f1(const model::ModelParams<float>& params, const bagging::BagDataset& val);

void write_log_header(std::ostream& os);
void write_log_line(std::ostream& os, const EpochRecord& rec);

}  // namespace logmilp::training
