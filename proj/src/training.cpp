#include "logmilp/training.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

#include "logmilp/eval.hpp"

namespace logmilp::training {

void TrainConfig::validate() const {
  for (double v : {lambda_p, lambda_a, lambda_c, delta_p, delta_e, w_ent, delta_c, eps, focal_gamma})
    if (!(v >= 0)) throw ConfigError("loss weights, margins, eps and focal_gamma must be >= 0");
  if (delta_c > 1) throw ConfigError("delta_c must lie in [0, 1]");
  if (!(focal_alpha > 0 && focal_alpha < 1)) throw ConfigError("focal_alpha must lie in (0, 1)");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0)) throw ConfigError("lr must be > 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

double focal_loss(std::span<const double> p, std::span<const int> y, double gamma, double alpha) {
  if (p.empty()) return 0.0;
  double sum = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pt = y[i] == 1 ? p[i] : 1.0 - p[i];
    const double at = y[i] == 1 ? alpha : 1.0 - alpha;
    sum += -at * std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  return sum / static_cast<double>(p.size());
}

FocalTerm focal_from_logit(double logit, int y, double gamma, double alpha) {
  // With s = +1 for positives and -1 for negatives, p_t = sigmoid(s·z) and
  // q = 1 - p_t = sigmoid(-s·z).
  const double s = y == 1 ? 1.0 : -1.0;
  const double sz = s * logit;
  const double log_pt = sz >= 0 ? -std::log1p(std::exp(-sz)) : sz - std::log1p(std::exp(sz));
  const double pt = std::exp(log_pt);
  const double q = 1.0 / (1.0 + std::exp(sz));
  const double at = y == 1 ? alpha : 1.0 - alpha;
  const double qg = std::pow(q, gamma);
  FocalTerm t;
  t.loss = -at * qg * log_pt;
  t.dlogit = s * at * (gamma * qg * pt * log_pt - qg * q);
  return t;
}

double proto_loss(std::span<const double> m_bag, std::span<const double> e_bag, std::span<const int> y, double delta_p,
                  double delta_e, double w_ent) {
  double pos = 0, neg = 0;
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 1) {
      pos += std::max(0.0, delta_p - m_bag[i]);
      ++n_pos;
    } else {
      neg += std::max(0.0, delta_e - e_bag[i]);
      ++n_neg;
    }
  }
  return (n_pos ? pos / n_pos : 0.0) + w_ent * (n_neg ? neg / n_neg : 0.0);
}

double normalized_entropy(std::span<const double> attention, std::span<const unsigned char> mask, double eps) {
  const auto valid = std::count(mask.begin(), mask.end(), 1);
  if (valid < 2) return 0.0;
  double h = 0;
  for (std::size_t i = 0; i < attention.size(); ++i)
    if (mask[i]) h -= attention[i] * std::log(attention[i] + eps);
  return h / std::log(static_cast<double>(valid));
}

double attention_entropy_loss(std::span<const Mat<double>> attention, std::span<const std::vector<unsigned char>> masks,
                              double eps) {
  double sum = 0;
  std::size_t terms = 0;
  for (std::size_t b = 0; b < attention.size(); ++b) {
    for (int k = 0; k < attention[b].rows; ++k) {
      sum += normalized_entropy(attention[b].row(k), masks[b], eps);
      ++terms;
    }
  }
  return terms ? sum / static_cast<double>(terms) : 0.0;
}

double consistency_loss(std::span<const double> p_orig, std::span<const double> p_pert, std::span<const int> y,
                        double delta_c) {
  double sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != 1) continue;
    sum += std::max(0.0, delta_c - (p_orig[i] - p_pert[i]));
    ++n_pos;
  }
  return n_pos ? sum / static_cast<double>(n_pos) : 0.0;
}

bagging::Bag perturb_bag(const bagging::Bag& bag, int index) {
  if (index < 0 || index >= bag.width() || !bag.mask[index])
    throw InvalidIndex("cannot perturb position " + std::to_string(index));
  bagging::Bag out = bag;
  for (auto& v : out.embeddings.row(index)) v = 0.0f;
  return out;
}

std::vector<double> sampling_weights(std::span<const int> labels) {
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t n_neg = labels.size() - n_pos;
  std::vector<double> w(labels.size(), 1.0);
  if (n_pos == 0 || n_neg == 0) return w;
  for (std::size_t i = 0; i < labels.size(); ++i) w[i] = labels[i] == 1 ? 1.0 / n_pos : 1.0 / n_neg;
  return w;
}

std::vector<std::size_t> sample_indices(std::span<const double> weights, std::size_t n, Rng& rng) {
  std::vector<double> cdf(weights.size());
  double acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    cdf[i] = acc;
  }
  std::vector<std::size_t> out(n);
  for (auto& idx : out) {
    const double u = rng.uniform() * acc;
    idx = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    idx = std::min(idx, weights.size() - 1);
  }
  return out;
}

Adam::Adam(const model::ModelParams<float>& params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_ = params.zeros_like().w;
  v_ = params.zeros_like().w;
}

void Adam::step(model::ModelParams<float>& params, const model::ParamSlots<Mat<float>>& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto b1 = static_cast<float>(beta1_);
  const auto b2 = static_cast<float>(beta2_);
  const auto step = static_cast<float>(lr_ / c1);
  const auto inv_c2 = static_cast<float>(1.0 / c2);
  const auto eps = static_cast<float>(eps_);
  model::zip_slots(
      [&](const std::string&, Mat<float>& p, const Mat<float>& g, Mat<float>& m, Mat<float>& v) {
        for (std::size_t i = 0; i < p.size(); ++i) {
          m.data[i] = b1 * m.data[i] + (1.0f - b1) * g.data[i];
          v.data[i] = b2 * v.data[i] + (1.0f - b2) * g.data[i] * g.data[i];
          p.data[i] -= step * m.data[i] / (std::sqrt(v.data[i] * inv_c2) + eps);
        }
      },
      params.w, grads, m_, v_);
}

EpochReport train_epoch(model::ModelParams<float>& params, const bagging::BagDataset& data, const TrainConfig& cfg,
                        Adam& optimizer, Rng& sampler) {
  if (data.bags.empty()) throw EmptyInput("training set is empty");
  const auto start = std::chrono::steady_clock::now();
  const auto labels = data.labels();
  const auto weights = sampling_weights(labels);
  const auto order = sample_indices(weights, data.size(), sampler);

  EpochReport rep;
  std::vector<const bagging::Bag*> batch;
  for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
    batch.clear();
    const std::size_t end = std::min(order.size(), off + cfg.batch_size);
    for (std::size_t i = off; i < end; ++i) batch.push_back(&data.bags[order[i]]);
    auto res = batch_loss<float>(params, batch, cfg, true);
    optimizer.step(params, res.grads);
    rep.mean.cls += res.loss.cls;
    rep.mean.proto += res.loss.proto;
    rep.mean.attn += res.loss.attn;
    rep.mean.con += res.loss.con;
    rep.mean.total += res.loss.total;
    ++rep.batches;
    rep.bags += batch.size();
    for (const auto* b : batch) rep.positive_bags += b->label == 1;
  }
  const auto nb = static_cast<double>(rep.batches);
  rep.mean.cls /= nb;
  rep.mean.proto /= nb;
  rep.mean.attn /= nb;
  rep.mean.con /= nb;
  rep.mean.total /= nb;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

double validation_f1(const model::ModelParams<float>& params, const bagging::BagDataset& val) {
  const auto scores = eval::bag_scores(params, val);
  const auto labels = val.labels();
  const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
  if (!both) return 0.0;
  return eval::select_threshold(scores, labels).f1;
}

void write_log_header(std::ostream& os) { os << "epoch\tL_cls\tL_proto\tL_attn\tL_con\tL_total\tval_f1\n"; }

void write_log_line(std::ostream& os, const EpochRecord& rec) {
  char buf[256];
  const auto& m = rec.report.mean;
  std::snprintf(buf, sizeof buf, "%d\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\n", rec.epoch, m.cls, m.proto, m.attn, m.con,
                m.total, rec.val_f1);
  os << buf;
}

FitResult fit(const model::ModelParams<float>& init, const bagging::BagDataset& train, const bagging::BagDataset& val,
              const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  FitResult out;
  out.best = init;
  if (log) write_log_header(*log);
  if (cfg.epochs == 0) return out;

  model::ModelParams<float> params = init;
  Adam optimizer(params, cfg.lr);
  Rng sampler(cfg.seed, Stream::Sampler);
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.report = train_epoch(params, train, cfg, optimizer, sampler);
    rec.val_f1 = validation_f1(params, val);
    if (log) {
      write_log_line(*log, rec);
      log->flush();
    }
    out.history.push_back(rec);
    if (rec.val_f1 > out.best_val_f1) {
      out.best_val_f1 = rec.val_f1;
      out.best_epoch = epoch;
      out.best = params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return out;
}

}  // namespace logmilp::training
