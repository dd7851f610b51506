#include "logmilp/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "logmilp/errors.hpp"
#include "logmilp/training.hpp"

namespace logmilp::eval {

namespace {

void require_both_classes(std::span<const int> labels) {
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size()))
    throw SingleClass("metric needs both positive and negative labels");
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  require_both_classes(labels);
  // Average ranks over tie groups; AUC = (R_pos − n_pos(n_pos+1)/2) / (n_pos·n_neg).
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) rank_sum += avg_rank;
    i = j;
  }
  for (int l : labels) n_pos += l == 1;
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(labels.size() - n_pos);
  return (rank_sum - np * (np + 1) / 2.0) / (np * nn);
}

Prf prf_at_threshold(std::span<const double> scores, std::span<const int> labels, double tau) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] > tau;
    if (pred && labels[i] == 1) ++tp;
    if (pred && labels[i] != 1) ++fp;
    if (!pred && labels[i] == 1) ++fn;
  }
  Prf r;
  r.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

std::vector<double> threshold_candidates(std::span<const double> scores) {
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> out;
  if (sorted.empty()) return out;
  out.push_back(sorted.front());
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) out.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  if (sorted.size() > 1) out.push_back(sorted.back());
  return out;
}

Threshold select_threshold(std::span<const double> scores, std::span<const int> labels) {
  require_both_classes(labels);
  Threshold best{0.0, -1.0};
  // Candidates arrive in ascending order, so strict improvement keeps the smallest tau on ties.
  for (double tau : threshold_candidates(scores)) {
    const double f1 = prf_at_threshold(scores, labels, tau).f1;
    if (f1 > best.f1) best = {tau, f1};
  }
  return best;
}

std::vector<int> top_k_positions(const Mat<float>& attention, int head, std::span<const unsigned char> mask, int k) {
  std::vector<int> valid;
  for (int i = 0; i < attention.cols; ++i)
    if (mask[i]) valid.push_back(i);
  std::stable_sort(valid.begin(), valid.end(),
                   [&](int a, int b) { return attention(head, a) > attention(head, b); });
  valid.resize(std::min<std::size_t>(valid.size(), static_cast<std::size_t>(std::max(k, 0))));
  return valid;
}

Localization localize(const bagging::Bag& bag, const model::ModelParams<float>& params, int k) {
  const auto out = model::forward_one(bag.embeddings, bag.mask, params);
  Localization loc;
  loc.head = training::select_key_instance(out.attention, bag.mask).head;
  loc.top = top_k_positions(out.attention, loc.head, bag.mask, k);
  for (int i : loc.top) loc.top_attention.push_back(out.attention(loc.head, i));
  loc.p_orig = out.p;
  const auto perturbed = training::perturb_bag(bag, loc.top.front());
  loc.p_pert = model::forward_one(perturbed.embeddings, perturbed.mask, params).p;
  return loc;
}

double loc_at_k(std::span<const std::vector<int>> top, std::span<const std::set<int>> truth, int k) {
  std::size_t hits = 0, denom = 0;
  for (std::size_t b = 0; b < top.size(); ++b) {
    if (truth[b].empty()) continue;
    for (int i : top[b]) hits += truth[b].count(i);
    denom += std::min<std::size_t>(static_cast<std::size_t>(k), truth[b].size());
  }
  if (denom == 0) throw NoPositiveBags("Loc@k needs at least one bag with anomalous instances");
  return static_cast<double>(hits) / static_cast<double>(denom);
}

double success_rate(std::span<const double> p_orig, std::span<const double> p_pert, double delta_sr) {
  if (p_orig.empty()) throw NoPositiveBags("success rate needs at least one positive bag");
  std::size_t ok = 0;
  for (std::size_t b = 0; b < p_orig.size(); ++b) ok += (p_orig[b] - p_pert[b]) > delta_sr;
  return static_cast<double>(ok) / static_cast<double>(p_orig.size());
}

std::vector<double> bag_scores(const model::ModelParams<float>& params, const bagging::BagDataset& ds) {
  std::vector<double> scores;
  scores.reserve(ds.size());
  for (const auto& bag : ds.bags) scores.push_back(model::forward_one(bag.embeddings, bag.mask, params).p);
  return scores;
}

EvalOutput evaluate(const model::ModelParams<float>& params, const bagging::BagDataset& val,
                    const bagging::BagDataset& test, int k, double delta_sr) {
  EvalOutput out;
  auto& r = out.report;
  r.k = k;
  r.delta_sr = delta_sr;

  const auto val_scores = bag_scores(params, val);
  r.tau = select_threshold(val_scores, val.labels()).tau;

  const auto test_scores = bag_scores(params, test);
  const auto test_labels = test.labels();
  r.auc = roc_auc(test_scores, test_labels);
  const auto prf = prf_at_threshold(test_scores, test_labels, r.tau);
  r.precision = prf.precision;
  r.recall = prf.recall;
  r.f1 = prf.f1;

  std::vector<std::vector<int>> tops;
  std::vector<std::set<int>> truth;
  std::vector<double> p_orig, p_pert;
  for (std::size_t b = 0; b < test.size(); ++b) {
    const auto& bag = test.bags[b];
    if (bag.label != 1) continue;
    auto loc = localize(bag, params, k);
    loc.bag_index = b;
    std::set<int> anomalous;
    for (int i = 0; i < bag.width(); ++i)
      if (bag.mask[i] && bag.instance_labels[i]) anomalous.insert(i);
    tops.push_back(loc.top);
    truth.push_back(std::move(anomalous));
    p_orig.push_back(loc.p_orig);
    p_pert.push_back(loc.p_pert);
    out.localizations.push_back(std::move(loc));
  }
  r.loc_at_k = loc_at_k(tops, truth, k);
  r.sr = success_rate(p_orig, p_pert, delta_sr);
  return out;
}

std::string metrics_csv_row(const MetricsReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%llu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%d,%.6f", r.dataset.c_str(),
                static_cast<unsigned long long>(r.seed), r.auc, r.precision, r.recall, r.f1, r.loc_at_k, r.sr, r.tau, r.k,
                r.delta_sr);
  return buf;
}

}  // namespace logmilp::eval
