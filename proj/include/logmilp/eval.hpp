#pragma once

#include <cstdint>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "logmilp/bagging.hpp"
#include "logmilp/model.hpp"

namespace logmilp::eval {

/// Mann–Whitney AUC; tied pairs count 1/2. Throws SingleClass.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct Prf {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

/// Predicts positive when score > tau.
Prf prf_at_threshold(std::span<const double> scores, std::span<const int> labels, double tau);

/// Midpoints between consecutive distinct sorted scores plus min and max.
std::vector<double> threshold_candidates(std::span<const double> scores);

struct Threshold {
  double tau = 0;
  double f1 = 0;
};

/// Candidate maximizing F1; ties go to the smallest tau. Throws SingleClass.
Threshold select_threshold(std::span<const double> scores, std::span<const int> labels);

struct Localization {
  std::size_t bag_index = 0;   // index within the evaluated dataset
  int head = 0;                // zero-based minimum-entropy head
  std::vector<int> top;        // zero-based positions, descending attention
  std::vector<double> top_attention;
  double p_orig = 0;
  double p_pert = 0;
};

/// Top-k valid positions of the minimum-entropy head, descending attention,
/// ties broken by lower index.
std::vector<int> top_k_positions(const Mat<float>& attention, int head, std::span<const unsigned char> mask, int k);

/// Localizes one bag and measures its probability drop after zeroing the top position.
Localization localize(const bagging::Bag& bag, const model::ModelParams<float>& params, int k);

/// Σ|S_top ∩ S_a| / Σ min(k, |S_a|) over bags with non-empty S_a. Throws NoPositiveBags.
double loc_at_k(std::span<const std::vector<int>> top, std::span<const std::set<int>> truth, int k);

/// Fraction of bags with p_orig − p_pert > delta_sr. Throws NoPositiveBags.
double success_rate(std::span<const double> p_orig, std::span<const double> p_pert, double delta_sr);

struct MetricsReport {
  std::string dataset = "synthetic";
  std::uint64_t seed = 0;
  double auc = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double loc_at_k = 0;
  double sr = 0;
  double tau = 0;
  int k = 3;
  double delta_sr = 0.1;
};

struct EvalOutput {
  MetricsReport report;
  std::vector<Localization> localizations;  // ground-truth-positive test bags
};

/// τ from validation, bag metrics on test, Loc@k and SR on ground-truth-positive test bags.
EvalOutput evaluate(const model::ModelParams<float>& params, const bagging::BagDataset& val,
                    const bagging::BagDataset& test, int k, double delta_sr);

std::vector<double> bag_scores(const model::ModelParams<float>& params, const bagging::BagDataset& ds);

inline constexpr const char* kMetricsHeader = "dataset,seed,auc,precision,recall,f1,loc_at_k,sr,tau,k,delta_sr";
std::string metrics_csv_row(const MetricsReport& r);

}  // namespace logmilp::eval
