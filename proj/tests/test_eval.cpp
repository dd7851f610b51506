#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "logmilp/errors.hpp"
#include "logmilp/eval.hpp"
#include "logmilp/training.hpp"
#include "test_util.hpp"

using namespace logmilp;
using namespace logmilp::eval;

TEST_CASE("AUC examples") {
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y) == 1.0);
  CHECK(roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, y) == 0.0);
  CHECK(roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y) == 0.5);
  // Pairs: (0.1,0.35) (0.1,0.8) (0.4,0.8) win, (0.4,0.35) loses.
  CHECK(roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, y) == doctest::Approx(0.75));
  CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), SingleClass);
}

TEST_CASE("AUC agrees with pair counting and ignores monotone transforms") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(40));
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = std::round(rng.uniform() * 10) / 10;  // coarse, so ties happen
      y[i] = static_cast<int>(rng.below(2));
    }
    y[0] = 0;
    y[1] = 1;
    double wins = 0, pairs = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (y[i] == 1 && y[j] == 0) {
          pairs += 1;
          wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    const double auc = roc_auc(s, y);
    CHECK(auc == doctest::Approx(wins / pairs).epsilon(1e-12));
    std::vector<double> t(n);
    for (int i = 0; i < n; ++i) t[i] = std::exp(3 * s[i]) - 7;
    CHECK(roc_auc(t, y) == doctest::Approx(auc).epsilon(1e-12));
  }
}

TEST_CASE("threshold candidates and selection") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 1, 0, 1};
  const auto c = threshold_candidates(s);
  REQUIRE(c.size() == 5);
  CHECK(c[0] == doctest::Approx(0.1));
  CHECK(c[1] == doctest::Approx(0.225));
  CHECK(c[2] == doctest::Approx(0.375));
  CHECK(c[3] == doctest::Approx(0.6));
  CHECK(c[4] == doctest::Approx(0.8));
  const auto t = select_threshold(s, y);
  CHECK(t.tau == doctest::Approx(0.375));
  CHECK(t.f1 == 1.0);

  // Duplicates collapse.
  CHECK(threshold_candidates(std::vector<double>{0.3, 0.3, 0.3}).size() == 1);
  CHECK_THROWS_AS(select_threshold(s, std::vector<int>{0, 0, 0, 0}), SingleClass);
}

TEST_CASE("threshold ties go to the smallest tau") {
  // Candidates 0.2, 0.35, 0.5, 0.65, 0.8; both 0.2 and 0.35 give F1 = 1.
  const std::vector<double> s{0.2, 0.5, 0.8};
  const std::vector<int> y{0, 1, 1};
  CHECK(select_threshold(s, y).tau == doctest::Approx(0.2));
  const std::vector<double> tie{0.1, 0.9, 0.1, 0.9};
  const std::vector<int> ty{0, 1, 0, 1};
  // 0.1 excludes the negatives already; 0.5 ties it and must lose.
  CHECK(select_threshold(tie, ty).tau == doctest::Approx(0.1));
}

TEST_CASE("threshold sweep matches brute force") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(30));
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = std::round(rng.uniform() * 20) / 20;
      y[i] = static_cast<int>(rng.below(2));
    }
    y[0] = 0;
    y[1] = 1;
    double best = -1;
    for (double tau : threshold_candidates(s)) best = std::max(best, prf_at_threshold(s, y, tau).f1);
    CHECK(select_threshold(s, y).f1 == best);
  }
}

TEST_CASE("precision, recall and F1") {
  const std::vector<double> s{0.9, 0.8, 0.3, 0.7};
  const std::vector<int> y{1, 0, 1, 0};
  const auto r = prf_at_threshold(s, y, 0.5);
  CHECK(r.precision == doctest::Approx(1.0 / 3.0));
  CHECK(r.recall == doctest::Approx(0.5));
  CHECK(r.f1 == doctest::Approx(0.4));
  const auto none = prf_at_threshold(s, y, 0.95);
  CHECK(none.precision == 0.0);
  CHECK(none.f1 == 0.0);
}

TEST_CASE("top-k positions") {
  Mat<float> a(2, 5);
  const float row[] = {0.1f, 0.3f, 0.3f, 0.2f, 0.1f};
  for (int i = 0; i < 5; ++i) a(1, i) = row[i];
  const std::vector<unsigned char> mask{1, 1, 1, 1, 1};
  CHECK(top_k_positions(a, 1, mask, 3) == std::vector<int>{1, 2, 3});
  const std::vector<unsigned char> masked{1, 0, 1, 1, 0};
  CHECK(top_k_positions(a, 1, masked, 3) == std::vector<int>{2, 3, 0});
  CHECK(top_k_positions(a, 1, masked, 10).size() == 3);
}

TEST_CASE("Loc@k and success rate examples") {
  const std::vector<std::vector<int>> top{{2, 5, 7}, {0, 1, 2}, {4, 3, 1}};
  const std::vector<std::set<int>> truth{{5}, {}, {1, 3, 8, 9}};
  // (1 + 2) / (min(3,1) + min(3,4)).
  CHECK(loc_at_k(top, truth, 3) == doctest::Approx(0.75));
  const std::vector<std::set<int>> empty(3);
  CHECK_THROWS_AS(loc_at_k(top, empty, 3), NoPositiveBags);

  const std::vector<double> po{0.9, 0.8, 0.6, 0.5};
  const std::vector<double> pp{0.2, 0.75, 0.4, 0.5};
  // Drops 0.7, 0.05, 0.2, 0.
  CHECK(success_rate(po, pp, 0.1) == doctest::Approx(0.5));
  CHECK_THROWS_AS(success_rate({}, {}, 0.1), NoPositiveBags);
}

TEST_CASE("Loc@k and success rate match brute force on 200 cases") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 1 + static_cast<int>(rng.below(4));
    const int bags = 1 + static_cast<int>(rng.below(6));
    std::vector<std::vector<int>> top(bags);
    std::vector<std::set<int>> truth(bags);
    for (int b = 0; b < bags; ++b) {
      std::vector<int> perm(10);
      for (int i = 0; i < 10; ++i) perm[i] = i;
      rng.shuffle(perm);
      top[b].assign(perm.begin(), perm.begin() + k);
      const int n_true = static_cast<int>(rng.below(4));
      for (int i = 0; i < n_true; ++i) truth[b].insert(static_cast<int>(rng.below(10)));
    }
    truth[0].insert(static_cast<int>(rng.below(10)));
    int hits = 0, denom = 0;
    for (int b = 0; b < bags; ++b) {
      if (truth[b].empty()) continue;
      for (int t : top[b]) hits += truth[b].count(t) > 0;
      denom += std::min<int>(k, static_cast<int>(truth[b].size()));
    }
    const double loc = loc_at_k(top, truth, k);
    CHECK(loc == doctest::Approx(static_cast<double>(hits) / denom));
    CHECK(loc >= 0.0);
    CHECK(loc <= 1.0);

    std::vector<double> po(bags), pp(bags);
    int wins = 0;
    for (int b = 0; b < bags; ++b) {
      po[b] = rng.uniform();
      pp[b] = rng.uniform();
      wins += po[b] - pp[b] > 0.1;
    }
    CHECK(success_rate(po, pp, 0.1) == doctest::Approx(static_cast<double>(wins) / bags));
  }
}

TEST_CASE("localize agrees with direct forward passes") {
  const auto p = testutil::noisy_params<float>(testutil::tiny_config(), 4);
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const int valid = 1 + static_cast<int>(rng.below(6));
    const auto bag = testutil::random_bag(6, 8, valid, rng);
    const auto loc = localize(bag, p, 3);
    const auto out = model::forward_one(bag.embeddings, bag.mask, p);
    CHECK(loc.p_orig == out.p);
    CHECK(loc.top.size() == static_cast<std::size_t>(std::min(3, valid)));
    const auto key = training::select_key_instance(out.attention, bag.mask);
    CHECK(loc.head == key.head);
    CHECK(loc.top[0] == key.index);
    for (std::size_t j = 1; j < loc.top_attention.size(); ++j) CHECK(loc.top_attention[j - 1] >= loc.top_attention[j]);
    const auto pert = training::perturb_bag(bag, loc.top[0]);
    CHECK(loc.p_pert == model::forward_one(pert.embeddings, pert.mask, p).p);
  }
}

TEST_CASE("metrics row formatting") {
  MetricsReport r;
  r.seed = 7;
  r.auc = 0.5;
  r.tau = 0.25;
  const auto row = metrics_csv_row(r);
  CHECK(row.rfind("synthetic,7,0.500000,", 0) == 0);
  CHECK(std::count(row.begin(), row.end(), ',') == std::count(kMetricsHeader, kMetricsHeader + std::char_traits<char>::length(kMetricsHeader), ','));
}
