#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "logmilp/errors.hpp"
#include "logmilp/model.hpp"
#include "test_util.hpp"

using namespace logmilp;
using namespace logmilp::model;

namespace {

Mat<float> random_mat(int r, int c, Rng& rng) {
  Mat<float> m(r, c);
  for (auto& v : m.data) v = static_cast<float>(rng.normal());
  return m;
}

ModelConfig small_config() {
  ModelConfig c;
  c.d = 12;
  c.d_h = 8;
  c.n_proto = 3;
  c.pool_heads = 3;
  c.heads_enc = 2;
  c.h_c = 6;
  return c;
}

// Padded rows carry junk so masking mistakes show up.
bagging::Bag junk_padded_bag(int width, int d, int valid, Rng& rng) {
  auto bag = testutil::random_bag(width, d, valid, rng);
  for (int i = valid; i < width; ++i)
    for (int c = 0; c < d; ++c) bag.embeddings(i, c) = static_cast<float>(5 * rng.normal());
  return bag;
}

}  // namespace

TEST_CASE("project: zero input and zero bias give zero") {
  auto p = testutil::noisy_params<float>(small_config(), 1);
  p.w.b_proj.fill(0.0f);
  const auto h = project(Mat<float>(5, 12), p);
  for (float v : h.data) CHECK(v == 0.0f);
}

TEST_CASE("project: identity weights reproduce the input") {
  auto cfg = small_config();
  cfg.d = cfg.d_h;
  auto p = init_params<float>(cfg);
  p.w.w_proj = Mat<float>(cfg.d, cfg.d);
  for (int i = 0; i < cfg.d; ++i) p.w.w_proj(i, i) = 1.0f;
  Rng rng(2);
  const auto x = random_mat(4, cfg.d, rng);
  CHECK(project(x, p) == x);
}

TEST_CASE("project: matches a naive triple loop") {
  const auto p = testutil::noisy_params<float>(small_config(), 3);
  Rng rng(3);
  const auto x = random_mat(7, 12, rng);
  const auto h = project(x, p);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 8; ++j) {
      double s = p.w.b_proj(0, j);
      for (int k = 0; k < 12; ++k) s += static_cast<double>(x(i, k)) * p.w.w_proj(k, j);
      CHECK(h(i, j) == doctest::Approx(s).epsilon(1e-5));
    }
  CHECK_THROWS_AS(project(Mat<float>(2, 5), p), ShapeMismatch);
}

TEST_CASE("encode: a lone valid instance depends only on itself") {
  const auto p = testutil::noisy_params<float>(small_config(), 4);
  Rng rng(4);
  auto h = random_mat(5, 8, rng);
  const std::vector<unsigned char> mask{1, 0, 0, 0, 0};
  const auto z1 = encode(h, mask, p);
  for (int i = 1; i < 5; ++i)
    for (int c = 0; c < 8; ++c) h(i, c) = static_cast<float>(rng.normal() * 3);
  const auto z2 = encode(h, mask, p);
  for (int c = 0; c < 8; ++c) CHECK(z1(0, c) == z2(0, c));
}

TEST_CASE("encode: deterministic") {
  const auto p = testutil::noisy_params<float>(small_config(), 5);
  Rng rng(5);
  const auto h = random_mat(6, 8, rng);
  const std::vector<unsigned char> mask{1, 1, 1, 1, 0, 1};
  CHECK(encode(h, mask, p) == encode(h, mask, p));
}

TEST_CASE("encode: permutation equivariance") {
  const auto p = testutil::noisy_params<double>(small_config(), 6);
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    Mat<double> h(7, 8);
    for (auto& v : h.data) v = rng.normal();
    const std::vector<unsigned char> mask(7, 1);
    std::vector<int> perm{0, 1, 2, 3, 4, 5, 6};
    rng.shuffle(perm);
    Mat<double> hp(7, 8);
    for (int i = 0; i < 7; ++i)
      for (int c = 0; c < 8; ++c) hp(i, c) = h(perm[i], c);
    const auto z = encode(h, mask, p);
    const auto zp = encode(hp, mask, p);
    for (int i = 0; i < 7; ++i)
      for (int c = 0; c < 8; ++c) CHECK(zp(i, c) == doctest::Approx(z(perm[i], c)).epsilon(1e-12));
  }
}

TEST_CASE("prototype stats: identical, orthogonal and antipodal vectors") {
  Mat<float> z(3, 2), protos(1, 2);
  protos(0, 0) = 2.0f;  // normalized to (1, 0)
  z(0, 0) = 5.0f;
  z(1, 1) = 1.0f;
  z(2, 0) = -3.0f;
  const std::vector<unsigned char> mask{1, 1, 1};
  const auto st = prototype_stats(z, mask, protos);
  CHECK(st.s(0, 0) == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(st.m[0] == doctest::Approx(1.0));
  CHECK(st.b[0] == doctest::Approx(0.0));
  CHECK(st.s(1, 0) == doctest::Approx(1.0 / (1.0 + std::sqrt(2.0))).epsilon(1e-6));
  CHECK(st.s(1, 0) == doctest::Approx(0.41421).epsilon(1e-5));
  CHECK(st.s(2, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  CHECK(st.e_bag == 0.0f);  // a single prototype has no assignment entropy
}

TEST_CASE("prototype stats invariants") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int w = 1 + static_cast<int>(rng.below(10));
    const int np = 1 + static_cast<int>(rng.below(6));
    const auto z = random_mat(w, 5, rng);
    const auto protos = random_mat(np, 5, rng);
    std::vector<unsigned char> mask(w, 0);
    for (auto& m : mask) m = rng.uniform() < 0.7;
    mask[rng.below(w)] = 1;
    const auto st = prototype_stats(z, mask, protos);
    for (int i = 0; i < w; ++i) {
      for (int j = 0; j < np; ++j) {
        CHECK(st.s(i, j) >= 1.0f / 3.0f - 1e-6f);
        CHECK(st.s(i, j) <= 1.0f);
      }
      CHECK(st.b[i] == 1.0f - st.m[i]);
      CHECK(st.b[i] >= -1e-6f);
      CHECK(st.b[i] <= 2.0f / 3.0f + 1e-6f);
    }
    CHECK(st.m_bag >= st.v_bag);
    CHECK(st.e_bag >= 0.0f);
    CHECK(st.e_bag <= 1.0f);
  }
}

TEST_CASE("prototype stats: zero rows are floored, not fatal") {
  Mat<float> z(2, 3), protos(2, 3);
  protos(0, 0) = 1.0f;
  protos(1, 1) = 1.0f;
  z(1, 2) = 1.0f;
  const std::vector<unsigned char> mask{1, 1};
  const auto st = prototype_stats(z, mask, protos);
  CHECK(st.s(0, 0) == doctest::Approx(0.5));
  Mat<float> bad(1, 3);
  bad(0, 0) = std::nanf("");
  CHECK_THROWS_AS(prototype_stats(bad, std::vector<unsigned char>{1}, protos), DegenerateVector);
}

TEST_CASE("attention pool: equal logits give uniform attention") {
  auto p = testutil::noisy_params<float>(small_config(), 8);
  for (auto& u : p.w.pool_u) u.fill(0.0f);
  Rng rng(8);
  const auto z = random_mat(4, 8, rng);
  const std::vector<float> bias(4, 0.3f);
  const std::vector<unsigned char> mask(4, 1);
  const auto out = attention_pool<float>(z, bias, mask, p);
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 4; ++i) CHECK(out.attention(k, i) == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("attention pool: padded positions get exactly zero and do not leak") {
  const auto p = testutil::noisy_params<float>(small_config(), 9);
  Rng rng(9);
  auto z = random_mat(5, 8, rng);
  const std::vector<float> bias{0.1f, 0.2f, 0.3f, 0.4f, 0.5f};
  const std::vector<unsigned char> mask{1, 1, 0, 1, 0};
  const auto a = attention_pool<float>(z, bias, mask, p);
  for (int i = 0; i < 5; ++i) z(2, i) = 100.0f;
  const auto b = attention_pool<float>(z, bias, mask, p);
  for (int k = 0; k < 3; ++k) {
    CHECK(a.attention(k, 2) == 0.0f);
    CHECK(a.attention(k, 4) == 0.0f);
  }
  CHECK(a.z_cat == b.z_cat);
}

TEST_CASE("attention pool: bias monotonicity and beta = 0") {
  auto p = testutil::noisy_params<float>(small_config(), 10);
  Rng rng(10);
  const auto z = random_mat(6, 8, rng);
  const std::vector<unsigned char> mask(6, 1);
  std::vector<float> bias{0.1f, 0.5f, 0.2f, 0.0f, 0.6f, 0.3f};
  const auto base = attention_pool<float>(z, bias, mask, p);
  CHECK(p.beta() > 0.0f);
  for (int i = 0; i < 6; ++i) {
    auto raised = bias;
    raised[i] += 0.2f;
    const auto up = attention_pool<float>(z, raised, mask, p);
    for (int k = 0; k < 3; ++k) CHECK(up.attention(k, i) > base.attention(k, i));
  }
  p.w.beta_raw.fill(-200.0f);
  CHECK(p.beta() == 0.0f);
  const auto a0 = attention_pool<float>(z, bias, mask, p);
  const std::vector<float> other{0.6f, 0.0f, 0.0f, 0.3f, 0.1f, 0.2f};
  const auto a1 = attention_pool<float>(z, other, mask, p);
  CHECK(a0.attention == a1.attention);
}

TEST_CASE("beta starts at one") {
  const auto p = init_params<double>(small_config());
  CHECK(p.beta() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("classify: zero weights give 0.5; logits clamp at 30") {
  auto p = testutil::noisy_params<float>(small_config(), 11);
  p.w.cls_w1.fill(0.0f);
  p.w.cls_b1.fill(0.0f);
  p.w.cls_w2.fill(0.0f);
  p.w.cls_b2.fill(0.0f);
  const std::vector<float> zc(24, 0.7f);
  CHECK(classify<float>(zc, {0.9f, 0.4f, 0.6f}, p) == 0.5);
  p.w.cls_b2.fill(1000.0f);
  const double hi = classify<float>(zc, {0.9f, 0.4f, 0.6f}, p);
  CHECK(hi < 1.0);
  CHECK(1.0 - hi < 1e-12);
  p.w.cls_b2.fill(-1000.0f);
  const double lo = classify<float>(zc, {0.9f, 0.4f, 0.6f}, p);
  CHECK(lo > 0.0);
}

TEST_CASE("classify: prototype features reach the logit") {
  const auto p = testutil::noisy_params<float>(small_config(), 12);
  const std::vector<float> zc(24, 0.1f);
  const double a = classify<float>(zc, {0.9f, 0.4f, 0.6f}, p);
  CHECK(classify<float>(zc, {0.5f, 0.4f, 0.6f}, p) != a);
  CHECK(classify<float>(zc, {0.9f, 0.1f, 0.6f}, p) != a);
  CHECK(classify<float>(zc, {0.9f, 0.4f, 0.2f}, p) != a);
  CHECK_THROWS_AS(classify<float>(std::vector<float>(5), {0, 0, 0}, p), ShapeMismatch);
}

TEST_CASE("forward: attention rows normalized over valid positions") {
  const auto p = testutil::noisy_params<float>(small_config(), 13);
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const int valid = 1 + static_cast<int>(rng.below(9));
    const auto bag = junk_padded_bag(9, 12, valid, rng);
    const auto out = forward_one(bag.embeddings, bag.mask, p);
    CHECK(out.p > 0.0);
    CHECK(out.p < 1.0);
    for (int k = 0; k < 3; ++k) {
      double s = 0;
      for (int i = 0; i < 9; ++i) {
        if (bag.mask[i]) s += out.attention(k, i);
        else CHECK(out.attention(k, i) == 0.0f);
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("forward: single valid instance takes all attention") {
  const auto p = testutil::noisy_params<float>(small_config(), 14);
  Rng rng(14);
  const auto bag = junk_padded_bag(6, 12, 1, rng);
  const auto out = forward_one(bag.embeddings, bag.mask, p);
  for (int k = 0; k < 3; ++k) CHECK(out.attention(k, 0) == 1.0f);
  CHECK(std::isfinite(out.logit));
}

TEST_CASE("forward: batch independence is bit-exact") {
  const auto p = testutil::noisy_params<float>(small_config(), 15);
  Rng rng(15);
  std::vector<bagging::Bag> bags;
  for (int b = 0; b < 8; ++b) bags.push_back(junk_padded_bag(7, 12, 1 + b % 7, rng));
  const auto batch = forward<float>(bags, p);
  for (int b = 0; b < 8; ++b) {
    const auto alone = forward<float>(std::span<const bagging::Bag>(&bags[b], 1), p);
    CHECK(alone[0].logit == batch[b].logit);
    CHECK(alone[0].attention == batch[b].attention);
    CHECK(alone[0].z_cat == batch[b].z_cat);
  }
}

TEST_CASE("forward: pure and repeatable") {
  const auto p = testutil::noisy_params<float>(small_config(), 16);
  const auto copy = p;
  Rng rng(16);
  const auto bag = junk_padded_bag(5, 12, 4, rng);
  const auto a = forward_one(bag.embeddings, bag.mask, p);
  const auto b = forward_one(bag.embeddings, bag.mask, p);
  CHECK(a.logit == b.logit);
  CHECK(a.attention == b.attention);
  CHECK(a.stats.s == b.stats.s);
  CHECK(p == copy);
}

TEST_CASE("forward: shape errors") {
  const auto p = testutil::noisy_params<float>(small_config(), 17);
  CHECK_THROWS_AS(forward_one(Mat<float>(4, 11), std::vector<unsigned char>(4, 1), p), ShapeMismatch);
  CHECK_THROWS_AS(forward_one(Mat<float>(4, 12), std::vector<unsigned char>(3, 1), p), ShapeMismatch);
}

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.d_h = 3;
  CHECK_THROWS(c.validate());
  c = ModelConfig{};
  c.heads_enc = 3;
  CHECK_THROWS(c.validate());
  c = ModelConfig{};
  c.n_proto = 0;
  CHECK_THROWS(c.validate());
  c = ModelConfig{};
  c.pool_heads = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("init is deterministic per seed and finite") {
  auto c = ModelConfig{};
  c.seed = 3;
  const auto a = init_params<float>(c);
  const auto b = init_params<float>(c);
  CHECK(a == b);
  c.seed = 4;
  CHECK_FALSE(init_params<float>(c) == a);
  zip_slots(
      [](const std::string&, const Mat<float>& m) {
        for (float v : m.data) CHECK(std::isfinite(v));
      },
      a.w);
  for (int j = 0; j < a.w.prototypes.rows; ++j) {
    double ss = 0;
    for (float v : a.w.prototypes.row(j)) ss += static_cast<double>(v) * v;
    CHECK(std::abs(ss - 1.0) < 1e-5);
  }
}

TEST_CASE("checkpoint round-trip gives bit-identical outputs") {
  const auto p = testutil::noisy_params<float>(ModelConfig{}, 18);
  const auto path = testutil::scratch("ckpt") / "m.ckpt";
  save_checkpoint(path, p);
  const auto back = load_checkpoint(path);
  CHECK(back == p);
  Rng rng(18);
  for (int trial = 0; trial < 5; ++trial) {
    const auto bag = junk_padded_bag(20, 64, 5 + trial * 3, rng);
    const auto a = forward_one(bag.embeddings, bag.mask, p);
    const auto b = forward_one(bag.embeddings, bag.mask, back);
    CHECK(a.logit == b.logit);
    CHECK(a.attention == b.attention);
    CHECK(a.z_cat == b.z_cat);
  }
  CHECK_THROWS_AS(load_checkpoint(path.parent_path() / "absent"), MissingArtifact);
  std::ofstream(path.parent_path() / "junk") << "not a checkpoint\n";
  CHECK_THROWS_AS(load_checkpoint(path.parent_path() / "junk"), FormatError);
}

// Regenerate with LOGMILP_WRITE_GOLDEN=1 after an intentional model change.
TEST_CASE("forward matches the stored golden output") {
  ModelConfig cfg;
  cfg.seed = 2024;
  const auto p = init_params<float>(cfg);
  Rng rng(77);
  const auto bag = testutil::random_bag(20, 64, 17, rng);
  const auto out = forward_one(bag.embeddings, bag.mask, p);

  std::vector<double> values{out.p, static_cast<double>(out.logit), out.stats.m_bag, out.stats.e_bag, out.stats.v_bag};
  for (float a : out.attention.data) values.push_back(a);
  const std::string path = std::string(LOGMILP_TEST_DATA) + "/golden/forward_default_seed2024.txt";
  if (std::getenv("LOGMILP_WRITE_GOLDEN")) {
    std::ofstream os(path);
    char buf[64];
    for (double v : values) {
      std::snprintf(buf, sizeof buf, "%.9e\n", v);
      os << buf;
    }
  }
  std::ifstream is(path);
  REQUIRE(is.good());
  std::vector<double> golden;
  for (double v; is >> v;) golden.push_back(v);
  REQUIRE(golden.size() == values.size());
  for (std::size_t i = 0; i < values.size(); ++i) CHECK(values[i] == doctest::Approx(golden[i]).epsilon(1e-5).scale(1.0));
}
