#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ensad/data.hpp"

using namespace ensad;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.n_items = 5;
  s.d = 4;
  s.m = 2;
  s.d_img = 3;
  s.sigma_source = 0.3;
  s.sigma_trans = 0.1;
  s.seed = 13;
  return s;
}

bool unit(const Vec& v) { return std::abs(norm(v.span()) - 1.0) <= kUnitNormTolerance; }

}  // namespace

TEST(Synthetic, ZeroNoiseCollapsesToLatent) {
  auto spec = small_spec();
  spec.sigma_source = spec.sigma_trans = 0.0;
  const Dataset ds = generate_synthetic(spec);
  for (const auto& it : ds.items) {
    for (const auto& t : it.text.translations) EXPECT_EQ(t, it.text.h0);
    EXPECT_TRUE(unit(it.text.h0));
  }
  // h0 is the latent itself: re-derive u from the same stream.
  SeededRng rng(spec.seed);
  gaussian_mat(rng, spec.d_img, spec.d, 1.0);
  const Vec u = l2_normalize(gaussian(rng, spec.d));
  for (std::size_t i = 0; i < spec.d; ++i) EXPECT_NEAR(ds.items[0].text.h0[i], u[i], 1e-15);
}

TEST(Synthetic, DeterministicAndWellFormed) {
  const auto a = generate_synthetic(small_spec());
  const auto b = generate_synthetic(small_spec());
  EXPECT_EQ(to_jsonl(a), to_jsonl(b));
  ASSERT_EQ(a.size(), 5u);
  for (const auto& it : a.items) {
    EXPECT_TRUE(unit(it.text.h0));
    ASSERT_EQ(it.text.m(), 2u);
    for (const auto& t : it.text.translations) EXPECT_TRUE(unit(t));
    for (double x : it.image.data) EXPECT_LE(std::abs(x), 1.0);
  }
}

// Monte-Carlo oracle (numpy, 200 replicates): mean cosine(h0, h_i) for
// d=16, sigma=0.1 is 0.868 +- 0.0033, so the band is [0.85, 0.885].
TEST(Synthetic, SourceTranslationCosineBand) {
  SyntheticSpec s;
  s.n_items = 100;
  s.d = 16;
  s.m = 4;
  s.d_img = 8;
  s.sigma_source = s.sigma_trans = 0.1;
  s.seed = 99;
  const auto ds = generate_synthetic(s);
  double sum = 0;
  std::size_t n = 0;
  for (const auto& it : ds.items)
    for (const auto& t : it.text.translations) {
      sum += dot(it.text.h0.span(), t.span());
      ++n;
    }
  const double mean = sum / n;
  EXPECT_GT(mean, 0.85);
  EXPECT_LT(mean, 0.885);
}

TEST(Synthetic, RejectsBadSpec) {
  auto s = small_spec();
  s.d = 0;
  EXPECT_THROW(generate_synthetic(s), ValidationError);
  s = small_spec();
  s.sigma_trans = -1;
  EXPECT_THROW(generate_synthetic(s), ValidationError);
}

TEST(AugmentNoise, ZeroWeightsAreANoOp) {
  const auto ds = generate_synthetic(small_spec());
  SeededRng rng(1);
  const auto out = augment_noise(ds.items[0].text, {0.0, 0.0}, rng);
  EXPECT_EQ(out.h0, ds.items[0].text.h0);
  EXPECT_EQ(out.translations, ds.items[0].text.translations);
  EXPECT_EQ(rng.position(), 0u);
}

TEST(AugmentNoise, OutputsStayUnitNorm) {
  const auto ds = generate_synthetic(small_spec());
  SeededRng rng(2);
  for (double p : {0.01, 0.1, 0.5, 1.0}) {
    const auto out = augment_noise(ds.items[1].text, {p, p}, rng);
    EXPECT_TRUE(unit(out.h0));
    EXPECT_EQ(out.m(), 2u);
    for (const auto& t : out.translations) EXPECT_TRUE(unit(t));
  }
}

TEST(AugmentNoise, RejectsOutOfRangeWeights) {
  const auto ds = generate_synthetic(small_spec());
  SeededRng rng(0);
  EXPECT_THROW(augment_noise(ds.items[0].text, {1.5, 0.0}, rng), ValidationError);
  EXPECT_THROW(augment_noise(ds.items[0].text, {0.1, -0.01}, rng), ValidationError);
}

// Monte-Carlo oracle (numpy, 200 replicates of 10^4 trials): mean cosine
// between h0 and its 10%-augmented copy in d=512 is 0.993895 with a
// replicate std of 6e-7.
TEST(AugmentNoise, SourceCosineBand) {
  SeededRng rng(31);
  EmbeddingEnsemble e;
  e.h0 = l2_normalize(gaussian(rng, 512));
  double sum = 0;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    const auto out = augment_noise(e, {0.1, 0.0}, rng);
    sum += dot(out.h0.span(), e.h0.span());
  }
  const double mean = sum / trials;
  EXPECT_GT(mean, 0.99385);
  EXPECT_LT(mean, 0.99394);
}

TEST(BatchSampler, FullBatchIsPermutation) {
  SeededRng rng(4);
  const BatchSampler s(10, 10);
  auto b = s.next(rng);
  std::sort(b.begin(), b.end());
  std::vector<std::size_t> expect(10);
  std::iota(expect.begin(), expect.end(), 0u);
  EXPECT_EQ(b, expect);
}

TEST(BatchSampler, DeterministicAndDistinctWithinBatch) {
  SeededRng a(5), b(5);
  const BatchSampler s(20, 6);
  for (int k = 0; k < 50; ++k) {
    auto x = s.next(a);
    EXPECT_EQ(x, s.next(b));
    std::sort(x.begin(), x.end());
    EXPECT_EQ(std::adjacent_find(x.begin(), x.end()), x.end());
  }
}

// Each of 10 items lands in a size-2 batch with p = 0.2; over 10^4 batches
// the count is Binomial(10^4, 0.2): mean 2000, sd 40.
TEST(BatchSampler, UniformFrequency) {
  SeededRng rng(6);
  const BatchSampler s(10, 2);
  std::vector<int> counts(10, 0);
  for (int k = 0; k < 10000; ++k)
    for (auto i : s.next(rng)) ++counts[i];
  for (int c : counts) EXPECT_LE(std::abs(c - 2000), 120);
}

TEST(BatchSampler, RejectsBadSize) {
  EXPECT_THROW(BatchSampler(5, 0), ValidationError);
  EXPECT_THROW(BatchSampler(5, 6), ValidationError);
}

TEST(Jsonl, RoundTrip) {
  auto ds = generate_synthetic(small_spec());
  ds.items[0].text.source_text = "一只猫";
  ds.items[0].text.translation_texts = std::vector<std::string>{"a cat", "one cat"};
  const std::string text = to_jsonl(ds);
  std::istringstream in(text);
  const Dataset back = read_jsonl(in);
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.d, 4u);
  EXPECT_EQ(back.m, 2u);
  EXPECT_EQ(back.d_img, 3u);
  EXPECT_EQ(*back.items[0].text.source_text, "一只猫");
  EXPECT_EQ(to_jsonl(back), text);
}

TEST(Jsonl, TwoItemFile) {
  std::istringstream in(
      "{\"format\":\"ensad-jsonl\",\"version\":1,\"d\":2,\"m\":1,\"d_img\":2}\n"
      "{\"id\":\"a\",\"h0\":[1,0],\"translations\":[[0,1]],\"image\":[0.5,-0.5]}\n"
      "{\"id\":\"b\",\"h0\":[0.6,0.8],\"translations\":[[0.8,0.6]],\"image\":[1,-1]}\n");
  const Dataset ds = read_jsonl(in);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.items[1].text.id, "b");
}

TEST(Jsonl, WrongTranslationCountNamesLine) {
  std::istringstream in(
      "{\"format\":\"ensad-jsonl\",\"version\":1,\"d\":4,\"m\":2,\"d_img\":1}\n"
      "{\"id\":\"a\",\"h0\":[1,0,0,0],\"translations\":[[0,1,0,0],[0,0,1,0]],\"image\":[0]}\n"
      "{\"id\":\"b\",\"h0\":[1,0,0,0],\"translations\":[[0,1,0,0],[0,0,1,0],[0,0,0,1]],\"image\":[0]}\n");
  try {
    read_jsonl(in);
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Jsonl, NormToleranceRenormalizesOrRejects) {
  auto file = [](double x) {
    std::ostringstream os;
    os.precision(17);
    os << "{\"format\":\"ensad-jsonl\",\"version\":1,\"d\":2,\"m\":1,\"d_img\":1}\n"
       << "{\"id\":\"a\",\"h0\":[" << x << ",0],\"translations\":[[0,1]],\"image\":[0]}\n";
    return os.str();
  };
  std::istringstream ok(file(1.0 + 5e-7));
  EXPECT_DOUBLE_EQ(read_jsonl(ok).items[0].text.h0[0], 1.0);
  std::istringstream bad(file(1.0 + 2e-6));
  EXPECT_THROW(read_jsonl(bad), ValidationError);
}

TEST(Jsonl, MalformedInputs) {
  const std::string header = "{\"format\":\"ensad-jsonl\",\"version\":1,\"d\":2,\"m\":1,\"d_img\":1}\n";
  for (const std::string body : {
           std::string("{not json}\n"),
           std::string("{\"id\":\"a\",\"h0\":[1,0,0],\"translations\":[[0,1]],\"image\":[0]}\n"),
           std::string("{\"id\":\"a\",\"h0\":[1,0],\"translations\":[[0,1]],\"image\":[2]}\n"),
           std::string("{\"id\":\"a\",\"h0\":[1,0],\"translations\":[[0,1]]}\n"),
       }) {
    std::istringstream in(header + body);
    EXPECT_THROW(read_jsonl(in), ValidationError) << body;
  }
  std::istringstream no_header("{\"id\":\"a\"}\n");
  EXPECT_THROW(read_jsonl(no_header), ValidationError);
  std::istringstream empty("");
  EXPECT_THROW(read_jsonl(empty), ValidationError);
}
