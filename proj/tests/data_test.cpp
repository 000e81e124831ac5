#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "rankscope/data.hpp"
#include "rankscope/svd.hpp"
#include "rankscope/train.hpp"
#include "test_util.hpp"

using namespace rankscope;

namespace {

DatasetConfig base(std::size_t k, double noise) {
  DatasetConfig c;
  c.n_train = 400;
  c.n_val = 200;
  c.latent_dim = k;
  c.noise_sigma = noise;
  c.seed = 21;
  return c;
}

// Multiclass perceptron on flattened sequences; returns training accuracy.
double perceptron_accuracy(const LabeledData& d, std::size_t n_classes, std::size_t epochs) {
  const std::size_t dim = d.seq_len() * d.d_model();
  std::vector<double> w(n_classes * (dim + 1), 0.0);
  auto score = [&](std::size_t i, std::size_t c) {
    const double* x = d.tokens.values().data() + i * dim;
    const double* wc = w.data() + c * (dim + 1);
    double s = wc[dim];
    for (std::size_t j = 0; j < dim; ++j) s += wc[j] * x[j];
    return s;
  };
  auto predict = [&](std::size_t i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n_classes; ++c)
      if (score(i, c) > score(i, best)) best = c;
    return best;
  };
  for (std::size_t e = 0; e < epochs; ++e) {
    std::size_t mistakes = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const std::size_t p = predict(i), y = d.labels[i];
      if (p == y) continue;
      ++mistakes;
      const double* x = d.tokens.values().data() + i * dim;
      for (std::size_t j = 0; j < dim; ++j) {
        w[y * (dim + 1) + j] += x[j];
        w[p * (dim + 1) + j] -= x[j];
      }
      w[y * (dim + 1) + dim] += 1.0;
      w[p * (dim + 1) + dim] -= 1.0;
    }
    if (mistakes == 0) break;
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < d.size(); ++i) hit += predict(i) == d.labels[i];
  return static_cast<double>(hit) / static_cast<double>(d.size());
}

}  // namespace

TEST(Data, NoiselessDataIsLinearlySeparable) {
  const auto ds = generate(base(4, 0.0));
  EXPECT_EQ(perceptron_accuracy(ds.train, 4, 2000), 1.0);
}

TEST(Data, SameSeedIsBitIdentical) {
  const auto a = generate(base(8, 0.1)), b = generate(base(8, 0.1));
  EXPECT_TRUE(std::equal(a.train.tokens.values().begin(), a.train.tokens.values().end(),
                         b.train.tokens.values().begin()));
  EXPECT_EQ(a.val.labels, b.val.labels);
  auto other = base(8, 0.1);
  other.seed = 22;
  EXPECT_NE(generate(other).train.tokens[0], a.train.tokens[0]);
}

TEST(Data, ClassesAreExactlyBalanced) {
  auto c = base(8, 0.1);
  c.n_train = 402;
  const auto ds = generate(c);
  std::vector<std::size_t> counts(4, 0);
  for (auto l : ds.train.labels) ++counts[l];
  EXPECT_EQ(counts, (std::vector<std::size_t>{101, 101, 100, 100}));
}

TEST(Data, NoiselessTokensSpanExactlyLatentDimensions) {
  for (std::size_t k : {2, 5, 8}) {
    auto c = base(k, 0.0);
    c.n_train = 64;
    const auto ds = generate(c);
    const std::size_t rows = ds.train.size() * ds.train.seq_len(), d = ds.train.d_model();
    Matrix m(rows, d);
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += ds.train.tokens[i * d + j] / static_cast<double>(rows);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < d; ++j) m(i, j) = ds.train.tokens[i * d + j] - mean[j];
    const auto sv = svd_small(m).sigma;
    EXPECT_GT(sv[k - 1], 1e-3 * sv[0]) << "k=" << k;
    EXPECT_LT(sv[k], 1e-8 * sv[0]) << "k=" << k;
  }
}

TEST(Data, TrainAndValidationAreDisjoint) {
  const auto ds = generate(base(8, 0.1));
  const std::size_t stride = ds.train.seq_len() * ds.train.d_model();
  std::set<std::vector<double>> seen;
  for (std::size_t i = 0; i < ds.train.size(); ++i)
    seen.emplace(ds.train.tokens.values().begin() + static_cast<std::ptrdiff_t>(i * stride),
                 ds.train.tokens.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
  for (std::size_t i = 0; i < ds.val.size(); ++i) {
    std::vector<double> row(ds.val.tokens.values().begin() + static_cast<std::ptrdiff_t>(i * stride),
                            ds.val.tokens.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
    EXPECT_FALSE(seen.count(row));
  }
}

TEST(Data, ShuffledLabelsGiveChanceAccuracy) {
  auto c = base(8, 0.1);
  c.n_train = 512;
  c.n_val = 1024;
  auto ds = generate(c);
  Rng rng(5);
  rng.shuffle(ds.train.labels.begin(), ds.train.labels.end());
  EncoderConfig ec;
  ec.depth = 1;
  TrainConfig tc;
  tc.epochs = 5;
  tc.learning_rate = 3e-3;
  const auto res = train_teacher(build_teacher(ec, 1), ds, tc);
  const double acc = res.log.back().val_accuracy;
  const double sigma = std::sqrt(0.25 * 0.75 / static_cast<double>(c.n_val));
  EXPECT_NEAR(acc, 0.25, 3 * sigma);
}

TEST(Data, LabelsAndShapes) {
  const auto ds = generate(base(3, 0.1));
  EXPECT_EQ(ds.train.tokens.shape(), (Shape{400, 4, 32}));
  EXPECT_EQ(ds.val.tokens.shape(), (Shape{200, 4, 32}));
  for (auto l : ds.train.labels) EXPECT_LT(l, 4u);
}

TEST(Data, OddSequenceLengthIsSupported) {
  auto c = base(4, 0.1);
  c.seq_len = 5;
  const auto ds = generate(c);
  EXPECT_EQ(ds.train.tokens.shape(), (Shape{400, 5, 32}));
}

TEST(Data, InvalidConfigsAreRejected) {
  auto c = base(33, 0.1);
  EXPECT_THROW(generate(c), ConfigError);
  c = base(1, 0.1);  // one axis cannot carry four classes
  EXPECT_THROW(generate(c), ConfigError);
  c = base(4, 0.1);
  c.n_val = 3;
  EXPECT_THROW(generate(c), ConfigError);
  c = base(4, 0.1);
  c.seq_len = 1;
  EXPECT_THROW(generate(c), ConfigError);
  c = base(4, -1.0);
  EXPECT_THROW(generate(c), ConfigError);
}

TEST(Data, BatchGathersRows) {
  const auto ds = generate(base(4, 0.1));
  const std::vector<std::size_t> rows{5, 2};
  const auto b = ds.train.batch(rows);
  EXPECT_EQ(b.labels, (std::vector<std::size_t>{ds.train.labels[5], ds.train.labels[2]}));
  const std::size_t stride = 4 * 32;
  EXPECT_EQ(b.tokens[stride], ds.train.tokens[2 * stride]);
}

TEST(Data, FileRoundTrip) {
  const auto dir = rankscope::testing::temp_dir("data");
  const auto ds = generate(base(4, 0.1));
  save_dataset((dir / "d.bin").string(), ds);
  const auto back = load_dataset((dir / "d.bin").string());
  EXPECT_EQ(back.train.labels, ds.train.labels);
  EXPECT_TRUE(std::equal(back.val.tokens.values().begin(), back.val.tokens.values().end(),
                         ds.val.tokens.values().begin()));
}
