#include <gtest/gtest.h>

#include "support.hpp"

using namespace mtc;
using namespace mtc::testing;

namespace {

// word table plus one local field table (no globals)
EmbeddingSpace small_space() {
  EmbeddingSpace s;
  s.dim = 2;
  s.table_names = {"word", "context", "doc", "label", "tags"};
  Matrix words(0, 2);
  words.append_row(std::vector<double>{1.0, 0.0});
  words.append_row(std::vector<double>{0.0, 1.0});
  Matrix tags(0, 2);
  tags.append_row(std::vector<double>{0.5, 0.5});
  tags.append_row(std::vector<double>{-0.5, 0.5});
  s.tables = {words, Matrix(0, 2), Matrix(0, 2), Matrix(0, 2), tags};
  return s;
}

Matrix rows_of(const std::vector<std::vector<double>>& rows) {
  Matrix m(0, rows.at(0).size());
  for (const auto& r : rows) m.append_row(r);
  return m;
}

CnnArchitecture single_width(std::size_t h, std::size_t maps) {
  CnnArchitecture a;
  a.widths = {h};
  a.maps_per_width = maps;
  return a;
}

// One width-2 map with w = [1 0 | 0 1], fc weights (+1, -1).
CnnModel hand_model() {
  CnnModel m(single_width(2, 1), 2, 2);
  auto& p = m.params();
  const std::size_t f = m.filter_offset(0, 0);
  p[f + 0] = 1.0;
  p[f + 3] = 1.0;
  p[m.fc_offset(0, 0)] = 1.0;
  p[m.fc_offset(0, 1)] = -1.0;
  return m;
}

double total_loss(const CnnModel& m, const std::vector<Example>& ex) {
  std::vector<Prediction> preds;
  std::vector<std::size_t> gold;
  for (const auto& e : ex) {
    preds.push_back(forward(m, e.input));
    gold.push_back(e.label);
  }
  return nll_loss(preds, gold);
}

// `per_label` examples per label built around a label-specific direction.
std::vector<Example> toy_examples(std::size_t labels, std::size_t per_label, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> centers;
  for (std::size_t l = 0; l < labels; ++l) centers.push_back(random_unit(dim, rng));
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<Example> out;
  for (std::size_t l = 0; l < labels; ++l)
    for (std::size_t i = 0; i < per_label; ++i) {
      Matrix m(0, dim);
      for (std::size_t r = 0; r < 6; ++r) {
        auto row = centers[l];
        for (double& v : row) v += noise(rng);
        m.append_row(row);
      }
      out.push_back({m, l});
    }
  return out;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.arch = single_width(2, 6);
  c.batch_size = 4;
  c.learning_rate = 0.2;
  c.epochs = 10;
  c.init_scale = 0.1;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(EmbedInput, PadsShortDocumentsWithZeroRows) {
  const auto s = small_space();
  const auto m = embed_input(std::vector<std::size_t>{1}, {}, s, 0, 5);
  ASSERT_EQ(m.rows(), 5u);
  EXPECT_EQ(m.row(0)[1], 1.0);
  for (std::size_t r = 1; r < 5; ++r) EXPECT_EQ(norm(m.row(r)), 0.0);
}

TEST(EmbedInput, EmptyDocumentIsAllPadding) {
  const auto m = embed_input(std::vector<std::size_t>{}, {}, small_space(), 0, 3);
  ASSERT_EQ(m.rows(), 3u);
  for (double v : m.data()) EXPECT_EQ(v, 0.0);
}

TEST(EmbedInput, WordsThenSortedLocalMetadata) {
  const auto m = embed_input(std::vector<std::size_t>{0, 1, 0}, {{1, 0}}, small_space(), 0, 2);
  ASSERT_EQ(m.rows(), 5u);
  EXPECT_EQ(m.row(2)[0], 1.0);
  EXPECT_EQ(m.row(3)[0], 0.5);   // tag 0 before tag 1
  EXPECT_EQ(m.row(4)[0], -0.5);
}

TEST(EmbedInput, UnknownRowsAreSkipped) {
  const auto m = embed_input(std::vector<std::size_t>{0, 7}, {{9}}, small_space(), 0, 0);
  EXPECT_EQ(m.rows(), 1u);
}

TEST(Forward, ZeroWeightsGiveUniformOutput) {
  const CnnModel m(CnnArchitecture{}, 3, 4);
  Rng rng(1);
  Matrix x(0, 3);
  for (int r = 0; r < 7; ++r) x.append_row(random_unit(3, rng));
  const auto p = forward(m, x);
  for (double q : p.probs) EXPECT_DOUBLE_EQ(q, 0.25);
  EXPECT_EQ(p.label, 0u);  // ties go to the first label
}

TEST(Forward, HandComputedExample) {
  // windows: [1 0 0 1] -> 2 and [0 1 3 3] -> 3, so the second wins
  const auto m = hand_model();
  const auto x = rows_of({{1.0, 0.0}, {0.0, 1.0}, {3.0, 3.0}});
  ForwardCache cache;
  const auto p = forward(m, x, &cache);
  const double s = 1.0 / (1.0 + std::exp(-3.0));
  EXPECT_NEAR(cache.pooled[0], s, 1e-15);
  EXPECT_EQ(cache.argmax[0], 1u);
  EXPECT_NEAR(p.probs[0], 1.0 / (1.0 + std::exp(-2.0 * s)), 1e-15);
  EXPECT_EQ(p.label, 0u);
}

TEST(Forward, ProbabilitiesFormADistribution) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const auto c = random_cnn_case(rng);
    const auto p = forward(c.model, c.input);
    double z = 0.0;
    for (double q : p.probs) {
      EXPECT_GE(q, 0.0);
      z += q;
    }
    EXPECT_NEAR(z, 1.0, 1e-12);
  }
}

TEST(Forward, RejectsBadInputs) {
  const auto m = hand_model();
  EXPECT_THROW(forward(m, rows_of({{1.0, 0.0}})), std::invalid_argument);  // shorter than the filter
  EXPECT_THROW(forward(m, rows_of({{1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}})), std::invalid_argument);
}

TEST(Loss, OneHotIsZero) {
  const std::vector<Prediction> p{{{0.0, 1.0}, 1}};
  EXPECT_EQ(nll_loss(p, std::vector<std::size_t>{1}), 0.0);
}

TEST(Loss, UniformIsBatchTimesLogL) {
  const std::vector<Prediction> p(7, Prediction{{0.2, 0.2, 0.2, 0.2, 0.2}, 0});
  EXPECT_NEAR(nll_loss(p, std::vector<std::size_t>(7, 3)), 7.0 * std::log(5.0), 1e-12);
}

TEST(Loss, SumsNegativeLogs) {
  const std::vector<Prediction> p{{{0.7, 0.3}, 0}, {{0.1, 0.9}, 1}};
  EXPECT_NEAR(nll_loss(p, std::vector<std::size_t>{0, 0}), -std::log(0.7) - std::log(0.1), 1e-14);
  EXPECT_THROW(nll_loss(p, std::vector<std::size_t>{0}), std::invalid_argument);
}

TEST(Loss, ZeroProbabilityIsFloored) {
  const std::vector<Prediction> p{{{1.0, 0.0}, 0}};
  EXPECT_NEAR(nll_loss(p, std::vector<std::size_t>{1}), -std::log(kProbabilityFloor), 1e-9);
}

TEST(Backward, MatchesFiniteDifferences) {
  Rng rng(8);
  for (int t = 0; t < 20; ++t) EXPECT_LT(cnn_fd_error(random_cnn_case(rng)), 1e-4) << "trial " << t;
}

TEST(Backward, FixedCaseMatchesFiniteDifferences) {
  // p = 8, 3 labels, 10 rows, the default filter widths
  Rng rng(9);
  CnnCase c{init_model(CnnArchitecture{}, 8, 3, 0.5, 4), Matrix(0, 8), 2};
  for (int r = 0; r < 10; ++r) c.input.append_row(random_unit(8, rng));
  ASSERT_GT(min_pool_margin(c.model, c.input), 1e-6);
  EXPECT_LT(cnn_fd_error(c), 1e-4);
}

TEST(Backward, SaturatedGoldGivesZeroGradient) {
  auto m = hand_model();
  m.params()[m.fc_bias_offset(1)] = 60.0;
  ForwardCache cache;
  forward(m, rows_of({{1.0, 0.0}, {0.0, 1.0}, {3.0, 3.0}}), &cache);
  std::vector<double> grad(m.params().size(), 0.0);
  backward(m, cache, 1, grad);
  for (double g : grad) EXPECT_LT(std::abs(g), 1e-20);
}

TEST(Backward, FilterGradientFlowsThroughTheWinningWindowOnly) {
  const auto m = hand_model();
  const auto x = rows_of({{1.0, 0.0}, {0.0, 1.0}, {3.0, 3.0}});
  ForwardCache cache;
  forward(m, x, &cache);
  std::vector<double> grad(m.params().size(), 0.0);
  backward(m, cache, 0, grad);
  const std::size_t f = m.filter_offset(0, 0);
  const double dz = grad[m.bias_offset(0, 0)];
  ASSERT_NE(dz, 0.0);
  const std::vector<double> window{0.0, 1.0, 3.0, 3.0};
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(grad[f + k], dz * window[k], 1e-15);
  EXPECT_THROW(backward(m, cache, 0, std::span<double>(grad.data(), 3)), std::invalid_argument);
}

TEST(Train, ZeroEpochsReturnsTheInitializedModel) {
  auto c = toy_config();
  c.epochs = 0;
  const auto ex = toy_examples(3, 2, 4, 1);
  EXPECT_EQ(train_classifier(ex, 4, 3, c), init_model(c.arch, 4, 3, c.init_scale, c.seed));
}

TEST(Train, LossDecreases) {
  auto c = toy_config();
  c.epochs = 30;
  const auto ex = toy_examples(3, 8, 5, 2);
  const double before = total_loss(init_model(c.arch, 5, 3, c.init_scale, c.seed), ex);
  const double after = total_loss(train_classifier(ex, 5, 3, c), ex);
  EXPECT_LT(after, 0.5 * before);
}

TEST(Train, IsDeterministic) {
  const auto c = toy_config();
  const auto ex = toy_examples(3, 4, 4, 3);
  EXPECT_EQ(train_classifier(ex, 4, 3, c), train_classifier(ex, 4, 3, c));
  auto other = c;
  other.seed = 4;
  EXPECT_NE(train_classifier(ex, 4, 3, c), train_classifier(ex, 4, 3, other));
}

TEST(Train, MemorizesASmallSet) {
  auto c = toy_config();
  c.epochs = 200;
  const auto ex = toy_examples(4, 2, 6, 4);
  const auto m = train_classifier(ex, 6, 4, c);
  for (const auto& e : ex) EXPECT_EQ(forward(m, e.input).label, e.label);
}

TEST(Train, RejectsEmptyTrainingSetAndBadConfig) {
  auto c = toy_config();
  EXPECT_THROW(train_classifier(std::vector<Example>{}, 4, 3, c), std::invalid_argument);
  c.batch_size = 0;
  EXPECT_THROW(train_classifier(toy_examples(2, 1, 4, 5), 4, 2, c), std::invalid_argument);
}

TEST(Train, SyntheticOnlyTrainingAndUnlabeledRealsAreRejected) {
  const auto s = small_space();
  std::vector<std::vector<SyntheticDocument>> synth(2);
  synth[0].push_back({0, {}, {0, 0, 0}, {{}}});
  synth[1].push_back({1, {}, {1, 1, 1}, {{}}});
  auto c = toy_config();
  c.epochs = 100;
  const std::vector<Document> docs{{"a", {0, 0}, {}, {{}}, std::nullopt}};
  const auto m = train_classifier(s, docs, {}, synth, 2, 0, c);
  EXPECT_EQ(predict(m, s, docs, std::vector<std::size_t>{0}, 0)[0].label, 0u);
  EXPECT_THROW(train_classifier(s, docs, std::vector<std::size_t>{0}, synth, 2, 0, c), std::invalid_argument);
}

TEST(Persistence, RoundTrip) {
  TempDir dir("classifier-io");
  const auto m = init_model(CnnArchitecture{}, 7, 3, 0.3, 5);
  save_model(m, dir.file("model.bin"));
  EXPECT_EQ(load_model(dir.file("model.bin")), m);
}

TEST(Persistence, RejectsForeignAndTruncatedFiles) {
  TempDir dir("classifier-bad");
  write_file(dir.file("junk.bin"), "definitely not a model");
  EXPECT_THROW(load_model(dir.file("junk.bin")), std::runtime_error);
  save_model(init_model(CnnArchitecture{}, 4, 2, 0.1, 1), dir.file("model.bin"));
  auto bytes = read_file(dir.file("model.bin"));
  write_file(dir.file("short.bin"), bytes.substr(0, bytes.size() - 8));
  EXPECT_THROW(load_model(dir.file("short.bin")), std::runtime_error);
  EXPECT_THROW(load_model(dir.file("missing.bin")), std::runtime_error);
}
