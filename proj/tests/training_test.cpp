#include <cmath>
#include <set>
#include <sstream>

#include "gtest/gtest.h"
#include "mtr/data/synthetic.hpp"
#include "mtr/training/trainer.hpp"

namespace mtr::training {
namespace {

using T64 = Tensor<double>;

model::FTTConfig Tiny(std::size_t M, std::size_t C = 3) {
  model::FTTConfig c;
  c.n_features = M;
  c.token_dim = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.projection_dims = {8, 8};
  c.n_classes = C;
  c.attention_dropout = 0.1;
  return c;
}

TrainConfig Quick(std::uint64_t seed = 0) {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.batch_size = 16;
  c.pretrain_epochs = 3;
  c.finetune_max_epochs = 5;
  c.patience = 2;
  c.seed = seed;
  return c;
}

struct Toy {
  data::Matrix X;
  std::vector<std::size_t> y;
};

Toy Blobs(std::size_t n, std::size_t M, std::size_t C, std::uint64_t seed) {
  data::BlobsSpec spec;
  spec.n_samples = n;
  spec.n_features = M;
  spec.n_classes = C;
  spec.separation = 2.0;
  spec.seed = seed;
  const auto ds = data::make_blobs(spec);
  return {ds.X, ds.y};
}

std::vector<double> Flatten(const model::NamedParams<double>& params) {
  std::vector<double> out;
  for (const auto& [n, t] : params) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

TEST(TrainConfig, DefaultsAndValidation) {
  const TrainConfig d;
  EXPECT_EQ(d.learning_rate, 1e-4);
  EXPECT_EQ(d.weight_decay, 1e-5);
  EXPECT_EQ(d.batch_size, 128u);
  EXPECT_EQ(d.pretrain_epochs, 200u);
  EXPECT_EQ(d.finetune_max_epochs, 200u);
  EXPECT_EQ(d.patience, 10u);
  auto c = d;
  c.patience = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = d;
  c.pretrain_epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = d;
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(AdamW, QuadraticConvergesToMinimizer) {
  const T64 w({1}, {5.0}, true);
  AdamW<double> opt({{"w", w}}, {.learning_rate = 0.1, .weight_decay = 0.0});
  for (int i = 0; i < 200; ++i) {
    auto d = ops::add_scalar(w, -1.5);
    backward(ops::sum(ops::mul(d, d)));
    opt.step();
  }
  EXPECT_NEAR(w.value(0), 1.5, 1e-3);
  EXPECT_EQ(opt.steps(), 200u);
}

TEST(AdamW, ZeroGradientLeavesParametersAndDecayShrinks) {
  const T64 w({3}, {1.0, -2.0, 0.5}, true);
  AdamW<double> still({{"w", w}}, {.learning_rate = 0.1, .weight_decay = 0.0});
  for (int i = 0; i < 5; ++i) still.step();
  EXPECT_EQ(std::vector<double>(w.values().begin(), w.values().end()), (std::vector<double>{1.0, -2.0, 0.5}));

  AdamW<double> decay({{"w", w}}, {.learning_rate = 0.1, .weight_decay = 0.5});
  double prev = 1e300;
  for (int i = 0; i < 20; ++i) {
    decay.step();
    double norm = 0;
    for (double v : w.values()) norm += v * v;
    EXPECT_LT(norm, prev);
    prev = norm;
  }
}

TEST(AdamW, NonFiniteGradientDiverges) {
  const T64 w({1}, {1.0}, true);
  AdamW<double> opt({{"w", w}}, {});
  w.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(opt.step(), DivergenceError);
}

TEST(EarlyStopping, StopsAfterPatienceAndTracksBest) {
  EarlyStopping s(10);
  std::vector<double> losses{3.0, 2.0};
  for (int i = 0; i < 10; ++i) losses.push_back(2.1 + 0.1 * i);
  std::size_t stopped = 0;
  for (std::size_t e = 0; e < losses.size(); ++e) {
    if (s.observe(losses[e])) {
      stopped = e + 1;
      break;
    }
  }
  EXPECT_EQ(stopped, 12u);
  EXPECT_EQ(s.best_epoch(), 2u);
  EXPECT_EQ(s.best(), 2.0);
  EXPECT_THROW(EarlyStopping(0), ConfigError);
}

TEST(EarlyStopping, EqualLossIsNotAnImprovement) {
  EarlyStopping s(2);
  EXPECT_FALSE(s.observe(1.0));
  EXPECT_FALSE(s.observe(1.0));
  EXPECT_FALSE(s.improved());
  EXPECT_TRUE(s.observe(1.0));
  EXPECT_EQ(s.best_epoch(), 1u);
}

TEST(Batches, ShuffledCoverAndFoldSingletons) {
  Rng rng(1, "batch");
  const auto b = detail::EpochBatches(129, 128, rng, 2);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0].size(), 129u);
  const auto k = detail::EpochBatches(130, 64, rng);
  ASSERT_EQ(k.size(), 3u);
  EXPECT_EQ(k.back().size(), 2u);
  std::set<std::size_t> seen;
  for (const auto& batch : k) seen.insert(batch.begin(), batch.end());
  EXPECT_EQ(seen.size(), 130u);
}

TEST(Pretrain, DeterministicCurvesAndMaskTokenMoves) {
  const auto toy = Blobs(60, 6, 3, 1);
  const auto run = [&](std::uint64_t seed) {
    Rng init(seed, "init");
    model::FTTransformer<double> m(Tiny(6), init);
    const std::vector<double> token(m.mask_token().values().begin(), m.mask_token().values().end());
    auto report = pretrain(m, toy.X, Quick(seed));
    const std::vector<double> after(m.mask_token().values().begin(), m.mask_token().values().end());
    EXPECT_NE(token, after);
    return std::make_pair(report.train_loss, Flatten(m.parameters()));
  };
  const auto a = run(3), b = run(3), c = run(4);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_NE(a.first, c.first);
  EXPECT_EQ(a.first.size(), 3u);
}

TEST(Pretrain, ProgressLinesAreMachineParseable) {
  const auto toy = Blobs(40, 4, 2, 1);
  Rng init(1, "init");
  model::FTTransformer<double> m(Tiny(4, 2), init);
  std::ostringstream out;
  auto cfg = Quick();
  cfg.pretrain_epochs = 2;
  cfg.progress = &out;
  pretrain(m, toy.X, cfg);
  std::istringstream lines(out.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    std::size_t epoch = 0;
    char phase[16], split[16];
    double loss = 0;
    ASSERT_EQ(std::sscanf(line.c_str(), "epoch=%zu phase=%15s split=%15s loss=%lf", &epoch, phase, split, &loss), 4)
        << line;
    EXPECT_EQ(epoch, ++n);
    EXPECT_STREQ(phase, "pretrain");
    EXPECT_STREQ(split, "train");
    EXPECT_TRUE(std::isfinite(loss));
  }
  EXPECT_EQ(n, 2u);
}

TEST(Pretrain, ErrorsCarryWhereTheyHappened) {
  auto toy = Blobs(40, 4, 2, 1);
  Rng init(1, "init");
  model::FTTransformer<double> m(Tiny(4, 2), init);
  EXPECT_THROW(pretrain(m, toy.X, Quick(), PretrainMode::kClip), ConfigError);
  toy.X(5, 2) = std::numeric_limits<double>::infinity();
  try {
    pretrain(m, toy.X, Quick());
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 1);
    EXPECT_GE(e.step(), 1);
  }
}

TEST(Pretrain, UnmatchedArmsEqualStandaloneRuns) {
  const auto a = Blobs(40, 5, 2, 1), b = Blobs(50, 4, 2, 2);
  auto cfg = Quick(7);
  cfg.pretrain_epochs = 2;
  Rng r1(9, "init");
  auto duo = model::DuoFTT<double>::init(Tiny(5, 2), Tiny(4, 2), r1);
  Rng r2(9, "init");
  auto twin = model::DuoFTT<double>::init(Tiny(5, 2), Tiny(4, 2), r2);
  pretrain_unmatched(duo, a.X, b.X, cfg);
  pretrain(twin.arm_a(), a.X, cfg);
  pretrain(twin.arm_b(), b.X, cfg);
  EXPECT_EQ(Flatten(duo.parameters()), Flatten(twin.parameters()));
  EXPECT_THROW(pretrain_unmatched(duo, a.X, data::Matrix(0, 4), cfg), ConfigError);
}

TEST(Pretrain, DuoClipAndMtrRun) {
  const auto a = Blobs(40, 5, 2, 1), b = Blobs(40, 4, 2, 2);
  Rng rng(3, "init");
  auto duo = model::DuoFTT<double>::init(Tiny(5, 2), Tiny(4, 2), rng);
  auto cfg = Quick();
  cfg.pretrain_epochs = 2;
  for (auto mode : {PretrainMode::kMtr, PretrainMode::kClip}) {
    const auto r = pretrain(duo, a.X, b.X, cfg, mode);
    EXPECT_EQ(r.train_loss.size(), 2u);
    for (double l : r.train_loss) EXPECT_TRUE(std::isfinite(l));
  }
  EXPECT_THROW(pretrain(duo, a.X, data::Matrix(a.X.topRows(10)), cfg, PretrainMode::kMtr), DimensionError);
}

TEST(Finetune, RestoresBestEpochAndKeepsBackboneIdentity) {
  const auto toy = Blobs(90, 6, 3, 4);
  Rng init(2, "init");
  model::FTTransformer<double> m(Tiny(6), init);
  pretrain(m, toy.X, Quick());
  const auto backbone = m.backbone_parameters();
  Rng head(2, "head");
  m.attach_classifier(head);
  for (std::size_t i = 0; i < backbone.size(); ++i)
    EXPECT_TRUE(backbone[i].second.same_node(m.backbone_parameters()[i].second));

  const Views train{toy.X.topRows(60)}, val{toy.X.bottomRows(30)};
  const std::span<const std::size_t> y(toy.y);
  auto cfg = Quick(5);
  cfg.finetune_max_epochs = 12;
  cfg.learning_rate = 3e-2;  // noisy enough that validation loss is not monotone
  const auto r = finetune<double>(m, train, y.first(60), val, y.last(30), cfg);
  ASSERT_GE(r.best_epoch, 1u);
  EXPECT_LE(r.best_epoch, r.stopped_epoch);
  const double min = *std::min_element(r.val_loss.begin(), r.val_loss.end());
  EXPECT_EQ(r.val_loss[r.best_epoch - 1], min);
  EXPECT_NEAR(ValidationLoss<double>(m, val, y.last(30), 256), min, 1e-12);
  for (std::size_t i = 0; i < backbone.size(); ++i)
    EXPECT_TRUE(backbone[i].second.same_node(m.backbone_parameters()[i].second));
}

TEST(Finetune, PatienceBeyondMaxRunsEveryEpoch) {
  const auto toy = Blobs(60, 4, 2, 4);
  Rng init(2, "init");
  model::FTTransformer<double> m(Tiny(4, 2), init);
  m.attach_classifier(init);
  auto cfg = Quick();
  cfg.finetune_max_epochs = 4;
  cfg.patience = 50;
  const std::span<const std::size_t> y(toy.y);
  const auto r = finetune<double>(m, Views{toy.X.topRows(40)}, y.first(40), Views{toy.X.bottomRows(20)},
                                  y.last(20), cfg);
  EXPECT_EQ(r.stopped_epoch, 4u);
  EXPECT_EQ(r.val_loss.size(), 4u);
  const double min = *std::min_element(r.val_loss.begin(), r.val_loss.end());
  EXPECT_EQ(r.val_loss[r.best_epoch - 1], min);
}

TEST(Finetune, ErrorsOnEmptyOrMismatchedInput) {
  const auto toy = Blobs(40, 4, 2, 4);
  Rng init(2, "init");
  model::FTTransformer<double> m(Tiny(4, 2), init);
  m.attach_classifier(init);
  const std::vector<std::size_t> none;
  EXPECT_THROW(finetune<double>(m, Views{data::Matrix(0, 4)}, none, Views{toy.X}, toy.y, Quick()), ConfigError);
  EXPECT_THROW(finetune<double>(m, Views{toy.X}, std::span(toy.y).first(5), Views{toy.X}, toy.y, Quick()),
               DimensionError);
}

TEST(Finetune, MlpAndDuoShareTheLoop) {
  const auto a = Blobs(60, 5, 2, 1), b = Blobs(60, 4, 2, 1);
  const std::span<const std::size_t> y(a.y);
  model::MlpConfig mc;
  mc.n_features = 5;
  mc.n_classes = 2;
  Rng rng(1, "init");
  model::Mlp<double> mlp(mc, rng);
  auto r = finetune<double>(mlp, Views{a.X.topRows(40)}, y.first(40), Views{a.X.bottomRows(20)}, y.last(20), Quick());
  EXPECT_GE(r.best_epoch, 1u);

  auto duo = model::DuoFTT<double>::init(Tiny(5, 2), Tiny(4, 2), rng);
  duo.attach_classifier(rng);
  const Views train{a.X.topRows(40), b.X.topRows(40)}, val{a.X.bottomRows(20), b.X.bottomRows(20)};
  r = finetune<double>(duo, train, y.first(40), val, y.last(20), Quick(), {.augment_p_m = 0.3});
  EXPECT_GE(r.best_epoch, 1u);
  const auto p = predict_proba<double>(duo, val);
  EXPECT_EQ(p.rows(), 20);
  for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
  EXPECT_THROW(predict_proba<double>(duo, Views{a.X}), ConfigError);
}

TEST(Predict, ForcedMaskReplacesCellsWithMaskToken) {
  const auto toy = Blobs(20, 4, 2, 1);
  Rng init(2, "init");
  model::FTTransformer<double> m(Tiny(4, 2), init);
  m.attach_classifier(init);
  data::MaskMatrix mask = data::MaskMatrix::Zero(20, 4);
  mask(3, 1) = 1;
  data::Matrix changed = toy.X;
  changed(3, 1) = 1e6;
  const auto p1 = predict_proba<double>(m, Views{toy.X}, {.forced_masks = {&mask}});
  const auto p2 = predict_proba<double>(m, Views{changed}, {.forced_masks = {&mask}});
  EXPECT_EQ(p1, p2);
  const auto p3 = predict_proba<double>(m, Views{changed});
  EXPECT_NE(p1.row(3), p3.row(3));
}

}  // namespace
}  // namespace mtr::training
