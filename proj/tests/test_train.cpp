#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "lotnext/error.hpp"
#include "lotnext/optim.hpp"
#include "lotnext/train.hpp"
#include "model_fixtures.hpp"

using namespace lotnext;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("lotnext_train_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.model = lotnext::testing::tiny_model_config();
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.seed = 9;
  return cfg;
}

}  // namespace

TEST(DeriveSeed, StreamsDiffer) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t root : {0ull, 1ull, 42ull})
    for (std::uint64_t s = 0; s < 8; ++s) seen.insert(derive_seed(root, s));
  EXPECT_EQ(seen.size(), 24u);
  EXPECT_EQ(derive_seed(42, 1), derive_seed(42, 1));
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.learning_rate = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.early_stopping_patience = -2;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(AdamW, FirstStepMatchesHandComputation) {
  ad::ParameterStore store;
  auto& p = store.add("w", (Matrix(1, 3) << 1.0, -2.0, 0.5).finished());
  p.grad = (Matrix(1, 3) << 0.3, 0.0, -4.0).finished();
  AdamWConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.01;
  AdamW opt(store, cfg);
  opt.step();
  // After bias correction the first step is lr * g / (|g| + eps).
  const double eps = cfg.eps;
  const double decay = 1.0 - 0.1 * 0.01;
  EXPECT_NEAR(p.value(0, 0), 1.0 * decay - 0.1 * 0.3 / (0.3 + eps), 1e-12);
  EXPECT_NEAR(p.value(0, 1), -2.0 * decay, 1e-12);
  EXPECT_NEAR(p.value(0, 2), 0.5 * decay + 0.1 * 4.0 / (4.0 + eps), 1e-12);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(AdamW, SecondStepMatchesMoments) {
  ad::ParameterStore store;
  auto& p = store.add("w", Matrix::Constant(1, 1, 2.0));
  AdamWConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.weight_decay = 0.0;
  AdamW opt(store, cfg);
  p.grad = Matrix::Constant(1, 1, 1.0);
  opt.step();
  p.grad = Matrix::Constant(1, 1, -3.0);
  opt.step();
  const double m = 0.9 * 0.1 * 1.0 + 0.1 * -3.0;
  const double v = 0.999 * 0.001 * 1.0 + 0.001 * 9.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  const double expected = 2.0 - 0.05 * (1.0 / (1.0 + cfg.eps)) - 0.05 * mh / (std::sqrt(vh) + cfg.eps);
  EXPECT_NEAR(p.value(0, 0), expected, 1e-12);
}

TEST(AdamW, ZeroGradientWithoutDecayLeavesValues) {
  ad::ParameterStore store;
  auto& p = store.add("w", (Matrix(2, 2) << 1, 2, 3, 4).finished());
  const Matrix before = p.value;
  p.zero_grad();
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(store, cfg);
  for (int i = 0; i < 5; ++i) opt.step();
  EXPECT_EQ(p.value, before);
}

TEST(ClipGradNorm, ScalesOnlyWhenAboveLimit) {
  ad::ParameterStore store;
  auto& a = store.add("a", Matrix::Zero(1, 2));
  auto& b = store.add("b", Matrix::Zero(1, 1));
  a.grad = (Matrix(1, 2) << 3.0, 0.0).finished();
  b.grad = (Matrix(1, 1) << 4.0).finished();
  EXPECT_DOUBLE_EQ(clip_grad_norm(store, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(a.grad(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(store, 1.0), 5.0);
  EXPECT_NEAR(std::hypot(a.grad(0, 0), b.grad(0, 0)), 1.0, 1e-9);
  EXPECT_NEAR(a.grad(0, 0) / b.grad(0, 0), 0.75, 1e-12);
}

TEST(EpochRecord, LineFormat) {
  EpochRecord rec;
  rec.epoch = 3;
  rec.loss.ce = 1.5;
  rec.loss.lambda = {1.0, 1.0, 1.0};
  std::ostringstream a;
  write_epoch_record(a, rec);
  EXPECT_EQ(a.str().rfind("epoch=3 ce=1.5 ", 0), 0u);
  EXPECT_EQ(a.str().find("acc@1="), std::string::npos);
  EXPECT_NE(a.str().find(" seconds="), std::string::npos);
  EXPECT_EQ(a.str().back(), '\n');
  rec.test = MetricsReport{0.25, 0.5, 0.75, 0.4, 8};
  std::ostringstream b;
  write_epoch_record(b, rec);
  EXPECT_NE(b.str().find(" acc@1=0.25 acc@5=0.5 acc@10=0.75 mrr=0.4"), std::string::npos);
}

TEST(Train, OneEpochSmokeAndDeterminism) {
  const auto ds = lotnext::testing::tiny_dataset();
  const auto cfg = small_config();
  std::ostringstream log1, log2;
  auto r1 = train(ds, cfg, &log1);
  auto r2 = train(ds, cfg, &log2);
  ASSERT_EQ(r1.report.epochs.size(), 1u);
  EXPECT_TRUE(std::isfinite(r1.report.epochs[0].loss.joint));
  ASSERT_TRUE(r1.report.epochs[0].test.has_value());
  EXPECT_EQ(r1.report.epochs[0].test->n_samples, 12u);
  for (std::size_t i = 0; i < r1.model.params().size(); ++i)
    EXPECT_EQ(r1.model.params()[i].value, r2.model.params()[i].value) << r1.model.params()[i].name;
  EXPECT_EQ(log1.str().substr(0, log1.str().find(" seconds=")), log2.str().substr(0, log2.str().find(" seconds=")));
}

TEST(Train, DifferentSeedsDiffer) {
  const auto ds = lotnext::testing::tiny_dataset();
  auto cfg = small_config();
  auto a = train(ds, cfg);
  cfg.seed = 10;
  auto b = train(ds, cfg);
  EXPECT_NE(a.model.params().get("poi_emb").value, b.model.params().get("poi_emb").value);
}

TEST(Train, RejectsWindowsLongerThanModel) {
  const auto ds = lotnext::testing::tiny_dataset();
  auto cfg = small_config();
  cfg.model.window_len = 3;
  EXPECT_THROW(train(ds, cfg), Error);
}

TEST(Train, JointLossSettlesOnOverfitSet) {
  const auto ds = lotnext::testing::overfit_dataset();
  TrainConfig cfg;
  cfg.model.window_len = 5;
  cfg.epochs = 40;
  cfg.batch_size = 20;
  cfg.learning_rate = 0.01;
  cfg.weight_decay = 0.0;
  cfg.seed = 3;
  const auto res = train(ds, cfg);
  const auto& e = res.report.epochs;
  int checked = 0, non_increasing = 0;
  for (std::size_t i = 11; i < e.size(); ++i) {
    ++checked;
    non_increasing += e[i].loss.joint <= e[i - 1].loss.joint + 1e-12 ? 1 : 0;
  }
  EXPECT_GE(non_increasing, static_cast<int>(std::ceil(0.9 * checked)));
  EXPECT_LT(e.back().loss.joint, e.front().loss.joint);
}

TEST(Checkpoint, RoundTripGivesIdenticalPredictions) {
  const auto ds = lotnext::testing::tiny_dataset();
  const auto cfg = small_config();
  auto trained = train(ds, cfg);
  const auto dir = scratch("roundtrip");
  save_checkpoint(make_checkpoint(trained.model, cfg, ds, 1), dir / "m.ckpt");
  const auto ckpt = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(ckpt.version, kCheckpointVersion);
  EXPECT_EQ(ckpt.epoch, 1);
  EXPECT_NO_THROW(verify_vocabulary(ckpt, ds));
  const auto restored_cfg = checkpoint_config(ckpt);
  EXPECT_EQ(restored_cfg.model.window_len, cfg.model.window_len);
  EXPECT_EQ(restored_cfg.seed, cfg.seed);
  auto restored = restore_model(ckpt);
  const auto graphs = make_graph_context(ds, {});
  const auto batch = make_batch(ds.test[0], ds.coords);
  EXPECT_EQ(trained.model.infer(batch, graphs, {}).first, restored.infer(batch, graphs, {}).first);
}

TEST(Checkpoint, ErrorsOnMissingCorruptOrIncompatible) {
  const auto ds = lotnext::testing::tiny_dataset();
  const auto cfg = small_config();
  LotNextModel model(cfg.model, ds.n_users(), ds.n_pois(), 1);
  const auto dir = scratch("errors");
  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), NotFoundError);

  auto ckpt = make_checkpoint(model, cfg, ds, 0);
  ckpt.version = kCheckpointVersion + 1;
  save_checkpoint(ckpt, dir / "future.ckpt");
  EXPECT_THROW(load_checkpoint(dir / "future.ckpt"), CheckpointError);

  save_checkpoint(make_checkpoint(model, cfg, ds, 0), dir / "good.ckpt");
  const auto size = fs::file_size(dir / "good.ckpt");
  fs::copy_file(dir / "good.ckpt", dir / "short.ckpt");
  fs::resize_file(dir / "short.ckpt", size - 5);
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), CheckpointError);
  {
    std::ofstream f(dir / "junk.ckpt", std::ios::binary);
    f << "not a checkpoint at all";
  }
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), CheckpointError);

  auto other = ds;
  other.pois = Vocabulary{};
  for (int p = 0; p < ds.n_pois(); ++p) other.pois.add("q" + std::to_string(p));
  EXPECT_THROW(verify_vocabulary(load_checkpoint(dir / "good.ckpt"), other), CheckpointError);

  auto missing = load_checkpoint(dir / "good.ckpt");
  missing.arrays.pop_back();
  EXPECT_THROW(restore_model(missing), CheckpointError);
}
