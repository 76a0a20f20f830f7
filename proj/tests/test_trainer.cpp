// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>

#include "afa/checkpoint.hpp"
#include "afa/trainer.hpp"
#include "support.hpp"

namespace afa {
namespace {

namespace fs = std::filesystem;

StreamResult train_quick(std::size_t n_tasks, std::size_t threads = 1, const TaskHook& hook = {}) {
  return run_stream(test::quick_config(), test::first_tasks(n_tasks), threads, hook);
}

std::string slurp(const fs::path& p) { return detail::read_text(p); }

void overwrite(const fs::path& p, const std::string& text) { detail::write_text(p, text); }

TEST(TrainTask, RejectsTasksOutOfOrder) {
  const auto tasks = test::first_tasks(2);
  ModelState m = build_model(resolve_config(test::quick_config(), tasks));
  EXPECT_THROW(train_task(m, tasks[1]), ContractError);
  train_task(m, tasks[0]);
  EXPECT_THROW(train_task(m, tasks[0]), ContractError);
  EXPECT_EQ(m.trained_tasks, 1u);
}

TEST(TrainTask, RejectsTasksBeyondTheConfiguredStream) {
  const auto tasks = test::first_tasks(1);
  ModelState m = build_model(resolve_config(test::quick_config(), tasks));
  train_task(m, tasks[0]);
  TaskData extra = test::fixture_tasks()[1];
  EXPECT_THROW(train_task(m, extra), ContractError);
}

TEST(TrainTask, RejectsClassCountMismatch) {
  const auto tasks = test::first_tasks(1);
  TrainConfig cfg = resolve_config(test::quick_config(), tasks);
  cfg.class_counts = {tasks[0].num_classes + 1};
  ModelState m = build_model(cfg);
  EXPECT_THROW(train_task(m, tasks[0]), ContractError);
}

TEST(TrainTask, StepsTouchASingleAdapterFamily) {
  const auto tasks = test::first_tasks(1);
  ModelState m = build_model(resolve_config(test::quick_config(), tasks));
  m.abfa.expand_router(1);
  GradientTape tape;
  track_abfa(m, 0, tape);
  EXPECT_NO_THROW(detail::check_single_family(tape, "abfa"));
  track_affa(m, tape);
  EXPECT_THROW(detail::check_single_family(tape, "abfa"), ContractError);
  EXPECT_THROW(detail::check_single_family(tape, "affa"), ContractError);
}

TEST(TrainTask, LogsEveryStepOfBothPhases) {
  const StreamResult r = train_quick(1);
  const TrainConfig cfg = test::quick_config();
  ASSERT_EQ(r.log.records.size(), cfg.iterations_abfa + cfg.iterations_affa);
  EXPECT_EQ(r.log.records.front().phase, "abfa");
  EXPECT_EQ(r.log.records.back().phase, "affa");
  const std::string jsonl = r.log.to_jsonl();
  EXPECT_EQ(static_cast<std::size_t>(std::count(jsonl.begin(), jsonl.end(), '\n')), r.log.records.size());
}

TEST(RunStream, FrozenRoutersNeverChange) {
  std::vector<std::vector<Matrix>> snapshots;
  const StreamResult r = train_quick(3, 1, [&](const ModelState& s, std::size_t t) {
    std::vector<Matrix> w;
    for (const auto& site : s.abfa.sites()) w.push_back(site.routers[t].weights.value());
    snapshots.push_back(w);
  });
  ASSERT_EQ(snapshots.size(), 3u);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_TRUE(r.state.abfa.router_frozen(t));
    for (std::size_t s = 0; s < r.state.abfa.sites().size(); ++s) {
      EXPECT_EQ(r.state.abfa.sites()[s].routers[t].weights.value(), snapshots[t][s]);
    }
  }
}

TEST(RunStream, FillsTheWholeMatrix) {
  const StreamResult r = train_quick(2);
  EXPECT_TRUE(r.matrix.complete());
  EXPECT_EQ(r.state.trained_tasks, 2u);
  EXPECT_EQ(r.state.bank.task_count(), 2u);
  EXPECT_EQ(r.state.abfa.task_count(), 2u);
}

TEST(RunStream, SameSeedIsBitIdentical) {
  const StreamResult a = train_quick(2);
  const StreamResult b = train_quick(2);
  EXPECT_TRUE(a.matrix == b.matrix);
  EXPECT_EQ(a.log.to_jsonl(), b.log.to_jsonl());
  ModelState sa = a.state, sb = b.state;
  std::vector<Matrix> va, vb;
  for_each_param(sa, [&](Param& p) { va.push_back(p.value()); });
  for_each_param(sb, [&](Param& p) { vb.push_back(p.value()); });
  EXPECT_EQ(va, vb);
}

TEST(RunStream, ThreadCountDoesNotChangeTheMatrix) {
  EXPECT_TRUE(train_quick(2, 1).matrix == train_quick(2, 4).matrix);
}

TEST(RunStream, FrozenExpertsKeepOldTasksExact) {
  TrainConfig cfg = test::quick_config();
  cfg.freeze_experts_after_task = true;
  const StreamResult r = run_stream(cfg, test::first_tasks(3));
  for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(r.matrix.at(2, t), r.matrix.at(t, t));
}

TEST(RunStream, ParametersStayF32Exact) {
  StreamResult r = train_quick(1);
  for_each_param(r.state, [](Param& p) {
    for (double x : p.value().data()) ASSERT_EQ(static_cast<double>(static_cast<float>(x)), x) << p.name();
  });
}

TEST(ResolveConfig, FillsAndChecksDataShape) {
  const auto tasks = test::first_tasks(2);
  const TrainConfig cfg = resolve_config(TrainConfig::fixture(), tasks);
  EXPECT_EQ(cfg.d_in, tasks[0].train_x[0].size());
  EXPECT_EQ(cfg.class_counts, (std::vector<std::size_t>{tasks[0].num_classes, tasks[1].num_classes}));
  TrainConfig wrong = TrainConfig::fixture();
  wrong.d_in = 3;
  EXPECT_THROW(resolve_config(wrong, tasks), ContractError);
  wrong = TrainConfig::fixture();
  wrong.class_counts = {1, 1};
  EXPECT_THROW(resolve_config(wrong, tasks), ContractError);
}

TEST(SubsampleShots, KeepsAtMostNPerClassInOrder) {
  std::vector<Vector> xs;
  std::vector<std::size_t> ys;
  for (std::size_t i = 0; i < 30; ++i) {
    xs.push_back({static_cast<double>(i)});
    ys.push_back(i % 3);
  }
  auto kx = xs;
  auto ky = ys;
  subsample_shots(kx, ky, 3, 4, 9);
  ASSERT_EQ(kx.size(), 12u);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(std::count(ky.begin(), ky.end(), c), 4);
  for (std::size_t i = 1; i < kx.size(); ++i) EXPECT_LT(kx[i - 1][0], kx[i][0]);
  auto x2 = xs;
  auto y2 = ys;
  subsample_shots(x2, y2, 3, 4, 9);
  EXPECT_EQ(x2, kx);
  subsample_shots(xs, ys, 3, 0, 9);
  EXPECT_EQ(xs.size(), 30u);
}

class CheckpointTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { result_ = new StreamResult(train_quick(2)); }
  static void TearDownTestSuite() {
    delete result_;
    result_ = nullptr;
  }
  static StreamResult* result_;
};

StreamResult* CheckpointTest::result_ = nullptr;

TEST_F(CheckpointTest, SaveLoadSaveIsByteIdentical) {
  const fs::path a = test::scratch_dir("ckpt_a");
  const fs::path b = test::scratch_dir("ckpt_b");
  ModelState state = result_->state;
  save_checkpoint(state, a);
  ModelState loaded = load_checkpoint(a);
  save_checkpoint(loaded, b);
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  EXPECT_EQ(slurp(a / "tensors.bin"), slurp(b / "tensors.bin"));
}

TEST_F(CheckpointTest, LoadedModelPredictsIdentically) {
  const fs::path dir = test::scratch_dir("ckpt_probe");
  ModelState state = result_->state;
  save_checkpoint(state, dir);
  const ModelState loaded = load_checkpoint(dir);
  EXPECT_EQ(loaded.trained_tasks, 2u);
  for (std::size_t t = 0; t < 2; ++t) {
    EXPECT_TRUE(loaded.abfa.router_frozen(t));
    EXPECT_EQ(loaded.bank.prototypes(t), state.bank.prototypes(t));
  }
  const auto tasks = test::first_tasks(2);
  for (std::size_t j = 0; j < 2; ++j) {
    const Predictor p0(state, state.class_ids(j));
    const Predictor p1(loaded, loaded.class_ids(j));
    for (const auto& x : tasks[j].test_x) EXPECT_EQ(p0.predict(x), p1.predict(x));
    EXPECT_EQ(evaluate_task(loaded, tasks[j].test_x, tasks[j].test_y, loaded.class_ids(j)),
              result_->matrix.at(1, j));
  }
}

TEST_F(CheckpointTest, CorruptedManifestIsAChecksumError) {
  const fs::path dir = test::scratch_dir("ckpt_manifest");
  ModelState state = result_->state;
  save_checkpoint(state, dir);
  std::string text = slurp(dir / "manifest.json");
  const auto pos = text.find("\"lr\"");
  ASSERT_NE(pos, std::string::npos);
  text.replace(text.find("0.001", pos), 5, "0.002");
  overwrite(dir / "manifest.json", text);
  EXPECT_THROW(load_checkpoint(dir), ChecksumError);
}

TEST_F(CheckpointTest, CorruptedPayloadIsAChecksumError) {
  const fs::path dir = test::scratch_dir("ckpt_payload");
  ModelState state = result_->state;
  save_checkpoint(state, dir);
  std::string bin = slurp(dir / "tensors.bin");
  bin[bin.size() / 2] ^= 0x01;
  overwrite(dir / "tensors.bin", bin);
  EXPECT_THROW(load_checkpoint(dir), ChecksumError);
}

TEST_F(CheckpointTest, UnknownVersionIsAVersionError) {
  const fs::path dir = test::scratch_dir("ckpt_version");
  ModelState state = result_->state;
  save_checkpoint(state, dir);
  auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  manifest["format_version"] = 2;
  overwrite(dir / "manifest.json", manifest.dump(2));
  EXPECT_THROW(load_checkpoint(dir), VersionError);
}

TEST_F(CheckpointTest, GarbageManifestIsAFormatError) {
  const fs::path dir = test::scratch_dir("ckpt_garbage");
  ModelState state = result_->state;
  save_checkpoint(state, dir);
  overwrite(dir / "manifest.json", "{not json");
  EXPECT_THROW(load_checkpoint(dir), FormatError);
}

TEST_F(CheckpointTest, MissingDirectoryIsAnIoError) {
  EXPECT_THROW(load_checkpoint(test::scratch_dir("ckpt_missing") / "nope"), IoError);
}

TEST_F(CheckpointTest, MidTaskStateCannotBeSaved) {
  ModelState state = result_->state;
  TrainConfig cfg = state.config;
  ModelState fresh = build_model(cfg);
  fresh.abfa.expand_router(1);
  EXPECT_THROW(save_checkpoint(fresh, test::scratch_dir("ckpt_mid")), ContractError);
}

TEST_F(CheckpointTest, ManifestRecordsTheTensorTable) {
  const fs::path dir = test::scratch_dir("ckpt_table");
  ModelState state = result_->state;
  save_checkpoint(state, dir);
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["format_version"], kCheckpointVersion);
  EXPECT_EQ(manifest["trained_tasks"], 2);
  std::size_t bytes = 0;
  bool saw_router = false, saw_prototypes = false;
  for (const auto& t : manifest["tensors"]) {
    EXPECT_EQ(t["dtype"], "f32");
    EXPECT_EQ(t["offset"].get<std::size_t>(), bytes);
    bytes += t["length"].get<std::size_t>();
    const auto name = t["name"].get<std::string>();
    if (name == "abfa.image.l0.router0") {
      saw_router = true;
      EXPECT_TRUE(t["frozen"].get<bool>());
    }
    if (name == "dds.task1.prototypes") saw_prototypes = true;
  }
  EXPECT_TRUE(saw_router);
  EXPECT_TRUE(saw_prototypes);
  EXPECT_EQ(bytes, fs::file_size(dir / "tensors.bin"));
}

TEST(Crc32, KnownValue) {
  EXPECT_EQ(crc32_of(std::string("123456789")), 0xCBF43926u);
}

}  // namespace
}  // namespace afa
