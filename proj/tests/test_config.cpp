#include <doctest.h>

#include <string>

#include "mml/config.hpp"

using namespace mml;

TEST_CASE("empty document yields the documented defaults") {
  RunConfig cfg = RunConfig::from_text("{}");
  CHECK(cfg.dataset.num_clips_train == 512);
  CHECK(cfg.dataset.n_cls == 8);
  CHECK(cfg.model.widths == std::vector<int>{16, 32, 64});
  CHECK(cfg.model.n_cls == 8);
  CHECK(cfg.model.head == HeadKind::kSoftmaxCe);
  CHECK(cfg.train.epochs == 30);
  CHECK(cfg.train.batch_size == 16);
  CHECK(cfg.train.lr == doctest::Approx(0.01));
  CHECK(cfg.train.lr_milestones == std::vector<int>{20, 25});
  CHECK(cfg.train.sampling.n_in == cfg.model.n_in);
  CHECK(cfg.pipeline_preset == "solo");
  CHECK(cfg.pipeline_modalities.size() == 3);
  CHECK(cfg.eval_dense_k == 1);
  CHECK(cfg.eval_uniform_m == 2);
  CHECK(cfg.flow.lambda == doctest::Approx(0.15));
}

TEST_CASE("unknown keys are rejected with their path") {
  try {
    RunConfig::from_text(R"({"dataset": {"clips": 12}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("dataset.clips") != std::string::npos);
  }
  CHECK_THROWS_AS(RunConfig::from_text(R"({"mystery": 1})"), ConfigError);
}

TEST_CASE("parse errors carry the line number") {
  const char* text = "{\n  \"dataset\": {\n  \"n_cls\" 8\n}}";
  try {
    RunConfig::from_text(text);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("dataset mode drives head kind and loss regime") {
  RunConfig cfg = RunConfig::from_text(R"({"dataset": {"mode": "multi", "n_cls": 6}})");
  CHECK(cfg.model.head == HeadKind::kSigmoidBce);
  CHECK(cfg.model.n_cls == 6);
  RunConfig single = RunConfig::from_text(R"({"dataset": {"mode": "single"}})");
  CHECK(single.model.head == HeadKind::kSoftmaxCe);
}

TEST_CASE("invalid field values are config errors") {
  CHECK_THROWS_AS(RunConfig::from_text(R"({"dataset": {"height": 4}})"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_text(R"({"train": {"momentum": 1.5}})"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_text(R"({"train": {"strategy": "sometimes"}})"),
                  ConfigError);
  CHECK_THROWS_AS(RunConfig::from_text(R"({"pipeline": {"preset": "turbo"}})"),
                  ConfigError);
  CHECK_THROWS_AS(RunConfig::from_text(R"({"dataset": {"mode": "both"}})"), ConfigError);
}

TEST_CASE("modality-specific spec sets the input channel count") {
  RunConfig cfg = RunConfig::from_text("{}");
  CHECK(cfg.model_for(Modality::kRgb).input_channels == 3);
  CHECK(cfg.model_for(Modality::kDiff).input_channels == 15);
  CHECK(cfg.model_for(Modality::kFlow).input_channels == 10);
}
