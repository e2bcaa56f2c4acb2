#include "doctest.h"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "symcad/pipeline.hpp"

using namespace symcad;
using namespace symcad::pipeline;

#ifndef SYMCAD_CONFIG_DIR
#define SYMCAD_CONFIG_DIR "configs"
#endif

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

ConfigMap smoke_config() {
  return ConfigMap::parse_file(std::filesystem::path(SYMCAD_CONFIG_DIR) / "smoke.conf");
}

}  // namespace

TEST_CASE("pipeline config: parses the smoke config strictly") {
  const auto pc = PipelineConfig::from_config(smoke_config());
  CHECK(pc.phantom_cfg.n_exams == 16);
  CHECK(pc.net.input_size_px == 48);
  CHECK(pc.cand_threshold == 0.25);
  CHECK(pc.config_hash != 0);
}

TEST_CASE("pipeline config: a missing seed names the key") {
  auto cfg = ConfigMap::parse_string(
      "phantom.seed = 1\nsplit.seed = 2\npatches.seed = 3\ncandidates.threshold = 0.5\n"
      "eval.seed = 5\n");
  try {
    PipelineConfig::from_config(cfg);
    FAIL("expected throw");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("train.seed") != std::string::npos);
  }
}

TEST_CASE("pipeline config: unknown keys are rejected") {
  auto cfg = ConfigMap::parse_string(
      "phantom.seed = 1\nsplit.seed = 2\npatches.seed = 3\ntrain.seed = 4\neval.seed = 5\n"
      "candidates.threshold = 0.5\nnet.inptu_px = 48\n");
  try {
    PipelineConfig::from_config(cfg);
    FAIL("expected throw");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("net.inptu_px") != std::string::npos);
  }
}

TEST_CASE("pipeline config: threshold out of range is rejected") {
  auto cfg = ConfigMap::parse_string(
      "phantom.seed = 1\nsplit.seed = 2\npatches.seed = 3\ntrain.seed = 4\neval.seed = 5\n"
      "candidates.threshold = 1.5\n");
  CHECK_THROWS(PipelineConfig::from_config(cfg));
}

TEST_CASE("pipeline: stages run end to end; reruns are byte-identical") {
  const auto pc = PipelineConfig::from_config(smoke_config());
  const StagePaths paths{std::filesystem::temp_directory_path() / "symcad_pipe_test"};
  std::filesystem::remove_all(paths.out);
  std::filesystem::create_directories(paths.out);

  cmd_phantom(pc, paths);
  REQUIRE(std::filesystem::exists(paths.manifest()));
  const auto manifest = phantom::read_manifest(paths.manifest());
  CHECK(manifest.exams.size() == 16);
  size_t n_images = 0;
  for (const auto& e : manifest.exams) {
    CHECK(!e.split.empty());
    n_images += e.images.size();
    for (const auto& img : e.images)
      CHECK(std::filesystem::exists(paths.out / img.path));
  }

  // Re-running the phantom stage reproduces the manifest byte for byte.
  const std::string manifest_bytes = slurp(paths.manifest());
  cmd_phantom(pc, paths);
  CHECK(slurp(paths.manifest()) == manifest_bytes);

  cmd_candidates(pc, paths);
  for (const std::string split : {"train", "val", "test"})
    REQUIRE(std::filesystem::exists(paths.candidates_csv(split)));
  const auto train_csv = candidates::read_candidates_csv(paths.candidates_csv("train"));
  CHECK(!train_csv.cands.empty());
  bool has_pos = false, has_neg = false;
  for (const auto& c : train_csv.cands) {
    CHECK(c.label != candidates::Label::unknown);
    has_pos |= c.label == candidates::Label::positive;
    has_neg |= c.label == candidates::Label::negative;
  }
  CHECK(has_pos);
  CHECK(has_neg);

  const std::string cands_bytes = slurp(paths.candidates_csv("test"));
  cmd_candidates(pc, paths);
  CHECK(slurp(paths.candidates_csv("test")) == cands_bytes);

  cmd_patches(pc, paths);
  const auto train_pairs =
      patches::read_patch_archive(paths.patches_bin("train"), paths.patches_index("train"));
  REQUIRE(!train_pairs.empty());
  size_t pos = 0, with_contra = 0;
  for (const auto& p : train_pairs) {
    CHECK(p.primary.rows == pc.patch_store_px);
    pos += p.positive ? 1 : 0;
    with_contra += p.has_contralateral ? 1 : 0;
    if (!p.has_contralateral)
      for (float v : p.contralateral.data) CHECK(v == 0.0f);
  }
  CHECK(pos > 0);
  CHECK(2 * pos < train_pairs.size());  // negatives remain the majority class
  CHECK(with_contra > 0);
  CHECK(with_contra < train_pairs.size());  // missing-laterality exams present

  // symmetry before baseline must fail with a helpful message
  try {
    cmd_train(pc, paths, nnet::ModelKind::symmetry);
    FAIL("expected throw");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("baseline") != std::string::npos);
  }

  cmd_train(pc, paths, nnet::ModelKind::baseline);
  REQUIRE(std::filesystem::exists(paths.checkpoint(nnet::ModelKind::baseline)));
  REQUIRE(std::filesystem::exists(paths.train_log(nnet::ModelKind::baseline)));
  cmd_train(pc, paths, nnet::ModelKind::symmetry);

  const auto base_ckpt = nnet::load_checkpoint(paths.checkpoint(nnet::ModelKind::baseline));
  CHECK(base_ckpt.epoch >= 1);
  const auto sym_ckpt = nnet::load_checkpoint(paths.checkpoint(nnet::ModelKind::symmetry));
  CHECK(sym_ckpt.spec.kind == nnet::ModelKind::symmetry);

  cmd_eval(pc, paths);
  REQUIRE(std::filesystem::exists(paths.report()));
  const auto report = nlohmann::json::parse(slurp(paths.report()));
  CHECK(report.at("schema_version").get<int>() == 1);
  for (const std::string model : {"candidate", "baseline", "symmetry"}) {
    const auto& jm = report.at("models").at(model);
    const double auc = jm.at("auc").get<double>();
    CHECK(auc >= 0.0);
    CHECK(auc <= 1.0);
    const auto ci = jm.at("auc_ci").get<std::vector<double>>();
    REQUIRE(ci.size() == 2);
    CHECK(ci[0] <= ci[1]);
    CHECK(jm.at("cpm_image").get<double>() >= 0.0);
    CHECK(jm.at("cpm_exam").get<double>() <= 1.0);
    CHECK(std::filesystem::exists(paths.roc_csv(model)));
    CHECK(std::filesystem::exists(paths.froc_csv(model, "image")));
    CHECK(std::filesystem::exists(paths.froc_csv(model, "exam")));
  }
  // Missing-contralateral sub-metric is emitted for the symmetry model.
  CHECK(report.at("models").at("symmetry").contains("missing_contralateral"));
  CHECK(report.at("models").at("symmetry").at("missing_contralateral").at("n_candidates").get<int>() >
        0);
  CHECK(report.at("comparisons").contains("symmetry_vs_baseline"));

  // Byte-identical report on rerun.
  const std::string report_bytes = slurp(paths.report());
  cmd_eval(pc, paths);
  CHECK(slurp(paths.report()) == report_bytes);

  std::filesystem::remove_all(paths.out);
}
