// Command-line driver: one subcommand per pipeline stage plus `pipeline`
// to run everything in order. All artifacts live under --out.

#include <omp.h>

#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "symcad/config.hpp"
#include "symcad/pipeline.hpp"
#include "symcad/version.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  int64_t seed = -1;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "pipeline config file")->required();
  cmd->add_option("--out", opts.out_dir, "output directory (default: out)");
  cmd->add_option("--seed", opts.seed, "override every per-stage seed in the config");
  cmd->add_option("--threads", opts.threads, "worker threads (default: all cores)");
}

symcad::pipeline::PipelineConfig load_config(const CommonOpts& opts) {
  auto cfg = symcad::ConfigMap::parse_file(opts.config_path);
  if (opts.seed >= 0) {
    const std::string s = std::to_string(opts.seed);
    for (const char* key :
         {"phantom.seed", "split.seed", "patches.seed", "train.seed", "eval.seed"})
      cfg.set(key, s);
  }
  if (opts.threads > 0) omp_set_num_threads(opts.threads);
  return symcad::pipeline::PipelineConfig::from_config(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"symcad: synthetic bilateral mammography CAD pipeline"};
  app.set_version_flag("--version", symcad::kToolVersion);
  app.require_subcommand(1);

  CommonOpts opts;
  std::string model = "baseline";

  auto* c_phantom = app.add_subcommand("phantom", "generate the synthetic dataset");
  auto* c_cands = app.add_subcommand("candidates", "detect suspicious candidates");
  auto* c_patches = app.add_subcommand("patches", "build symmetric patch archives");
  auto* c_train = app.add_subcommand("train", "train a model from patch archives");
  auto* c_eval = app.add_subcommand("eval", "score test candidates and write the report");
  auto* c_pipe = app.add_subcommand("pipeline", "run all stages in order");
  for (auto* cmd : {c_phantom, c_cands, c_patches, c_train, c_eval, c_pipe}) add_common(cmd, opts);
  c_train->add_option("--model", model, "baseline or symmetry")
      ->check(CLI::IsMember({"baseline", "symmetry"}));

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = load_config(opts);
    const symcad::pipeline::StagePaths paths{opts.out_dir};
    std::filesystem::create_directories(paths.out);

    if (c_phantom->parsed()) symcad::pipeline::cmd_phantom(cfg, paths);
    if (c_cands->parsed()) symcad::pipeline::cmd_candidates(cfg, paths);
    if (c_patches->parsed()) symcad::pipeline::cmd_patches(cfg, paths);
    if (c_train->parsed())
      symcad::pipeline::cmd_train(cfg, paths, symcad::nnet::model_kind_from(model));
    if (c_eval->parsed()) symcad::pipeline::cmd_eval(cfg, paths);
    if (c_pipe->parsed()) symcad::pipeline::cmd_pipeline(cfg, paths);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
