// SPDX-License-Identifier: Apache-2.0
//
// graspvoc: segment an object cloud into labeled subparts, condition on a
// task, rank a grasp archive and evaluate predicted grasp regions.
//
// Exit codes: 0 ok, 1 I/O, 2 provider, 3 validation, 4 no compatible grasp.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "graspvoc/commands.hpp"

namespace {

using namespace graspvoc;
namespace fs = std::filesystem;

struct ParamFlags {
  std::vector<int> resolution;
  std::optional<double> margin;
  std::optional<int> splat_radius;
  std::optional<double> depth_quantile;
  std::optional<std::size_t> min_subpart_points;

  void add(CLI::App* app) {
    app->add_option("--resolution", resolution, "Render size: WIDTH HEIGHT (default 512 512)")->expected(2);
    app->add_option("--margin", margin, "Image margin fraction (default 0.05)");
    app->add_option("--splat-radius", splat_radius, "Splat radius in pixels (default 2)");
    app->add_option("--depth-quantile", depth_quantile, "Visible front fraction of local depth range (default 0.6)");
    app->add_option("--min-subpart-points", min_subpart_points, "Smallest subpart kept (default 5)");
  }

  nlohmann::json overrides() const {
    nlohmann::json j = nlohmann::json::object();
    if (resolution.size() == 2) j["resolution"] = resolution;
    if (margin) j["margin_fraction"] = *margin;
    if (splat_radius) j["splat_radius_px"] = *splat_radius;
    if (depth_quantile) j["depth_quantile"] = *depth_quantile;
    if (min_subpart_points) j["min_subpart_points"] = *min_subpart_points;
    return j;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-conditioned grasp selection over labeled object subparts"};
  app.require_subcommand(1);
  int rc = exit_code::kOk;

  // segment
  cli::SegmentOptions seg;
  ParamFlags seg_params;
  std::string seg_render, seg_masks;
  auto* segment = app.add_subcommand("segment", "Segment a point cloud into a labeled vocabulary");
  segment->add_option("cloud", seg.cloud_file, "Point cloud (.ply or .xyz)")->required();
  segment->add_option("--object", seg.object_label, "Object label, e.g. mug")->required();
  segment->add_option("--provider", seg.provider_config, "Provider config JSON")->required();
  segment->add_option("-o,--output", seg.output, "Vocabulary JSON to write")->required();
  segment->add_option("--debug-render", seg_render, "Also write the rendered depth image (PGM)");
  segment->add_option("--debug-masks", seg_masks, "Also write the segmenter masks (RLE JSON)");
  seg_params.add(segment);
  segment->callback([&] {
    seg.params = cli::apply_params({}, seg_params.overrides());
    if (!seg_render.empty()) seg.debug_render = seg_render;
    if (!seg_masks.empty()) seg.debug_masks = seg_masks;
    rc = cli::cmd_segment(seg, std::cout, std::cerr);
  });

  // condition
  cli::ConditionOptions cond;
  auto* condition = app.add_subcommand("condition", "Pick grasp and task subparts for a task");
  condition->add_option("vocabulary", cond.vocab_file, "Vocabulary JSON")->required();
  condition->add_option("--task", cond.task, "Task text, e.g. \"cut\"")->required();
  condition->add_option("--provider", cond.provider_config, "Provider config JSON");
  condition->add_option("-o,--output", cond.output, "Condition JSON to write")->required();
  condition->callback([&] { rc = cli::cmd_condition(cond, std::cout, std::cerr); });

  // rank
  cli::RankCommandOptions rank;
  std::optional<int> controls;
  auto* rank_cmd = app.add_subcommand("rank", "Score a grasp archive and select the task-aware grasp");
  rank_cmd->add_option("archive", rank.archive_file, "Grasp archive JSON")->required();
  rank_cmd->add_option("--vocabulary", rank.vocab_file, "Vocabulary JSON")->required();
  rank_cmd->add_option("--condition", rank.condition_file, "Condition JSON")->required();
  rank_cmd->add_option("-o,--output", rank.output, "Ranked JSON to write")->required();
  rank_cmd->add_option("--k-force", rank.rank.params.k_force, "Force gain (default 10)");
  rank_cmd->add_option("--k-dist", rank.rank.params.k_dist, "Task-distance gain (default 1)");
  rank_cmd->add_flag("--fallback-max-force", rank.rank.fallback_max_force,
                     "Return the strongest grasp when none lies on the grasp subpart");
  rank_cmd->add_option("--controls", controls, "Also sample this many zero-score control grasps");
  rank_cmd->add_option("--seed", rank.rank.seed, "Seed for control sampling (default 0)");
  rank_cmd->callback([&] {
    rank.rank.controls = controls;
    rc = cli::cmd_rank(rank, std::cout, std::cerr);
  });

  // eval
  cli::EvalOptions eval;
  std::vector<std::string> preds, gts;
  std::string eval_provider, eval_csv;
  auto* eval_cmd = app.add_subcommand("eval", "Weighted IoU / precision / recall against consolidated ground truth");
  eval_cmd->add_option("--pred", preds, "Prediction or vocabulary JSON (repeatable, pairs with --gt)")->required();
  eval_cmd->add_option("--gt", gts, "Ground-truth JSON (repeatable)")->required();
  eval_cmd->add_option("--repeat", eval.repeat, "Average over N runs (default 1)");
  eval_cmd->add_option("--provider", eval_provider, "Provider config, needed for vocabulary predictions");
  eval_cmd->add_option("-o,--output", eval.output_json, "Metrics JSON to write")->required();
  eval_cmd->add_option("--csv", eval_csv, "Also write metrics CSV");
  eval_cmd->callback([&] {
    if (preds.size() != gts.size()) {
      std::cerr << "error: --pred and --gt must be given the same number of times\n";
      rc = exit_code::kValidation;
      return;
    }
    for (std::size_t i = 0; i < preds.size(); ++i) eval.pairs.push_back({preds[i], gts[i]});
    if (!eval_provider.empty()) eval.provider_config = eval_provider;
    if (!eval_csv.empty()) eval.output_csv = eval_csv;
    rc = cli::cmd_eval(eval, std::cout, std::cerr);
  });

  // pipeline
  cli::PipelineOptions pipe;
  ParamFlags pipe_params;
  std::string run_name;
  auto* pipeline = app.add_subcommand("pipeline", "Run every manifest entry end to end");
  pipeline->add_option("manifest", pipe.manifest, "Run manifest JSON")->required();
  pipeline->add_option("--out", pipe.output_root, "Directory that receives run directories (default runs)");
  pipeline->add_option("--run-name", run_name, "Run directory name (default: UTC timestamp)");
  pipeline->add_option("--jobs", pipe.jobs, "Entries processed concurrently (default 1)");
  pipe_params.add(pipeline);
  pipeline->callback([&] {
    if (!run_name.empty()) pipe.run_name = run_name;
    pipe.param_overrides = pipe_params.overrides();
    rc = cli::cmd_pipeline(pipe, std::cout, std::cerr);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code::kValidation;
  }
  return rc;
}
