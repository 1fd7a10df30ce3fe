// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "graspvoc/cloud_io.hpp"
#include "graspvoc/error.hpp"
#include "graspvoc/evaluation.hpp"
#include "graspvoc/http_backend.hpp"
#include "graspvoc/object_model.hpp"
#include "graspvoc/pipeline.hpp"
#include "graspvoc/providers.hpp"
#include "graspvoc/scoring.hpp"
#include "graspvoc/viewrender.hpp"

namespace graspvoc::cli {

namespace fs = std::filesystem;

inline std::string pretty(const json& j) { return j.dump(2) + "\n"; }

inline json load_json(const fs::path& path) {
  const json j = json::parse(io::read_text_file(path), nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::kValidationFailed, path.string() + " is not valid JSON");
  return j;
}

/// Runs `body`, reporting failures on `err` and mapping them to exit codes.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kIo;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kValidation;
  }
}

/// Lower-case alphanumerics, everything else collapses to '_'.
inline std::string slug(const std::string& s) {
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c)) out += static_cast<char>(std::tolower(c));
    else if (out.empty() || out.back() != '_') out += '_';
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out.empty() ? "task" : out;
}

// ---------------------------------------------------------------------------
// Stages shared by the single-step commands and the batch pipeline.

/// Resolves a vocabulary's cloud path: absolute, relative to the working
/// directory, then relative to the vocabulary file.
inline fs::path resolve_cloud_path(const std::string& cloud_file, const fs::path& vocab_path) {
  const fs::path p(cloud_file);
  if (p.is_absolute() || fs::exists(p)) return p;
  const fs::path beside = vocab_path.parent_path() / p;
  if (fs::exists(beside)) return beside;
  fail(ErrorCode::kIo, "cloud file '" + cloud_file + "' referenced by " + vocab_path.string() + " not found");
}

inline Vocabulary load_vocabulary(const fs::path& path) {
  const json j = load_json(path);
  if (!j.contains("cloud_file") || !j["cloud_file"].is_string()) {
    fail(ErrorCode::kValidationFailed, path.string() + " has no cloud_file");
  }
  const std::string cloud_file = j["cloud_file"].get<std::string>();
  return vocabulary_from_json(j, io::load_cloud(resolve_cloud_path(cloud_file, path)));
}

/// Stand-in used when no provider is configured; any call fails.
struct UnconfiguredProvider : ConditioningProvider {
  TaskLabels condition(const std::string&, const std::vector<std::string>&) override {
    fail(ErrorCode::kProviderUnavailable, "no provider configured");
  }
};

/// A single-subpart vocabulary forces both labels without asking a provider.
inline TaskCondition condition_stage(const Vocabulary& vocab, const std::string& task, ConditioningProvider& llm) {
  if (task.empty()) fail(ErrorCode::kInvalidArgument, "task must not be empty");
  const auto labels = vocab.labels();
  if (labels.size() == 1) return {task, labels.front(), labels.front()};
  const TaskLabels picked = llm.condition(task, labels);
  (void)vocab.at(picked.grasp_label);
  (void)vocab.at(picked.task_label);
  return {task, picked.grasp_label, picked.task_label};
}

struct RankOptions {
  ScoreParams params;
  bool fallback_max_force = false;
  std::optional<int> controls;
  std::uint64_t seed = 0;
};

/// Ranked output: every grasp sorted best-first plus the condition, gains,
/// the selected grasp and (optionally) the control sample.
inline json rank_stage(const GraspArchive& archive, const Vocabulary& vocab, const TaskCondition& cond,
                       const RankOptions& opt) {
  const ScoredGrasp best = select_optimal(archive, cond, vocab, opt.params, opt.fallback_max_force);
  const auto ranked = rank_archive(archive, cond, vocab, opt.params);
  json ranked_json = json::array();
  for (const auto& s : ranked) ranked_json.push_back(scored_to_json(s));
  json out{{"object_label", archive.object_label},
           {"condition", condition_to_json(cond)},
           {"params", {{"k_force", opt.params.k_force}, {"k_dist", opt.params.k_dist}}},
           {"fallback", best.fallback},
           {"optimal", scored_to_json(best)},
           {"ranked", ranked_json}};
  if (opt.controls) {
    const ControlSample sample = sample_controls(archive, cond, vocab, *opt.controls, opt.seed, opt.params);
    json ids = json::array();
    for (const auto& g : sample.grasps) ids.push_back(g.id);
    out["controls"] = {{"k", *opt.controls}, {"seed", opt.seed}, {"shortfall", sample.shortfall}, {"grasp_ids", ids}};
  }
  return out;
}

inline json prediction_json(const Vocabulary& vocab, const TaskCondition& cond) {
  return {{"object_label", vocab.object.label},
          {"task", cond.task},
          {"grasp_label", cond.grasp_label},
          {"n_points", vocab.object.cloud.size()},
          {"point_indices", vocab.at(cond.grasp_label).point_indices}};
}

// ---------------------------------------------------------------------------
// segment

struct SegmentOptions {
  fs::path cloud_file;
  std::string object_label;
  fs::path provider_config;
  fs::path output;
  SegmentationParams params;
  std::optional<fs::path> debug_render;
  std::optional<fs::path> debug_masks;
};

inline int cmd_segment(const SegmentOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const PointCloud cloud = io::load_cloud(opt.cloud_file);
    const ProviderConfig config = load_provider_config(opt.provider_config);
    auto providers = make_providers(config);
    SegmentationTrace trace;
    const Vocabulary vocab = segment_object(ObjectModel(opt.object_label, cloud), *providers, *providers, opt.params,
                                            opt.cloud_file.generic_string(), &trace);
    io::write_text_file(opt.output, dump_vocabulary(vocab));
    if (opt.debug_render) io::write_text_file(*opt.debug_render, encode_pgm(trace.render.image));
    if (opt.debug_masks) io::write_text_file(*opt.debug_masks, masks_to_json(trace.masks).dump() + "\n");
    out << "wrote " << opt.output.string() << " (" << vocab.subparts.size() << " subparts)\n";
    return exit_code::kOk;
  });
}

// ---------------------------------------------------------------------------
// condition

struct ConditionOptions {
  fs::path vocab_file;
  std::string task;
  fs::path provider_config;
  fs::path output;
};

inline int cmd_condition(const ConditionOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Vocabulary vocab = load_vocabulary(opt.vocab_file);
    std::shared_ptr<BackendProviders> providers;
    if (vocab.subparts.size() > 1 && !opt.provider_config.empty()) {
      providers = make_providers(load_provider_config(opt.provider_config));
    }
    UnconfiguredProvider none;
    ConditioningProvider& llm = providers ? static_cast<ConditioningProvider&>(*providers) : none;
    const TaskCondition cond = condition_stage(vocab, opt.task, llm);
    io::write_text_file(opt.output, pretty(condition_to_json(cond)));
    out << "grasp_label=" << cond.grasp_label << " task_label=" << cond.task_label << "\n";
    return exit_code::kOk;
  });
}

// ---------------------------------------------------------------------------
// rank

struct RankCommandOptions {
  fs::path archive_file;
  fs::path vocab_file;
  fs::path condition_file;
  fs::path output;
  RankOptions rank;
};

inline int cmd_rank(const RankCommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const GraspArchive archive = archive_from_json(load_json(opt.archive_file));
    const Vocabulary vocab = load_vocabulary(opt.vocab_file);
    const TaskCondition cond = condition_from_json(load_json(opt.condition_file));
    const json ranked = rank_stage(archive, vocab, cond, opt.rank);
    io::write_text_file(opt.output, pretty(ranked));
    out << "optimal=" << ranked["optimal"]["id"].get<std::string>() << " score=" << ranked["optimal"]["score"].dump()
        << (ranked["fallback"].get<bool>() ? " (fallback)" : "") << "\n";
    return exit_code::kOk;
  });
}

// ---------------------------------------------------------------------------
// eval

struct EvalPair {
  fs::path prediction;  // prediction JSON or vocabulary JSON
  fs::path ground_truth;
};

struct EvalOptions {
  std::vector<EvalPair> pairs;
  int repeat = 1;
  std::optional<fs::path> provider_config;  // needed when a pair names a vocabulary
  fs::path output_json;
  std::optional<fs::path> output_csv;
};

struct PairMetrics {
  std::string object_label;
  std::string task;
  RegionMetrics metrics;
  int runs = 1;
};

inline std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline json metrics_report(const std::vector<PairMetrics>& pairs, const RegionMetrics& macro, int repeat) {
  json rows = json::array();
  for (const auto& p : pairs) {
    json row = metrics_to_json(p.metrics);
    row["object_label"] = p.object_label;
    row["task"] = p.task;
    row["runs"] = p.runs;
    rows.push_back(row);
  }
  return {{"pairs", rows}, {"macro_average", metrics_to_json(macro)}, {"repeat", repeat}};
}

inline std::string metrics_csv(const std::vector<PairMetrics>& pairs, const RegionMetrics& macro) {
  std::string csv = "object_label,task,weighted_iou,precision,recall\n";
  const auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  for (const auto& p : pairs) {
    csv += quote(p.object_label) + "," + quote(p.task) + "," + format_metric(p.metrics.weighted_iou) + "," +
           format_metric(p.metrics.precision) + "," + format_metric(p.metrics.recall) + "\n";
  }
  csv += "macro_average,," + format_metric(macro.weighted_iou) + "," + format_metric(macro.precision) + "," +
         format_metric(macro.recall) + "\n";
  return csv;
}

/// Per-pair metrics (averaged over runs), sorted by (object, task), plus the
/// uniform macro-average over pairs.
inline std::pair<std::vector<PairMetrics>, RegionMetrics> evaluate_pairs(const EvalOptions& opt) {
  if (opt.pairs.empty()) fail(ErrorCode::kEmptyList, "no prediction/ground-truth pairs given");
  if (opt.repeat < 1) fail(ErrorCode::kInvalidArgument, "--repeat must be at least 1");
  std::shared_ptr<BackendProviders> providers;
  std::vector<PairMetrics> results;
  for (const auto& pair : opt.pairs) {
    const GroundTruthFile gt = ground_truth_from_json(load_json(pair.ground_truth));
    const json pred = load_json(pair.prediction);
    PairMetrics pm{gt.object_label, gt.task, {}, opt.repeat};
    std::vector<RegionMetrics> runs;
    if (pred.contains("subparts")) {
      const Vocabulary vocab = load_vocabulary(pair.prediction);
      if (vocab.object.cloud.size() != gt.gt.n_points) {
        fail(ErrorCode::kValidationFailed, "n_points mismatch between " + pair.prediction.string() + " and " +
                                               pair.ground_truth.string());
      }
      if (!providers && vocab.subparts.size() > 1) {
        if (!opt.provider_config) fail(ErrorCode::kInvalidArgument, "vocabulary predictions need --provider");
        providers = make_providers(load_provider_config(*opt.provider_config));
      }
      UnconfiguredProvider none;
      ConditioningProvider& llm = providers ? static_cast<ConditioningProvider&>(*providers) : none;
      for (int r = 0; r < opt.repeat; ++r) {
        const TaskCondition cond = condition_stage(vocab, gt.task, llm);
        runs.push_back(region_metrics(vocab.at(cond.grasp_label).point_indices, gt.gt));
      }
    } else {
      const std::size_t n = pred.at("n_points").get<std::size_t>();
      if (n != gt.gt.n_points) {
        fail(ErrorCode::kValidationFailed, "n_points mismatch: prediction has " + std::to_string(n) +
                                               ", ground truth has " + std::to_string(gt.gt.n_points));
      }
      const auto indices = pred.at("point_indices").get<std::vector<std::size_t>>();
      for (int r = 0; r < opt.repeat; ++r) runs.push_back(region_metrics(indices, gt.gt));
    }
    pm.metrics = average_runs(runs);
    results.push_back(pm);
  }
  std::stable_sort(results.begin(), results.end(), [](const PairMetrics& a, const PairMetrics& b) {
    return std::tie(a.object_label, a.task) < std::tie(b.object_label, b.task);
  });
  std::vector<RegionMetrics> per_pair;
  for (const auto& p : results) per_pair.push_back(p.metrics);
  return {results, average_runs(per_pair)};
}

inline int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto [pairs, macro] = evaluate_pairs(opt);
    io::write_text_file(opt.output_json, pretty(metrics_report(pairs, macro, opt.repeat)));
    if (opt.output_csv) io::write_text_file(*opt.output_csv, metrics_csv(pairs, macro));
    out << "weighted_iou=" << format_metric(macro.weighted_iou) << " precision=" << format_metric(macro.precision)
        << " recall=" << format_metric(macro.recall) << "\n";
    return exit_code::kOk;
  });
}

// ---------------------------------------------------------------------------
// pipeline

struct ManifestEntry {
  std::string object_label;
  std::string cloud_file;    // as written in the manifest
  std::string archive_file;  // as written in the manifest
  std::vector<std::string> tasks;
  std::map<std::string, std::string> ground_truth;  // task -> file
};

struct RunManifest {
  fs::path base_dir;
  std::uint64_t seed = 0;
  std::string provider_config;
  std::vector<ManifestEntry> entries;
  SegmentationParams params;
  ScoreParams score;
  int controls = 3;
  bool fallback_max_force = false;

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }
};

inline SegmentationParams apply_params(SegmentationParams p, const json& j) {
  if (j.contains("resolution")) {
    const auto r = j["resolution"].get<std::vector<int>>();
    if (r.size() != 2) fail(ErrorCode::kValidationFailed, "resolution must be [width, height]");
    p.resolution = {r[0], r[1]};
  }
  p.margin_fraction = j.value("margin_fraction", p.margin_fraction);
  p.splat_radius_px = j.value("splat_radius_px", p.splat_radius_px);
  p.depth_quantile = j.value("depth_quantile", p.depth_quantile);
  p.min_subpart_points = j.value("min_subpart_points", p.min_subpart_points);
  return p;
}

inline RunManifest manifest_from_json(const json& j, const fs::path& base_dir) {
  RunManifest m;
  m.base_dir = base_dir;
  try {
    if (!j.contains("seed")) fail(ErrorCode::kValidationFailed, "manifest needs a 'seed'");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.provider_config = j.at("provider_config").get<std::string>();
    if (j.contains("params")) m.params = apply_params(m.params, j["params"]);
    if (j.contains("score")) {
      m.score.k_force = j["score"].value("k_force", m.score.k_force);
      m.score.k_dist = j["score"].value("k_dist", m.score.k_dist);
    }
    m.controls = j.value("controls", m.controls);
    m.fallback_max_force = j.value("fallback_max_force", m.fallback_max_force);
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry;
      entry.object_label = e.at("object_label").get<std::string>();
      entry.cloud_file = e.at("cloud_file").get<std::string>();
      entry.archive_file = e.at("archive_file").get<std::string>();
      entry.tasks = e.at("tasks").get<std::vector<std::string>>();
      if (entry.tasks.empty()) fail(ErrorCode::kValidationFailed, "entry " + entry.object_label + " has no tasks");
      if (e.contains("ground_truth")) entry.ground_truth = e["ground_truth"].get<std::map<std::string, std::string>>();
      m.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kValidationFailed, std::string("manifest: ") + e.what());
  }
  if (m.entries.empty()) fail(ErrorCode::kValidationFailed, "manifest has no entries");
  validate(m.score);
  return m;
}

struct TaskOutcome {
  std::string task;
  int exit = exit_code::kOk;
  std::string error;
  std::string grasp_label, task_label, optimal_id;
  double score = 0.0;
};

struct EntryOutcome {
  std::string dir_name;
  std::string object_label;
  int exit = exit_code::kOk;
  std::string error;
  std::vector<TaskOutcome> tasks;

  bool ok() const {
    return exit == exit_code::kOk &&
           std::all_of(tasks.begin(), tasks.end(), [](const TaskOutcome& t) { return t.exit == exit_code::kOk; });
  }
};

template <typename F>
int capture(std::string& error, F&& body) {
  std::ostringstream err;
  const int code = guarded(err, std::forward<F>(body));
  error = err.str();
  while (!error.empty() && error.back() == '\n') error.pop_back();
  return code;
}

inline EntryOutcome run_entry(const RunManifest& m, std::size_t index, const fs::path& entry_dir,
                              BackendProviders& providers) {
  const ManifestEntry& e = m.entries[index];
  EntryOutcome outcome;
  outcome.dir_name = entry_dir.filename().string();
  outcome.object_label = e.object_label;

  std::optional<Vocabulary> vocab;
  std::optional<GraspArchive> archive;
  outcome.exit = capture(outcome.error, [&] {
    const PointCloud cloud = io::load_cloud(m.resolve(e.cloud_file));
    archive = archive_from_json(load_json(m.resolve(e.archive_file)));
    vocab = segment_object(ObjectModel(e.object_label, cloud), providers, providers, m.params, e.cloud_file);
    io::write_text_file(entry_dir / "vocabulary.json", dump_vocabulary(*vocab));
    return exit_code::kOk;
  });

  if (outcome.exit == exit_code::kOk) {
    for (const auto& task : e.tasks) {
      TaskOutcome t;
      t.task = task;
      const fs::path task_dir = entry_dir / "tasks" / slug(task);
      t.exit = capture(t.error, [&] {
        const TaskCondition cond = condition_stage(*vocab, task, providers);
        t.grasp_label = cond.grasp_label;
        t.task_label = cond.task_label;
        io::write_text_file(task_dir / "condition.json", pretty(condition_to_json(cond)));
        io::write_text_file(task_dir / "prediction.json", pretty(prediction_json(*vocab, cond)));
        RankOptions ro{m.score, m.fallback_max_force, m.controls, m.seed};
        const json ranked = rank_stage(*archive, *vocab, cond, ro);
        io::write_text_file(task_dir / "ranked.json", pretty(ranked));
        t.optimal_id = ranked["optimal"]["id"].get<std::string>();
        t.score = ranked["optimal"]["score"].get<double>();
        if (const auto it = e.ground_truth.find(task); it != e.ground_truth.end()) {
          const GroundTruthFile gt = ground_truth_from_json(load_json(m.resolve(it->second)));
          if (gt.gt.n_points != vocab->object.cloud.size()) {
            fail(ErrorCode::kValidationFailed, "ground truth n_points does not match the cloud");
          }
          const RegionMetrics metrics = region_metrics(vocab->at(cond.grasp_label).point_indices, gt.gt);
          PairMetrics pm{e.object_label, task, metrics, 1};
          io::write_text_file(task_dir / "metrics.json", pretty(metrics_report({pm}, metrics, 1)));
        }
        return exit_code::kOk;
      });
      outcome.tasks.push_back(t);
    }
  }

  json status{{"object_label", e.object_label}, {"status", outcome.ok() ? "ok" : "failed"}, {"exit_code", outcome.exit}};
  if (!outcome.error.empty()) status["error"] = outcome.error;
  json tasks = json::array();
  for (const auto& t : outcome.tasks) {
    json tj{{"task", t.task}, {"status", t.exit == exit_code::kOk ? "ok" : "failed"}, {"exit_code", t.exit}};
    if (!t.error.empty()) tj["error"] = t.error;
    tasks.push_back(tj);
  }
  status["tasks"] = tasks;
  io::write_text_file(entry_dir / "status.json", pretty(status));
  return outcome;
}

struct PipelineOptions {
  fs::path manifest;
  fs::path output_root = "runs";
  std::optional<std::string> run_name;  // defaults to a UTC timestamp
  int jobs = 1;
  json param_overrides = json::object();  // CLI flags, highest precedence
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

inline std::string summary_tsv(const std::vector<EntryOutcome>& outcomes) {
  std::string tsv = "entry\tobject_label\ttask\tstatus\tgrasp_label\ttask_label\toptimal_id\tscore\terror\n";
  const auto clean = [](std::string s) {
    std::replace(s.begin(), s.end(), '\t', ' ');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
  };
  for (const auto& o : outcomes) {
    if (o.tasks.empty()) {
      tsv += o.dir_name + "\t" + o.object_label + "\t-\tfailed\t\t\t\t\t" + clean(o.error) + "\n";
      continue;
    }
    for (const auto& t : o.tasks) {
      const bool ok = t.exit == exit_code::kOk;
      tsv += o.dir_name + "\t" + o.object_label + "\t" + clean(t.task) + "\t" + (ok ? "ok" : "failed") + "\t" +
             t.grasp_label + "\t" + t.task_label + "\t" + t.optimal_id + "\t" + (ok ? json(t.score).dump() : "") + "\t" +
             clean(t.error) + "\n";
    }
  }
  return tsv;
}

/// Runs segment -> condition -> rank (-> eval) for every manifest entry.
/// Returns 0 when every entry succeeded, otherwise the first failing exit code.
inline int cmd_pipeline(const PipelineOptions& opt, std::ostream& out, std::ostream& err, fs::path* run_dir_out = nullptr) {
  std::vector<EntryOutcome> outcomes;
  fs::path run_dir;
  const int setup = guarded(err, [&] {
    if (opt.jobs < 1) fail(ErrorCode::kInvalidArgument, "--jobs must be at least 1");
    RunManifest m = manifest_from_json(load_json(opt.manifest), opt.manifest.parent_path());
    m.params = apply_params(m.params, opt.param_overrides);
    const ProviderConfig pconf = load_provider_config(m.resolve(m.provider_config));
    auto providers = make_providers(pconf);

    const std::string started = utc_timestamp();
    run_dir = opt.output_root / opt.run_name.value_or(started);
    fs::create_directories(run_dir);
    if (run_dir_out) *run_dir_out = run_dir;
    io::write_text_file(run_dir / "run.json", pretty({{"started_at", started}, {"manifest", opt.manifest.generic_string()}}));

    json entries = json::array();
    for (const auto& e : m.entries) {
      entries.push_back({{"object_label", e.object_label},
                         {"cloud_file", e.cloud_file},
                         {"archive_file", e.archive_file},
                         {"tasks", e.tasks},
                         {"ground_truth", e.ground_truth}});
    }
    const json config{{"seed", m.seed},
                      {"provider", provider_config_to_json(pconf)},
                      {"segmentation", segmentation_params_to_json(m.params)},
                      {"score", {{"k_force", m.score.k_force}, {"k_dist", m.score.k_dist}}},
                      {"controls", m.controls},
                      {"fallback_max_force", m.fallback_max_force},
                      {"entries", entries}};
    io::write_text_file(run_dir / "config.json", pretty(config));

    outcomes.resize(m.entries.size());
    std::vector<fs::path> dirs;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      char prefix[16];
      std::snprintf(prefix, sizeof(prefix), "%02zu_", i);
      dirs.push_back(run_dir / "entries" / (prefix + slug(m.entries[i].object_label)));
    }
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
      for (std::size_t i = next++; i < m.entries.size(); i = next++) outcomes[i] = run_entry(m, i, dirs[i], *providers);
    };
    const int n_threads = std::min<int>(opt.jobs, static_cast<int>(m.entries.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    return exit_code::kOk;
  });
  if (setup != exit_code::kOk) return setup;

  const std::string tsv = summary_tsv(outcomes);
  io::write_text_file(run_dir / "summary.tsv", tsv);
  out << tsv;
  for (const auto& o : outcomes) {
    if (o.ok()) continue;
    if (o.exit != exit_code::kOk) return o.exit;
    for (const auto& t : o.tasks)
      if (t.exit != exit_code::kOk) return t.exit;
  }
  return exit_code::kOk;
}

}  // namespace graspvoc::cli
