#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "icgm/pipeline.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace icgm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPartial = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw UsageError("cannot write '" + path.string() + "'");
    out << content;
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Full run configuration: defaults, overlaid by the config file, overlaid
/// by flags. Serialized back out as the resolved-config snapshot.
struct RunConfig {
  uint64_t seed = 0;
  std::string out = "out";
  int repeat = 10;
  TrainConfig train;
  SynthSpec synth;
  EdgeMethod edge_method = EdgeMethod::knn;
  BuildParams edge_params;
  std::vector<int> sweep_m = {1, 2, 3, 4};
  std::vector<int> sweep_l = {2, 3, 4, 5};
  std::vector<int> sweep_d = {32, 64, 128, 256};
  std::vector<int> topk;  // empty = 5, 10, ..., 130
  std::string manifest_path;
  std::string checkpoint_path;
  std::string annotations_dir;
  std::string subjects_csv;
  std::string precomputed_csv;
};

json run_config_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["repeat"] = c.repeat;
  json t;
  t["steps"] = c.train.steps;
  t["batch_size"] = c.train.batch_size;
  t["theta_test"] = c.train.theta_test;
  t["theta_explain"] = c.train.theta_explain;
  t["template_frac"] = c.train.template_frac;
  t["train_frac"] = c.train.train_frac;
  t["learning_rate"] = c.train.adam.learning_rate;
  j["train"] = t;
  json n;
  n["intra_layers"] = c.train.net.intra_layers;
  n["cross_iterations"] = c.train.net.cross_iterations;
  n["d_intra"] = c.train.net.d_intra;
  n["d_cross"] = c.train.net.d_cross;
  n["sinkhorn_iters"] = c.train.net.sinkhorn_iters;
  n["cross_embedding_enabled"] = c.train.net.cross_embedding_enabled;
  j["net"] = n;
  j["synth"] = json::parse(synth_metadata_json(c.synth));
  j["synth"].erase("informative_slot_names");
  json e;
  e["method"] = to_string(c.edge_method);
  e["k"] = c.edge_params.k;
  e["threshold"] = c.edge_params.threshold;
  j["edge"] = e;
  json s;
  s["m"] = c.sweep_m;
  s["l"] = c.sweep_l;
  s["d"] = c.sweep_d;
  j["sweep"] = s;
  j["topk"] = c.topk;
  json p;
  p["manifest"] = c.manifest_path;
  p["checkpoint"] = c.checkpoint_path;
  p["annotations"] = c.annotations_dir;
  p["subjects"] = c.subjects_csv;
  p["precomputed"] = c.precomputed_csv;
  j["paths"] = p;
  return j;
}

void reject_unknown(const json& given, const json& known, const std::string& where) {
  for (const auto& [key, value] : given.items()) {
    if (!known.contains(key))
      throw UsageError("unknown config key '" + where + key + "'");
    if (value.is_object())
      reject_unknown(value, known.at(key), where + key + ".");
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void apply_config_file(RunConfig& c, const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw UsageError("invalid config JSON in '" + path + "': " + e.what());
  }
  reject_unknown(j, run_config_json(c), "");
  maybe(j, "seed", c.seed);
  maybe(j, "out", c.out);
  maybe(j, "repeat", c.repeat);
  if (j.contains("train")) {
    const json& t = j["train"];
    maybe(t, "steps", c.train.steps);
    maybe(t, "batch_size", c.train.batch_size);
    maybe(t, "theta_test", c.train.theta_test);
    maybe(t, "theta_explain", c.train.theta_explain);
    maybe(t, "template_frac", c.train.template_frac);
    maybe(t, "train_frac", c.train.train_frac);
    maybe(t, "learning_rate", c.train.adam.learning_rate);
  }
  if (j.contains("net")) {
    const json& n = j["net"];
    maybe(n, "intra_layers", c.train.net.intra_layers);
    maybe(n, "cross_iterations", c.train.net.cross_iterations);
    maybe(n, "d_intra", c.train.net.d_intra);
    maybe(n, "d_cross", c.train.net.d_cross);
    maybe(n, "sinkhorn_iters", c.train.net.sinkhorn_iters);
    maybe(n, "cross_embedding_enabled", c.train.net.cross_embedding_enabled);
  }
  if (j.contains("synth")) c.synth = synth_spec_from_json(j["synth"].dump());
  if (j.contains("edge")) {
    const json& e = j["edge"];
    if (e.contains("method"))
      c.edge_method = edge_method_from_string(e["method"]);
    maybe(e, "k", c.edge_params.k);
    maybe(e, "threshold", c.edge_params.threshold);
  }
  if (j.contains("sweep")) {
    const json& s = j["sweep"];
    maybe(s, "m", c.sweep_m);
    maybe(s, "l", c.sweep_l);
    maybe(s, "d", c.sweep_d);
  }
  maybe(j, "topk", c.topk);
  if (j.contains("paths")) {
    const json& p = j["paths"];
    maybe(p, "manifest", c.manifest_path);
    maybe(p, "checkpoint", c.checkpoint_path);
    maybe(p, "annotations", c.annotations_dir);
    maybe(p, "subjects", c.subjects_csv);
    maybe(p, "precomputed", c.precomputed_csv);
  }
}

void write_snapshot(const RunConfig& c, const std::string& command) {
  write_file_atomic(fs::path(c.out) / (command + "-config.json"),
                    run_config_json(c).dump(2) + "\n");
}

struct LoadedCohort {
  std::vector<RoiGraph> graphs;
  Manifest manifest;
  std::vector<const RoiGraph*> train, test, templates;
};

LoadedCohort load_cohort(const RunConfig& c) {
  if (c.manifest_path.empty()) throw UsageError("a manifest is required");
  LoadedCohort lc;
  lc.manifest = load_manifest(c.manifest_path);
  const fs::path base = fs::path(c.manifest_path).parent_path();
  for (const ManifestEntry& entry : lc.manifest.entries) {
    fs::path p = entry.file;
    if (p.is_relative()) p = base / p;
    lc.graphs.push_back(load_graph(p.string()));
  }
  for (size_t i = 0; i < lc.graphs.size(); ++i) {
    switch (lc.manifest.entries[i].role) {
      case SplitRole::train: lc.train.push_back(&lc.graphs[i]); break;
      case SplitRole::test: lc.test.push_back(&lc.graphs[i]); break;
      case SplitRole::templates: lc.templates.push_back(&lc.graphs[i]); break;
    }
  }
  return lc;
}

void save_cohort(const std::vector<RoiGraph>& graphs, uint64_t seed,
                 double template_frac, double train_frac,
                 const fs::path& out_dir, const std::string& metadata) {
  fs::create_directories(out_dir / "graphs");
  std::vector<SubjectLabel> labels;
  for (const RoiGraph& g : graphs) labels.push_back(g.label);
  DatasetSplit split = make_split(labels, template_frac, train_frac, seed);

  Manifest manifest;
  manifest.seed = seed;
  manifest.template_frac = template_frac;
  manifest.train_frac = train_frac;
  manifest.entries.resize(graphs.size());
  for (size_t i = 0; i < graphs.size(); ++i) {
    const std::string rel = "graphs/" + graphs[i].id + ".json";
    write_file_atomic(out_dir / rel, graph_to_json(graphs[i]) + "\n");
    manifest.entries[i] = {rel, graphs[i].label, SplitRole::train};
  }
  for (int i : split.test) manifest.entries[i].role = SplitRole::test;
  for (int i : split.templates)
    manifest.entries[i].role = SplitRole::templates;
  write_file_atomic(out_dir / "manifest.json", manifest_to_json(manifest) + "\n");
  if (!metadata.empty())
    write_file_atomic(out_dir / "metadata.json", metadata + "\n");
}

// -- commands ---------------------------------------------------------------

int cmd_build_graphs(const RunConfig& c) {
  if (c.annotations_dir.empty() || c.subjects_csv.empty())
    throw UsageError("build-graphs needs --annotations and --subjects");
  write_snapshot(c, "build-graphs");
  auto subjects = load_subject_table(c.subjects_csv);
  PrecomputedFeatures precomputed;
  if (!c.precomputed_csv.empty())
    precomputed = load_precomputed_features(c.precomputed_csv);

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(c.annotations_dir))
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::vector<RoiGraph> graphs;
  int failures = 0;
  for (const fs::path& file : files) {
    const std::string subject_id = file.stem().string();
    try {
      auto it = subjects.find(subject_id);
      if (it == subjects.end())
        throw AnnotationError("subject '" + subject_id +
                              "' missing from the subject table");
      const SubjectRecord& record = it->second;

      AnnotationFile ann = parse_annotations(file.string());
      fs::path image_path = ann.image_path;
      if (image_path.is_relative()) image_path = file.parent_path() / image_path;
      std::optional<GrayImage> image;
      if (fs::exists(image_path)) image = load_gray_image(image_path.string());

      RoiGraph g;
      g.id = subject_id;
      g.label = record.label;
      std::vector<Point> centroids;
      for (const RoiAnnotation& roi : ann.annotations) {
        const int w = image ? image->width : 4096;
        const int h = image ? image->height : 4096;
        RoiMask mask = rasterize_polygon(roi.polygon, w, h);
        std::map<int, double> computed;
        if (image) {
          std::vector<double> pixels = masked_pixels(*image, mask);
          FirstOrderResult fo = first_order_features(pixels);
          std::vector<double> shape = shape_features(mask);
          std::vector<double> glcm = glcm_features(pixels, mask);
          for (size_t i = 0; i < fo.basic.size(); ++i)
            computed[static_cast<int>(i)] = fo.basic[i];
          for (size_t i = 0; i < shape.size(); ++i)
            computed[5 + static_cast<int>(i)] = shape[i];
          for (size_t i = 0; i < fo.first_order.size(); ++i)
            computed[16 + static_cast<int>(i)] = fo.first_order[i];
          for (size_t i = 0; i < glcm.size(); ++i)
            computed[34 + static_cast<int>(i)] = glcm[i];
        }
        std::map<std::string, double> ingested;
        auto pit = precomputed.find({subject_id, roi.label});
        if (pit != precomputed.end()) ingested = pit->second;

        RoiNode node;
        node.label = roi.label;
        node.centroid = mask_centroid(mask);
        node.features = assemble_node_vector(computed, ingested, record);
        centroids.push_back(node.centroid);
        g.nodes.push_back(std::move(node));
      }
      g.method = c.edge_method;
      g.params = c.edge_params;
      g.edges = build_connected_edges(centroids, c.edge_method, g.params);
      validate_graph(g);
      graphs.push_back(std::move(g));
    } catch (const std::exception& e) {
      std::cerr << "error: subject '" << subject_id << "': " << e.what()
                << "\n";
      ++failures;
    }
  }
  if (graphs.empty()) throw UsageError("no subject produced a graph");
  save_cohort(graphs, c.seed, c.train.template_frac, c.train.train_frac,
              c.out, "");
  std::cout << "built " << graphs.size() << " graphs, " << failures
            << " failures\n";
  return failures > 0 ? kExitPartial : kExitOk;
}

int cmd_synth(const RunConfig& c) {
  write_snapshot(c, "synth");
  SynthCohort cohort = generate(c.synth);
  save_cohort(cohort.graphs, c.seed, c.train.template_frac,
              c.train.train_frac, c.out, synth_metadata_json(cohort.spec));
  std::cout << "generated " << cohort.graphs.size() << " graphs\n";
  return kExitOk;
}

int cmd_train(const RunConfig& c) {
  write_snapshot(c, "train");
  LoadedCohort lc = load_cohort(c);
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  tc.repeat_count = c.repeat;

  if (c.repeat > 1) {
    // Protocol mode: re-split and retrain per derived seed, report mean/std.
    ProtocolResult res = run_protocol(lc.graphs, tc);
    std::ostringstream csv;
    csv << "metric,mean,std\n";
    char buf[96];
    std::snprintf(buf, sizeof(buf), "acc,%.6f,%.6f\n", res.mean_acc, res.std_acc);
    csv << buf;
    std::snprintf(buf, sizeof(buf), "sn,%.6f,%.6f\n", res.mean_sn, res.std_sn);
    csv << buf;
    std::snprintf(buf, sizeof(buf), "sp,%.6f,%.6f\n", res.mean_sp, res.std_sp);
    csv << buf;
    std::snprintf(buf, sizeof(buf), "f1,%.6f,%.6f\n", res.mean_f1, res.std_f1);
    csv << buf;
    write_file_atomic(fs::path(c.out) / "protocol.csv", csv.str());
    for (size_t r = 0; r < res.reports.size(); ++r)
      write_file_atomic(
          fs::path(c.out) / ("eval_repeat_" + std::to_string(r) + ".json"),
          eval_report_to_json(res.reports[r]) + "\n");
    std::cout << "protocol mean sn " << res.mean_sn << " sp " << res.mean_sp
              << "\n";
    return kExitOk;
  }

  if (lc.train.size() < 2) throw UsageError("train split has fewer than 2 graphs");
  std::vector<RoiGraph> normalized = lc.graphs;
  std::vector<const RoiGraph*> train_view;
  for (size_t i = 0; i < normalized.size(); ++i)
    if (lc.manifest.entries[i].role == SplitRole::train)
      train_view.push_back(&normalized[i]);
  NormStats norm = fit_normalization(train_view);
  for (RoiGraph& g : normalized) apply_normalization(g, norm);

  TrainResult result = train(train_view, tc, norm);
  const fs::path ckpt = fs::path(c.out) / "checkpoint.bin";
  fs::create_directories(ckpt.parent_path());
  save_checkpoint(result.checkpoint, ckpt.string() + ".tmp");
  fs::rename(ckpt.string() + ".tmp", ckpt);
  std::ostringstream loss;
  loss << "step,loss\n";
  for (size_t i = 0; i < result.loss_curve.size(); ++i)
    loss << i << ',' << result.loss_curve[i] << '\n';
  write_file_atomic(fs::path(c.out) / "loss.csv", loss.str());
  std::cout << "trained " << tc.steps << " steps, checkpoint at "
            << ckpt.string() << "\n";
  return kExitOk;
}

/// Normalized test/template views under the checkpoint's statistics.
struct EvalInputs {
  std::vector<RoiGraph> normalized;
  std::vector<const RoiGraph*> test, templates;
};

EvalInputs prepare_eval(const LoadedCohort& lc, const Checkpoint& ckpt) {
  EvalInputs in;
  in.normalized = lc.graphs;
  for (RoiGraph& g : in.normalized) apply_normalization(g, ckpt.norm);
  for (size_t i = 0; i < in.normalized.size(); ++i) {
    if (lc.manifest.entries[i].role == SplitRole::test)
      in.test.push_back(&in.normalized[i]);
    else if (lc.manifest.entries[i].role == SplitRole::templates)
      in.templates.push_back(&in.normalized[i]);
  }
  return in;
}

Checkpoint require_checkpoint(const RunConfig& c) {
  if (c.checkpoint_path.empty() || !fs::exists(c.checkpoint_path))
    throw UsageError("checkpoint '" + c.checkpoint_path + "' not found");
  return load_checkpoint(c.checkpoint_path);
}

int cmd_eval(const RunConfig& c) {
  write_snapshot(c, "eval");
  LoadedCohort lc = load_cohort(c);
  Checkpoint ckpt = require_checkpoint(c);
  EvalInputs in = prepare_eval(lc, ckpt);
  EvalReport report =
      evaluate(in.test, in.templates, ckpt, c.train.theta_test);
  write_file_atomic(fs::path(c.out) / "eval.json",
                    eval_report_to_json(report) + "\n");
  write_file_atomic(fs::path(c.out) / "eval.csv", eval_report_csv(report));
  std::cout << eval_report_csv(report);
  return kExitOk;
}

int cmd_explain(const RunConfig& c) {
  write_snapshot(c, "explain");
  LoadedCohort lc = load_cohort(c);
  Checkpoint ckpt = require_checkpoint(c);
  EvalInputs in = prepare_eval(lc, ckpt);
  auto ranking =
      feature_importance(in.test, in.templates, ckpt, c.train.theta_explain);
  write_file_atomic(fs::path(c.out) / "importance.csv",
                    importance_csv(ranking));
  std::vector<int> ks = c.topk;
  if (ks.empty())
    for (int k = 5; k <= kFeatureDim; k += 5) ks.push_back(k);
  auto topk = topk_eval(ks, ranking, in.test, in.templates, ckpt,
                        c.train.theta_explain);
  write_file_atomic(fs::path(c.out) / "topk.csv", topk_csv(topk));
  std::cout << "importance and top-K written to " << c.out << "\n";
  return kExitOk;
}

int cmd_sweep(const RunConfig& c) {
  write_snapshot(c, "sweep");
  LoadedCohort lc = load_cohort(c);
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  tc.repeat_count = c.repeat;
  auto rows = sweep(lc.graphs, tc, c.sweep_m, c.sweep_l, c.sweep_d);
  write_file_atomic(fs::path(c.out) / "sweep.csv", sweep_csv(rows));
  int failed = 0;
  for (const SweepRow& row : rows)
    if (row.failed) {
      std::cerr << "cell M=" << row.m << " L=" << row.l << " d=" << row.d
                << " cross=" << row.cross_enabled << " failed: " << row.error
                << "\n";
      ++failed;
    }
  std::cout << rows.size() << " cells, " << failed << " failed\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-similarity hip fracture classifier"};
  app.fallthrough();  // global flags may follow the subcommand name
  app.require_subcommand(1);

  std::string config_path, out_flag, spec_flag, manifest_flag, ckpt_flag;
  std::string ann_flag, subj_flag, pre_flag;
  uint64_t seed_flag = 0;
  int repeat_flag = 0;
  bool seed_set = false;

  app.add_option("--config", config_path, "JSON config file");
  auto* seed_opt = app.add_option("--seed", seed_flag, "top-level seed");
  app.add_option("--out", out_flag, "output directory");
  app.add_option("--repeat", repeat_flag, "number of derived-seed repeats");

  CLI::App* build = app.add_subcommand("build-graphs",
                                       "annotations + subject table -> graphs");
  build->add_option("--annotations", ann_flag, "annotation directory");
  build->add_option("--subjects", subj_flag, "subject table CSV");
  build->add_option("--precomputed", pre_flag, "precomputed feature CSV");
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic cohort");
  synth->add_option("--spec", spec_flag, "synth spec JSON file");
  CLI::App* train_cmd = app.add_subcommand("train", "train a checkpoint");
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  CLI::App* explain = app.add_subcommand("explain", "feature importance + top-K");
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "hyperparameter grid");
  for (CLI::App* cmd : {train_cmd, eval_cmd, explain, sweep_cmd}) {
    cmd->add_option("--manifest", manifest_flag, "dataset manifest");
    cmd->add_option("--checkpoint", ckpt_flag, "checkpoint file");
  }

  try {
    app.parse(argc, argv);
    seed_set = seed_opt->count() > 0;

    RunConfig config;
    if (!config_path.empty()) apply_config_file(config, config_path);
    if (seed_set) {
      config.seed = seed_flag;
      config.synth.seed = seed_flag;
    }
    if (!out_flag.empty()) config.out = out_flag;
    if (repeat_flag > 0) config.repeat = repeat_flag;
    if (!manifest_flag.empty()) config.manifest_path = manifest_flag;
    if (!ckpt_flag.empty()) config.checkpoint_path = ckpt_flag;
    if (!ann_flag.empty()) config.annotations_dir = ann_flag;
    if (!subj_flag.empty()) config.subjects_csv = subj_flag;
    if (!pre_flag.empty()) config.precomputed_csv = pre_flag;
    if (!spec_flag.empty()) {
      config.synth = synth_spec_from_json(read_file(spec_flag));
      if (seed_set) config.synth.seed = seed_flag;
    }

    if (build->parsed()) return cmd_build_graphs(config);
    if (synth->parsed()) return cmd_synth(config);
    if (train_cmd->parsed()) return cmd_train(config);
    if (eval_cmd->parsed()) return cmd_eval(config);
    if (explain->parsed()) return cmd_explain(config);
    if (sweep_cmd->parsed()) return cmd_sweep(config);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
