#include "ndp/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

namespace ndp {
namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed ^ (stream * 0x9E3779B97F4A7C15ull);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t kTestSplitStream = 0x7465737473706c74ull;
constexpr std::uint64_t kAnomalyStream = 0x616e6f6d616c7973ull;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out))
    throw ContractError("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ContractError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ContractError("config: " + key + " expects on/off, got '" + v + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

std::string budget_to_string(const std::map<std::uint16_t, std::size_t>& budget) {
  std::string out;
  for (const auto& [id, n] : budget) out += (out.empty() ? "" : ",") + std::to_string(id) + ":" + std::to_string(n);
  return out;
}

std::map<std::uint16_t, std::size_t> budget_from_string(const std::string& key, const std::string& v) {
  std::map<std::uint16_t, std::size_t> out;
  for (const auto& item : split(v, ',')) {
    const auto parts = split(item, ':');
    if (parts.size() != 2) throw ContractError("config: " + key + " entries must look like id:count");
    const auto id = to_u64(key, parts[0]);
    if (id > 0xFFFF) throw ContractError("config: " + key + " class id out of range");
    out[static_cast<std::uint16_t>(id)] = to_u64(key, parts[1]);
  }
  return out;
}

std::string kinds_to_string(const std::vector<AnomalyKind>& kinds) {
  std::string out;
  for (const auto& k : kinds)
    out += (out.empty() ? "" : ",") + std::string(to_string(k.shape)) + ":" + format_double(k.size_min) + ":" +
           format_double(k.size_max);
  return out;
}

std::vector<AnomalyKind> kinds_from_string(const std::string& key, const std::string& v) {
  std::vector<AnomalyKind> out;
  for (const auto& item : split(v, ',')) {
    const auto parts = split(item, ':');
    if (parts.size() != 3) throw ContractError("config: " + key + " entries must look like shape:min:max");
    out.push_back({parse_anomaly_shape(parts[0]), to_double(key, parts[1]), to_double(key, parts[2])});
  }
  return out;
}

std::string ids_to_string(const std::vector<std::uint16_t>& ids) {
  std::string out;
  for (auto id : ids) out += (out.empty() ? "" : ",") + std::to_string(id);
  return out;
}

struct Field {
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
};

template <typename T>
Field num_field(T PipelineConfig::*outer, double T::*member) {
  return {[=](const PipelineConfig& c) { return format_double(c.*outer.*member); },
          [=](PipelineConfig& c, const std::string& k, const std::string& v) { c.*outer.*member = to_double(k, v); }};
}

const std::map<std::string, Field>& field_table() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    auto onoff = [](bool b) { return std::string(b ? "on" : "off"); };

    // class spec
    t["spec.inlier_classes"] = {[](const PipelineConfig& c) { return ids_to_string(c.spec.inlier_classes); },
                                [](PipelineConfig& c, const std::string& k, const std::string& v) {
                                  c.spec.inlier_classes.clear();
                                  for (const auto& s : split(v, ','))
                                    c.spec.inlier_classes.push_back(static_cast<std::uint16_t>(to_u64(k, s)));
                                }};
    auto id_field = [](std::uint16_t ClassSpec::*m) {
      return Field{[=](const PipelineConfig& c) { return std::to_string(c.spec.*m); },
                   [=](PipelineConfig& c, const std::string& k, const std::string& v) {
                     const auto id = to_u64(k, v);
                     if (id > 0xFFFF) throw ContractError("config: " + k + " out of range");
                     c.spec.*m = static_cast<std::uint16_t>(id);
                   }};
    };
    t["spec.road_id"] = id_field(&ClassSpec::road_id);
    t["spec.void_id"] = id_field(&ClassSpec::void_id);
    t["spec.ignore_id"] = id_field(&ClassSpec::ignore_id);
    t["spec.ood_id"] = id_field(&ClassSpec::ood_id);
    t["spec.aux_ood_id"] = id_field(&ClassSpec::aux_ood_id);
    t["spec.extended"] = {[=](const PipelineConfig& c) { return onoff(c.spec.extended); },
                          [](PipelineConfig& c, const std::string& k, const std::string& v) { c.spec.extended = to_bool(k, v); }};

    // scenes
    t["scene.seed"] = {[](const PipelineConfig& c) { return std::to_string(c.scene.seed); },
                       [](PipelineConfig& c, const std::string& k, const std::string& v) { c.scene.seed = to_u64(k, v); }};
    t["scene.extent"] = num_field(&PipelineConfig::scene, &SceneConfig::extent);
    t["scene.road_noise_sigma"] = num_field(&PipelineConfig::scene, &SceneConfig::road_noise_sigma);
    t["scene.anomaly_density"] = num_field(&PipelineConfig::scene, &SceneConfig::anomaly_density);
    t["scene.budget"] = {[](const PipelineConfig& c) { return budget_to_string(c.scene.class_budget); },
                         [](PipelineConfig& c, const std::string& k, const std::string& v) {
                           c.scene.class_budget = budget_from_string(k, v);
                         }};
    t["scene.anomaly_kinds"] = {[](const PipelineConfig& c) { return kinds_to_string(c.scene.eval_anomaly_kinds); },
                                [](PipelineConfig& c, const std::string& k, const std::string& v) {
                                  c.scene.eval_anomaly_kinds = kinds_from_string(k, v);
                                }};
    auto count_field = [](std::size_t PipelineConfig::*m) {
      return Field{[=](const PipelineConfig& c) { return std::to_string(c.*m); },
                   [=](PipelineConfig& c, const std::string& k, const std::string& v) { c.*m = to_u64(k, v); }};
    };
    t["scene.train_scenes"] = count_field(&PipelineConfig::train_scenes);
    t["scene.test_scenes"] = count_field(&PipelineConfig::test_scenes);
    t["scene.anomalies"] = count_field(&PipelineConfig::anomalies_per_scene);

    // perlin raise
    auto raise_num = [](double RaiseSampler::*m) {
      return Field{[=](const PipelineConfig& c) { return format_double(c.train.raise.*m); },
                   [=](PipelineConfig& c, const std::string& k, const std::string& v) { c.train.raise.*m = to_double(k, v); }};
    };
    t["raise.r_min"] = raise_num(&RaiseSampler::r_min);
    t["raise.r_max"] = raise_num(&RaiseSampler::r_max);
    t["raise.alpha"] = raise_num(&RaiseSampler::alpha);
    t["raise.rho"] = raise_num(&RaiseSampler::rho);
    t["raise.eps"] = raise_num(&RaiseSampler::dbscan_eps);
    t["raise.min_pts"] = {[](const PipelineConfig& c) { return std::to_string(c.train.raise.dbscan_min_pts); },
                          [](PipelineConfig& c, const std::string& k, const std::string& v) {
                            c.train.raise.dbscan_min_pts = to_u64(k, v);
                          }};
    t["raise.per_scan"] = {[](const PipelineConfig& c) { return std::to_string(c.train.raise_per_scan); },
                           [](PipelineConfig& c, const std::string& k, const std::string& v) { c.train.raise_per_scan = to_u64(k, v); }};
    t["raise.attempts"] = {[](const PipelineConfig& c) { return std::to_string(c.train.raise_attempts); },
                           [](PipelineConfig& c, const std::string& k, const std::string& v) { c.train.raise_attempts = to_u64(k, v); }};

    // training
    auto train_num = [](double TrainConfig::*m) {
      return Field{[=](const PipelineConfig& c) { return format_double(c.train.*m); },
                   [=](PipelineConfig& c, const std::string& k, const std::string& v) { c.train.*m = to_double(k, v); }};
    };
    auto train_count = [](std::size_t TrainConfig::*m) {
      return Field{[=](const PipelineConfig& c) { return std::to_string(c.train.*m); },
                   [=](PipelineConfig& c, const std::string& k, const std::string& v) { c.train.*m = to_u64(k, v); }};
    };
    t["train.lr"] = train_num(&TrainConfig::lr);
    t["train.adam_beta1"] = train_num(&TrainConfig::adam_beta1);
    t["train.adam_beta2"] = train_num(&TrainConfig::adam_beta2);
    t["train.adam_eps"] = train_num(&TrainConfig::adam_eps);
    t["train.epochs"] = train_count(&TrainConfig::epochs);
    t["train.batch_scans"] = train_count(&TrainConfig::batch_scans);
    t["train.hidden"] = train_count(&TrainConfig::hidden);
    t["train.latent_dim"] = train_count(&TrainConfig::latent_dim);
    t["train.seed"] = {[](const PipelineConfig& c) { return std::to_string(c.train.seed); },
                       [](PipelineConfig& c, const std::string& k, const std::string& v) { c.train.seed = to_u64(k, v); }};
    t["train.method"] = {[](const PipelineConfig& c) { return c.train.method.name(); },
                         [](PipelineConfig& c, const std::string&, const std::string& v) { c.train.method = ScoreMethod::parse(v); }};
    t["train.ndp"] = {[=](const PipelineConfig& c) { return onoff(c.train.use_ndp); },
                      [](PipelineConfig& c, const std::string& k, const std::string& v) { c.train.use_ndp = to_bool(k, v); }};
    t["train.freeze_head"] = {[=](const PipelineConfig& c) { return onoff(c.train.freeze_ndp_head); },
                              [](PipelineConfig& c, const std::string& k, const std::string& v) {
                                c.train.freeze_ndp_head = to_bool(k, v);
                              }};

    // losses
    auto loss_num = [](double LossConfig::*m) {
      return Field{[=](const PipelineConfig& c) { return format_double(c.train.loss.*m); },
                   [=](PipelineConfig& c, const std::string& k, const std::string& v) { c.train.loss.*m = to_double(k, v); }};
    };
    t["loss.beta"] = loss_num(&LossConfig::beta);
    t["loss.ood_weight"] = loss_num(&LossConfig::ood_weight);
    t["loss.std_orientation"] = {
        [](const PipelineConfig& c) {
          return std::string(c.train.loss.std_orientation == StdOrientation::Consistent ? "consistent" : "swapped");
        },
        [](PipelineConfig& c, const std::string& k, const std::string& v) {
          if (v == "consistent") c.train.loss.std_orientation = StdOrientation::Consistent;
          else if (v == "swapped") c.train.loss.std_orientation = StdOrientation::Swapped;
          else throw ContractError("config: " + k + " expects consistent|swapped");
        }};
    t["loss.ce_positive_only"] = {[=](const PipelineConfig& c) { return onoff(c.train.loss.ce_positive_only); },
                                  [](PipelineConfig& c, const std::string& k, const std::string& v) {
                                    c.train.loss.ce_positive_only = to_bool(k, v);
                                  }};

    // evaluation
    t["eval.gamma"] = num_field(&PipelineConfig::eval, &EvalConfig::gamma);
    t["eval.dbscan_eps"] = num_field(&PipelineConfig::eval, &EvalConfig::dbscan_eps);
    t["eval.iou_threshold"] = num_field(&PipelineConfig::eval, &EvalConfig::iou_threshold);
    t["eval.dbscan_min_pts"] = {[](const PipelineConfig& c) { return std::to_string(c.eval.dbscan_min_pts); },
                                [](PipelineConfig& c, const std::string& k, const std::string& v) {
                                  c.eval.dbscan_min_pts = to_u64(k, v);
                                }};
    t["eval.gamma_from_tpr"] = {[](const PipelineConfig& c) { return format_double(c.gamma_from_tpr); },
                                [](PipelineConfig& c, const std::string& k, const std::string& v) {
                                  c.gamma_from_tpr = to_double(k, v);
                                }};
    return t;
  }();
  return table;
}

}  // namespace

std::string version_string() { return NDP_VERSION_STRING; }

void PipelineConfig::validate() const {
  spec.validate();
  scene.validate(spec);
  train.validate();
  eval.validate();
  if (train.method.requires_extended() && !spec.extended)
    throw ContractError("config: train.method = ee needs spec.extended = on");
  if (gamma_from_tpr < 0.0 || gamma_from_tpr > 1.0) throw ContractError("config: eval.gamma_from_tpr must lie in [0, 1]");
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
  const auto& table = field_table();
  const auto it = table.find(key);
  if (it == table.end()) throw ContractError("config: unknown key '" + key + "'");
  it->second.set(*this, key, value);
}

PipelineConfig PipelineConfig::parse(const std::string& text) {
  PipelineConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ContractError("config line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse(std::string(bytes.begin(), bytes.end()));
}

std::string PipelineConfig::serialize() const {
  std::string out;
  for (const auto& [key, field] : field_table()) out += key + " = " + field.get(*this) + "\n";
  return out;
}

const std::vector<std::string>& PipelineConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> v;
    for (const auto& [key, field] : field_table()) v.push_back(key);
    return v;
  }();
  return k;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_provenance(const std::filesystem::path& artifact, const std::string& command, const PipelineConfig& cfg,
                      std::uint64_t seed) {
  const std::string config_text = cfg.serialize();
  Report prov = parse_report(config_text);
  prov["prov.command"] = command;
  prov["prov.config_hash"] = fnv1a_hex(config_text);
  prov["prov.seed"] = std::to_string(seed);
  prov["prov.version"] = version_string();
  std::filesystem::path side = artifact;
  if (side.filename().empty()) side = side.parent_path();
  side += ".prov";
  write_report(side, prov);
}

// ---------------------------------------------------------------------------

std::vector<DatasetEntry> list_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<DatasetEntry> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() != ".bin") continue;
    DatasetEntry entry{e.path().stem().string(), e.path(), e.path()};
    entry.labels.replace_extension(".label");
    out.push_back(std::move(entry));
  }
  std::sort(out.begin(), out.end(), [](const DatasetEntry& a, const DatasetEntry& b) { return a.stem < b.stem; });
  return out;
}

std::vector<Scan> load_dataset(const std::filesystem::path& dir, const ClassSpec& spec) {
  std::vector<Scan> scans;
  for (const auto& e : list_dataset(dir)) {
    Scan s{load_point_cloud(e.cloud), load_labels(e.labels, spec)};
    s.labels.validate(s.cloud.size());
    scans.push_back(std::move(s));
  }
  return scans;
}

std::vector<Scan> synthesize(const PipelineConfig& cfg, std::size_t count, std::uint64_t seed, std::size_t anomalies) {
  std::vector<Scan> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SceneConfig sc = cfg.scene;
    sc.seed = mix_seed(seed, i);
    Scan scan = generate_scene(sc, cfg.spec);
    if (anomalies > 0) scan = inject_eval_anomaly(scan, cfg.spec, sc, mix_seed(sc.seed, kAnomalyStream), anomalies).scan;
    out.push_back(std::move(scan));
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Scan>& scans) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < scans.size(); ++i) {
    char stem[16];
    std::snprintf(stem, sizeof(stem), "%06zu", i);
    save_point_cloud(dir / (std::string(stem) + ".bin"), scans[i].cloud);
    save_labels(dir / (std::string(stem) + ".label"), scans[i].labels);
  }
}

void score_dataset(const Model& model, const std::filesystem::path& data_dir, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (const auto& e : list_dataset(data_dir))
    save_scores(out_dir / (e.stem + ".score"), model.score(load_point_cloud(e.cloud)));
}

namespace {

struct Pooled {
  std::vector<double> scores;
  std::vector<std::uint8_t> is_ood;
  std::vector<std::uint8_t> ignore;
};

struct LoadedScan {
  PointCloud cloud;
  LabelMap labels;
  ScoreField scores;
};

std::vector<LoadedScan> load_scored(const std::filesystem::path& data_dir, const std::filesystem::path& score_dir,
                                    const ClassSpec& spec) {
  std::vector<LoadedScan> out;
  for (const auto& e : list_dataset(data_dir)) {
    LoadedScan s{load_point_cloud(e.cloud), load_labels(e.labels, spec), load_scores(score_dir / (e.stem + ".score"))};
    if (s.labels.size() != s.cloud.size() || s.scores.size() != s.cloud.size())
      throw ContractError("eval: scan " + e.stem + " has mismatched point, label and score counts");
    out.push_back(std::move(s));
  }
  return out;
}

void pool(const LoadedScan& s, Pooled& p) {
  for (std::size_t i = 0; i < s.cloud.size(); ++i) {
    const Role r = s.labels.role[i];
    p.scores.push_back(s.scores.scores[i]);
    p.is_ood.push_back(r == Role::RealOod || r == Role::AuxOod);
    p.ignore.push_back(r == Role::Void || r == Role::Ignore);
  }
}

}  // namespace

Report evaluate_dataset(const EvalInputs& in, const PipelineConfig& cfg) {
  if (!in.gamma && !in.gamma_from_tpr) throw UsageError("eval needs --gamma or --gamma-from-tpr");
  const auto scans = load_scored(in.data_dir, in.score_dir, cfg.spec);

  Pooled all;
  for (const auto& s : scans) pool(s, all);

  EvalConfig ec = cfg.eval;
  Report report;
  if (in.gamma) {
    ec.gamma = *in.gamma;
    report["config.gamma_source"] = "fixed";
  } else {
    Pooled calib;
    std::string source = "self";
    if (!in.calib_data_dir.empty()) {
      for (const auto& s : load_scored(in.calib_data_dir, in.calib_score_dir.empty() ? in.score_dir : in.calib_score_dir,
                                       cfg.spec))
        pool(s, calib);
      source = "calibration";
    } else {
      calib = all;
    }
    const double t = threshold_at_tpr(calib.scores, calib.is_ood, calib.ignore, *in.gamma_from_tpr);
    // classify() flags score > gamma; step just below t so points scoring t count as OOD.
    ec.gamma = std::nextafter(t, -std::numeric_limits<double>::infinity());
    report["config.gamma_source"] = "tpr:" + format_double(*in.gamma_from_tpr) + ":" + source;
  }
  ec.validate();

  MatchResult match;
  for (const auto& s : scans) {
    std::vector<std::uint8_t> ignore(s.cloud.size());
    for (std::size_t i = 0; i < ignore.size(); ++i)
      ignore[i] = s.labels.role[i] == Role::Void || s.labels.role[i] == Role::Ignore;
    match.append(match_instances(cluster_predictions(s.scores, s.cloud, ec), ground_truth_instances(s.labels), ignore));
  }

  put_metrics(report, point_metrics(all.scores, all.is_ood, all.ignore), match, panoptic_scores(match));
  report["config.gamma"] = format_double(ec.gamma);
  report["config.dbscan_eps"] = format_double(ec.dbscan_eps);
  report["config.dbscan_min_pts"] = std::to_string(ec.dbscan_min_pts);
  report["config.iou_threshold"] = format_double(ec.iou_threshold);
  report["run.scans"] = std::to_string(scans.size());
  report["run.points"] = std::to_string(all.scores.size());
  report["run.version"] = version_string();
  report["run.scene_seed"] = std::to_string(cfg.scene.seed);
  report["run.train_seed"] = std::to_string(cfg.train.seed);
  return report;
}

PipelineArtifacts run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  PipelineArtifacts a{out_dir / "train", out_dir / "test", out_dir / "model.ckpt", out_dir / "scores",
                      out_dir / "report.txt"};
  std::filesystem::create_directories(out_dir);

  const auto train_scans = synthesize(cfg, cfg.train_scenes, cfg.scene.seed, 0);
  write_dataset(a.train_dir, train_scans);
  write_provenance(a.train_dir, "run:synth-train", cfg, cfg.scene.seed);

  const std::uint64_t test_seed = mix_seed(cfg.scene.seed, kTestSplitStream);
  write_dataset(a.test_dir, synthesize(cfg, cfg.test_scenes, test_seed, cfg.anomalies_per_scene));
  write_provenance(a.test_dir, "run:synth-test", cfg, test_seed);

  // Train from the files on disk so the run matches a staged CLI invocation.
  const TrainResult trained = train(load_dataset(a.train_dir, cfg.spec), cfg.spec, cfg.train);
  save_model(a.model, trained.model);
  write_provenance(a.model, "run:train", cfg, cfg.train.seed);

  score_dataset(load_model(a.model), a.test_dir, a.score_dir);
  write_provenance(a.score_dir, "run:score", cfg, cfg.train.seed);

  EvalInputs in{a.test_dir, a.score_dir, std::nullopt, std::nullopt, {}, {}};
  if (cfg.gamma_from_tpr > 0.0) in.gamma_from_tpr = cfg.gamma_from_tpr;
  else in.gamma = cfg.eval.gamma;
  write_report(a.report, evaluate_dataset(in, cfg));
  write_provenance(a.report, "run:eval", cfg, cfg.train.seed);
  return a;
}

}  // namespace ndp
