// ndp: synth | raise | train | score | eval | export-map | run
#include "ndp/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value

  ndp::PipelineConfig load() const {
    ndp::PipelineConfig cfg = config_path.empty() ? ndp::PipelineConfig{} : ndp::PipelineConfig::load(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ndp::UsageError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "pipeline config file (key = value)")->check(CLI::ExistingFile);
  app->add_option("--set", c.overrides, "override a config key, key=value");
}

std::string command_line(int argc, char** argv) {
  std::string out;
  for (int i = 1; i < argc; ++i) out += (i > 1 ? " " : "") + std::string(argv[i]);
  return out;
}

std::string stem_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu", i);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point cloud anomaly scoring toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ndp::version_string());

  // synth
  Common synth_c;
  std::uint64_t synth_seed = 0;
  std::size_t synth_count = 1, synth_anomalies = 0;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate synthetic labeled scans");
  add_common(synth, synth_c);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--count", synth_count, "number of scans");
  synth->add_option("--anomalies", synth_anomalies, "primitive anomalies per scan");
  synth->add_option("--out", synth_out)->required();

  // raise
  Common raise_c;
  std::string raise_in, raise_out;
  std::optional<double> r_min, r_max, alpha, rho, eps;
  std::optional<std::size_t> min_pts;
  std::uint64_t raise_seed = 0;
  auto* raise = app.add_subcommand("raise", "apply Perlin Raise to every scan of a dataset");
  add_common(raise, raise_c);
  raise->add_option("--data", raise_in)->required()->check(CLI::ExistingDirectory);
  raise->add_option("--out", raise_out)->required();
  raise->add_option("--r-min", r_min);
  raise->add_option("--r-max", r_max);
  raise->add_option("--alpha", alpha);
  raise->add_option("--rho", rho);
  raise->add_option("--eps", eps);
  raise->add_option("--min-pts", min_pts);
  raise->add_option("--seed", raise_seed);

  // train
  Common train_c;
  std::string train_data, train_out, train_method;
  std::optional<std::size_t> train_epochs;
  std::optional<double> train_lr;
  std::optional<std::uint64_t> train_seed;
  std::string train_ndp;
  auto* trn = app.add_subcommand("train", "train backbone and NDP head");
  add_common(trn, train_c);
  trn->add_option("--data", train_data)->required()->check(CLI::ExistingDirectory);
  trn->add_option("--out", train_out)->required();
  trn->add_option("--method", train_method)->check(CLI::IsMember({"entropy", "energy", "ee", "maxlogit"}));
  trn->add_option("--epochs", train_epochs);
  trn->add_option("--lr", train_lr);
  trn->add_option("--seed", train_seed);
  trn->add_option("--ndp", train_ndp)->check(CLI::IsMember({"on", "off"}));

  // score
  std::string score_in, score_model, score_out, score_method, score_ndp;
  auto* score = app.add_subcommand("score", "write per-point OOD scores");
  score->add_option("--model", score_model)->required()->check(CLI::ExistingFile);
  score->add_option("--data", score_in, "dataset directory or a single .bin")->required()->check(CLI::ExistingPath);
  score->add_option("--out", score_out, "output directory, or .score file for a single scan")->required();
  score->add_option("--method", score_method)->check(CLI::IsMember({"entropy", "energy", "ee", "maxlogit"}));
  score->add_option("--ndp", score_ndp)->check(CLI::IsMember({"on", "off"}));

  // eval
  Common eval_c;
  ndp::EvalInputs eval_in;
  std::string eval_out;
  std::optional<double> eval_gamma, eval_tpr;
  auto* eval = app.add_subcommand("eval", "point and object level metrics");
  add_common(eval, eval_c);
  eval->add_option("--scores", eval_in.score_dir)->required()->check(CLI::ExistingDirectory);
  eval->add_option("--labels,--data", eval_in.data_dir)->required()->check(CLI::ExistingDirectory);
  eval->add_option("--gamma", eval_gamma);
  eval->add_option("--gamma-from-tpr", eval_tpr);
  eval->add_option("--calib-data", eval_in.calib_data_dir)->check(CLI::ExistingDirectory);
  eval->add_option("--calib-scores", eval_in.calib_score_dir)->check(CLI::ExistingDirectory);
  eval->add_option("--out", eval_out, "report file (stdout when omitted)");

  // export-map
  std::string map_scores, map_cloud, map_out;
  std::size_t map_res = 256;
  auto* emap = app.add_subcommand("export-map", "colored top-down raster and point cloud of a score field");
  emap->add_option("--scores", map_scores)->required()->check(CLI::ExistingFile);
  emap->add_option("--cloud", map_cloud)->required()->check(CLI::ExistingFile);
  emap->add_option("--out", map_out, "output prefix; writes .ppm and .ply")->required();
  emap->add_option("--resolution", map_res);

  // run
  Common run_c;
  std::string run_out;
  auto* run = app.add_subcommand("run", "synth -> train -> score -> eval");
  add_common(run, run_c);
  run->add_option("--out", run_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  const std::string cmd = command_line(argc, argv);
  try {
    if (*synth) {
      auto cfg = synth_c.load();
      cfg.scene.seed = synth_seed;
      cfg.validate();
      ndp::write_dataset(synth_out, ndp::synthesize(cfg, synth_count, synth_seed, synth_anomalies));
      ndp::write_provenance(synth_out, cmd, cfg, synth_seed);
    } else if (*raise) {
      auto cfg = raise_c.load();
      auto& rs = cfg.train.raise;
      if (r_min) rs.r_min = *r_min;
      if (r_max) rs.r_max = *r_max;
      if (alpha) rs.alpha = *alpha;
      if (rho) rs.rho = *rho;
      if (eps) rs.dbscan_eps = *eps;
      if (min_pts) rs.dbscan_min_pts = *min_pts;
      cfg.validate();
      std::mt19937_64 rng(raise_seed);
      std::vector<ndp::Scan> out;
      std::size_t applied = 0;
      for (const auto& scan : ndp::load_dataset(raise_in, cfg.spec)) {
        auto r = ndp::perlin_raise(scan.cloud, scan.labels, cfg.spec, rs.sample(rng));
        applied += r.report.applied;
        out.push_back({std::move(r.cloud), std::move(r.labels)});
      }
      ndp::write_dataset(raise_out, out);
      ndp::write_provenance(raise_out, cmd, cfg, raise_seed);
      std::cerr << "raised " << applied << " of " << out.size() << " scans\n";
    } else if (*trn) {
      auto cfg = train_c.load();
      if (!train_method.empty()) cfg.train.method = ndp::ScoreMethod::parse(train_method);
      if (train_epochs) cfg.train.epochs = *train_epochs;
      if (train_lr) cfg.train.lr = *train_lr;
      if (train_seed) cfg.train.seed = *train_seed;
      if (!train_ndp.empty()) cfg.train.use_ndp = train_ndp == "on";
      cfg.validate();
      const auto result = ndp::train(ndp::load_dataset(train_data, cfg.spec), cfg.spec, cfg.train);
      for (const auto& e : result.log.epochs)
        std::cerr << "epoch " << e.epoch << " loss " << e.total << " ce " << e.ce << " std " << e.std_term << " soe "
                  << e.soe_term << "\n";
      for (const auto& n : result.log.notes) std::cerr << "note: " << n << "\n";
      ndp::save_model(train_out, result.model);
      ndp::write_provenance(train_out, cmd, cfg, cfg.train.seed);
    } else if (*score) {
      ndp::Model model = ndp::load_model(score_model);
      if (!score_method.empty()) model.method = ndp::ScoreMethod::parse(score_method);
      if (!score_ndp.empty()) model.use_ndp = score_ndp == "on";
      ndp::PipelineConfig cfg;
      cfg.spec = model.spec;
      cfg.train.method = model.method;
      cfg.train.use_ndp = model.use_ndp;
      if (std::filesystem::is_directory(score_in)) {
        ndp::score_dataset(model, score_in, score_out);
      } else {
        ndp::save_scores(score_out, model.score(ndp::load_point_cloud(score_in)));
      }
      ndp::write_provenance(score_out, cmd, cfg, 0);
    } else if (*eval) {
      if (eval_gamma && eval_tpr) throw ndp::UsageError("--gamma and --gamma-from-tpr are mutually exclusive");
      if (!eval_gamma && !eval_tpr) throw ndp::UsageError("eval needs --gamma or --gamma-from-tpr");
      auto cfg = eval_c.load();
      cfg.validate();
      eval_in.gamma = eval_gamma;
      eval_in.gamma_from_tpr = eval_tpr;
      const auto report = ndp::evaluate_dataset(eval_in, cfg);
      if (eval_out.empty()) {
        std::cout << ndp::serialize_report(report);
      } else {
        ndp::write_report(eval_out, report);
        ndp::write_provenance(eval_out, cmd, cfg, cfg.train.seed);
      }
    } else if (*emap) {
      const auto out = ndp::export_score_map(ndp::load_scores(map_scores), ndp::load_point_cloud(map_cloud), map_out,
                                             map_res);
      ndp::write_provenance(out.raster, cmd, ndp::PipelineConfig{}, 0);
      ndp::write_provenance(out.cloud, cmd, ndp::PipelineConfig{}, 0);
    } else if (*run) {
      const auto a = ndp::run_pipeline(run_c.load(), run_out);
      std::cout << ndp::serialize_report(ndp::read_report(a.report));
    }
  } catch (const ndp::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
