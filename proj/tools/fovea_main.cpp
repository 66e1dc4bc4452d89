#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fovea/config.hpp"
#include "fovea/control/controller.hpp"
#include "fovea/eval/harness.hpp"
#include "fovea/eval/macs.hpp"
#include "fovea/models/bundle.hpp"
#include "fovea/models/train.hpp"
#include "fovea/oracle/dataset.hpp"
#include "fovea/oracle/demo.hpp"
#include "fovea/segment/gmm.hpp"

namespace fs = std::filesystem;
using namespace fovea;

namespace {

fs::path out_path(const std::string& out) {
  fs::path p(out);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("FOVEA_OUT_ROOT")) return fs::path(root) / p;
  return p;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

void require_flags(const CLI::App& cmd, const std::vector<std::string>& names) {
  std::vector<std::string> missing;
  for (const std::string& n : names)
    if (cmd.count(n) == 0) missing.push_back(n);
  if (missing.empty()) return;
  std::ostringstream os;
  os << cmd.get_name() << ": missing required flags: ";
  for (size_t i = 0; i < missing.size(); ++i) os << (i ? ", " : "") << missing[i];
  throw std::runtime_error(os.str());
}

std::string trimmed(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

std::vector<segment::SpeedSample> episode_speed_samples(const oracle::DatasetReader& reader,
                                                        const std::vector<int>& episodes) {
  std::vector<segment::SpeedSample> out;
  for (int e : episodes) {
    const auto s = segment::episode_speeds(reader.episode(e), e);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

void cmd_collect(const config::PipelineConfig& cfg, int n, const fs::path& out) {
  if (n < 1) throw std::runtime_error("collect-demos: --n must be >= 1");
  fs::create_directories(out);
  oracle::DatasetWriter writer(out.string(), cfg.geom.full_w, cfg.geom.full_h);
  long long steps = 0;
  int successes = 0;
  for (int i = 0; i < n; ++i) {
    const oracle::EpisodeRecord ep =
        oracle::generate_episode(cfg.seed + i, cfg.oracle, cfg.sim, cfg.cam);
    steps += static_cast<long long>(ep.steps.size());
    successes += ep.outcome == oracle::Outcome::kSuccess ? 1 : 0;
    writer.add_episode(ep);
  }
  writer.finalize();
  write_text(out / "config.txt", config::dump(cfg));
  std::cout << "wrote " << n << " episodes (" << successes << " successful, " << steps
            << " steps) to " << out.string() << "\n";
}

void cmd_fit_gmm(const config::PipelineConfig& cfg, const std::string& data, const fs::path& out) {
  oracle::DatasetReader reader(data);
  std::vector<int> all(reader.episode_count());
  for (int i = 0; i < reader.episode_count(); ++i) all[i] = i;
  const auto samples = episode_speed_samples(reader, all);
  if (samples.empty()) throw std::runtime_error("fit-gmm: no speed samples in '" + data + "'");
  const segment::GmmFit fit = segment::fit_gmm2(samples);
  std::vector<double> speeds;
  speeds.reserve(samples.size());
  for (const auto& s : samples) speeds.push_back(s.s);
  const nlohmann::json report = segment::fit_report(fit, speeds, cfg.hist_bins);
  fs::create_directories(out);
  write_text(out / "gmm.json", report.dump(2) + "\n");
  write_text(out / "config.txt", config::dump(cfg));
  std::cout << "fit " << samples.size() << " speed samples: threshold " << fit.threshold
            << ", means " << fit.mu1 << " / " << fit.mu2 << "\n";
}

std::vector<models::Comp> pick_components(const std::string& list,
                                          const models::BundleOptions& opt) {
  const std::vector<models::Comp> required = models::required_components(opt);
  if (list == "all") return required;
  std::vector<models::Comp> picked;
  std::vector<std::string> unknown, unused;
  std::stringstream ss(list);
  std::string name;
  while (std::getline(ss, name, ',')) {
    name = trimmed(name);
    if (name.empty()) continue;
    bool valid = false;
    for (models::Comp c : models::kAllComps)
      if (models::comp_name(c) == name) {
        valid = true;
        if (std::find(required.begin(), required.end(), c) == required.end())
          unused.push_back(name);
        else
          picked.push_back(c);
      }
    if (!valid) unknown.push_back(name);
  }
  if (!unknown.empty() || !unused.empty()) {
    std::ostringstream os;
    os << "train:";
    const char* sep = "";
    if (!unknown.empty()) {
      os << " unknown components: ";
      for (size_t i = 0; i < unknown.size(); ++i) os << (i ? ", " : "") << unknown[i];
      sep = ";";
    }
    if (!unused.empty()) {
      os << sep << " components not used by this wiring: ";
      for (size_t i = 0; i < unused.size(); ++i) os << (i ? ", " : "") << unused[i];
    }
    throw std::runtime_error(os.str());
  }
  if (picked.empty()) throw std::runtime_error("train: --components selected nothing");
  return picked;
}

void cmd_train(const config::PipelineConfig& cfg, const std::string& data,
               const std::string& components, const fs::path& out) {
  oracle::DatasetReader reader(data);
  if (reader.episode_count() < 2)
    throw std::runtime_error("train: need at least 2 episodes, dataset has " +
                             std::to_string(reader.episode_count()));
  if (reader.meta().image_w != cfg.geom.full_w || reader.meta().image_h != cfg.geom.full_h)
    throw std::runtime_error("train: dataset frames are " + std::to_string(reader.meta().image_w) +
                             "x" + std::to_string(reader.meta().image_h) +
                             " but the geometry expects " + std::to_string(cfg.geom.full_w) + "x" +
                             std::to_string(cfg.geom.full_h));

  const auto [train_eps, val_eps] =
      oracle::split_train_val(reader.episode_count(), cfg.split_ratio, cfg.split_seed);
  const auto samples = episode_speed_samples(reader, train_eps);
  const segment::GmmFit fit = segment::fit_gmm2(samples);

  const models::BundleOptions opt;
  const std::vector<models::Comp> comps = pick_components(components, opt);
  const models::FeatureCache cache =
      models::build_feature_cache(reader, cfg.geom, fit.threshold, opt.mono);
  models::PolicyBundle bundle(cfg.arch, cfg.geom, opt, cfg.bundle_seed);

  fs::create_directories(out / "curves");
  nlohmann::json tj;
  tj["threshold"] = fit.threshold;
  tj["train_episodes"] = train_eps;
  tj["val_episodes"] = val_eps;
  tj["components"] = nlohmann::json::object();
  std::cout << "speed threshold " << fit.threshold << " from " << samples.size() << " samples\n";
  for (models::Comp c : comps) {
    const std::string name = models::comp_name(c);
    const models::TrainResult res =
        models::train_component(bundle, c, cache, train_eps, val_eps, cfg.train);
    models::write_curve_csv((out / "curves" / (name + ".csv")).string(), res);
    tj["components"][name] = {{"best_epoch", res.best_epoch},
                              {"best_val", res.best_val},
                              {"warning", res.warning}};
    std::cout << "trained " << name << ": val " << res.best_val << " at epoch " << res.best_epoch
              << "\n";
  }
  bundle.save((out / "bundle").string());
  write_text(out / "macs.csv", eval::macs_csv(eval::count_macs(cfg.arch, cfg.geom, opt)));
  write_text(out / "train.json", tj.dump(2) + "\n");
  write_text(out / "config.txt", config::dump(cfg));
  std::cout << "saved bundle to " << (out / "bundle").string() << "\n";
}

void cmd_evaluate(const config::PipelineConfig& cfg, const std::string& bundle_dir, int n,
                  const fs::path& out) {
  if (n < 1) throw std::runtime_error("evaluate: --n must be >= 1");
  models::PolicyBundle bundle = models::PolicyBundle::load(bundle_dir);
  control::ControllerConfig ctrl{cfg.ctrl_max_steps, cfg.success_grace};
  const eval::EvalSummary summary =
      eval::evaluate(bundle, cfg.cam, cfg.sim, n, cfg.trial_seed_base, ctrl);
  fs::create_directories(out / "traces");
  for (const control::TrialReport& t : summary.trials)
    write_text(out / "traces" / ("trial_" + std::to_string(t.seed) + ".txt"),
               control::format_trace(t));
  write_text(out / "summary.json", eval::summary_json(summary).dump(2) + "\n");
  write_text(out / "config.txt", config::dump(cfg));
  std::cout << "evaluated " << n << " trials: pick " << summary.pick_rate << ", thread "
            << summary.thread_rate << ", infra failures " << summary.infra_failures << "\n";
}

std::vector<eval::AblationSpec> parse_suite(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("suite '" + path + "': " + e.what());
  }
  if (!j.is_array()) throw std::runtime_error("suite '" + path + "': top level must be an array");
  std::vector<eval::AblationSpec> suite;
  std::vector<std::string> problems;
  for (size_t i = 0; i < j.size(); ++i) {
    const nlohmann::json& e = j[i];
    const std::string tag = "entry " + std::to_string(i);
    if (!e.is_object()) {
      problems.push_back(tag + ": must be an object");
      continue;
    }
    if (!e.contains("name") || !e["name"].is_string()) {
      problems.push_back(tag + ": missing 'name'");
      continue;
    }
    eval::AblationSpec spec;
    spec.name = e["name"].get<std::string>();
    if (e.contains("overrides")) {
      if (!e["overrides"].is_object()) {
        problems.push_back(tag + ": 'overrides' must be an object");
        continue;
      }
      for (auto it = e["overrides"].begin(); it != e["overrides"].end(); ++it) {
        const nlohmann::json& v = it.value();
        spec.overrides.emplace_back(it.key(), v.is_string() ? v.get<std::string>() : v.dump());
      }
    }
    suite.push_back(std::move(spec));
  }
  if (!problems.empty()) {
    std::ostringstream os;
    os << "suite '" << path << "': ";
    for (size_t i = 0; i < problems.size(); ++i) os << (i ? "; " : "") << problems[i];
    throw std::runtime_error(os.str());
  }
  return suite;
}

void cmd_ablate(const config::PipelineConfig& cfg, const std::string& data,
                const std::string& suite_path, const fs::path& out) {
  const std::vector<eval::AblationSpec> suite =
      suite_path.empty() ? eval::standard_suite() : parse_suite(suite_path);
  eval::AblationConfig ac;
  ac.arch = cfg.arch;
  ac.geom = cfg.geom;
  ac.cam = cfg.cam;
  ac.sim = cfg.sim;
  ac.train = cfg.train;
  ac.split_ratio = cfg.split_ratio;
  ac.split_seed = cfg.split_seed;
  ac.bundle_seed = cfg.bundle_seed;
  ac.n_trials = cfg.n_trials;
  ac.trial_seed_base = cfg.trial_seed_base;
  ac.ctrl = control::ControllerConfig{cfg.ctrl_max_steps, cfg.success_grace};
  const auto rows = eval::run_ablation(suite, data, ac);
  fs::create_directories(out);
  write_text(out / "ablation.csv", eval::ablation_csv(rows));
  write_text(out / "ablation.json", eval::ablation_json(rows).dump(2) + "\n");
  write_text(out / "config.txt", config::dump(cfg));
  for (const auto& r : rows)
    std::cout << r.name << ": pick " << r.eval.pick_rate << ", thread " << r.eval.thread_rate
              << "\n";
}

void cmd_replay(const config::PipelineConfig& cfg, const std::string& trace_path) {
  const control::TrialReport report = control::parse_trace(read_file(trace_path));
  std::string why;
  if (!control::replay_matches(report, cfg.sim, &why))
    throw std::runtime_error("replay mismatch: " + why);
  std::cout << "replay ok: seed " << report.seed << ", " << report.steps << " steps, picked="
            << (report.picked ? 1 : 0) << " threaded=" << (report.threaded ? 1 : 0) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-resolution gaze-guided imitation pipeline"};
  app.footer(config::help_text());
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  int threads = 1;
  app.add_option("--config", config_path, "config file of `key = value` lines");
  app.add_option("--seed", seed, "base rng seed, overrides the config file (default 0)");
  app.add_option("--threads", threads, "reserved; the pipeline runs single-threaded");

  int n_episodes = 0, n_trials = 0;
  std::string out_dir, data_dir, bundle_dir, suite_path, trace_path;
  std::string components = "all";

  CLI::App* collect = app.add_subcommand("collect-demos", "generate a demonstration dataset");
  collect->add_option("--n", n_episodes, "episode count");
  collect->add_option("--out", out_dir, "dataset directory");

  CLI::App* fitgmm =
      app.add_subcommand("fit-gmm", "fit the two-speed mixture and report thresholds");
  fitgmm->add_option("--data", data_dir, "dataset directory");
  fitgmm->add_option("--out", out_dir, "report directory");

  CLI::App* train = app.add_subcommand("train", "train policy components on a dataset");
  train->add_option("--data", data_dir, "dataset directory");
  train->add_option("--components", components, "comma list of component names, or 'all'");
  train->add_option("--out", out_dir, "output directory for bundle, curves, and reports");

  CLI::App* evaluate = app.add_subcommand("evaluate", "run seeded trials with a trained bundle");
  evaluate->add_option("--bundle", bundle_dir, "bundle directory, as saved by train");
  evaluate->add_option("--n", n_trials, "trial count (default eval.n_trials)");
  evaluate->add_option("--out", out_dir, "output directory for summary and traces");

  CLI::App* ablate = app.add_subcommand("ablate", "train and evaluate a variant suite");
  ablate->add_option("--data", data_dir, "dataset directory");
  ablate->add_option("--suite", suite_path, "json suite file (default: the built-in suite)");
  ablate->add_option("--out", out_dir, "output directory");

  CLI::App* replay = app.add_subcommand("replay", "re-run a recorded trial trace and verify it");
  replay->add_option("--trace", trace_path, "trace file");

  for (CLI::App* sub : {collect, fitgmm, train, evaluate, ablate, replay}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (threads < 1) throw std::runtime_error("--threads must be >= 1");
    config::PipelineConfig cfg;
    if (!config_path.empty()) config::apply_file(cfg, config_path);
    if (app.count("--seed") > 0) cfg.seed = seed;
    cfg.train.seed = cfg.seed;
    config::finalize(cfg);

    if (*collect) {
      require_flags(*collect, {"--n", "--out"});
      cmd_collect(cfg, n_episodes, out_path(out_dir));
    } else if (*fitgmm) {
      require_flags(*fitgmm, {"--data", "--out"});
      cmd_fit_gmm(cfg, data_dir, out_path(out_dir));
    } else if (*train) {
      require_flags(*train, {"--data", "--out"});
      cmd_train(cfg, data_dir, components, out_path(out_dir));
    } else if (*evaluate) {
      require_flags(*evaluate, {"--bundle", "--out"});
      cmd_evaluate(cfg, bundle_dir, evaluate->count("--n") ? n_trials : cfg.n_trials,
                   out_path(out_dir));
    } else if (*ablate) {
      require_flags(*ablate, {"--data", "--out"});
      cmd_ablate(cfg, data_dir, suite_path, out_path(out_dir));
    } else if (*replay) {
      require_flags(*replay, {"--trace"});
      cmd_replay(cfg, trace_path);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
