// stealthbench command line. Dataset-level subcommands run the checkpointed
// pipeline up to their own stage, so `eval` after `train-detector` with the
// same config only evaluates.
//
// exit codes: 0 success, 2 configuration error, 3 stage failure

#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stealthbench/operators.hpp"
#include "stealthbench/pipeline.hpp"
#include "stealthbench/schema.hpp"
#include "stealthbench/stealth.hpp"

using namespace stealthbench;
namespace pl = stealthbench::pipeline;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Common {
  std::string config;
  std::vector<std::string> set;
  std::map<std::string, std::string> flags;  // config key -> value
};

// Registers --<flag> as a shorthand for `--set key=value`.
void keyed(CLI::App* sub, Common& c, const std::string& flag, const std::string& key, const std::string& help) {
  sub->add_option_function<std::string>(
      "--" + flag, [&c, key](const std::string& v) { c.flags[key] = v; }, help);
}

void common_options(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "config file (JSON or key = value lines)");
  sub->add_option("-s,--set", c.set, "override a config key, key=value (repeatable)");
  keyed(sub, c, "out", "out", "run directory");
  keyed(sub, c, "jobs", "jobs", "worker threads (default STEALTHBENCH_JOBS or all cores)");
}

void dataset_options(CLI::App* sub, Common& c) {
  keyed(sub, c, "pool", "pool", "pool directory with one subdirectory per source (default: synthetic)");
  keyed(sub, c, "n", "n", "number of pool images");
  keyed(sub, c, "transform", "transform", "identity | blur | jpeg_chain | walk | external");
  keyed(sub, c, "transform-cmd", "transform_cmd", "external transform executable, run as CMD --in X --out Y");
  keyed(sub, c, "tamper-fraction", "tamper_fraction", "fraction of each class duplicated with a tamper operator");
  keyed(sub, c, "seed", "seed", "dataset seed");
}

pl::RunConfig resolve(const Common& c, const std::string& subcommand) {
  pl::RunConfig cfg;
  if (!c.config.empty()) cfg = pl::load_config(c.config);
  std::vector<std::string> over;
  for (const auto& [k, v] : c.flags) over.push_back(k + "=" + v);
  over.insert(over.end(), c.set.begin(), c.set.end());
  for (const auto& o : over) {
    if (o.find('=') == std::string::npos) throw Error(Errc::kConfig, "override '" + o + "' is not key=value");
  }
  cfg = pl::apply_overrides(cfg, over);
  cfg.subcommand = subcommand;
  return cfg;
}

void print(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

int run_stage_command(const Common& c, const std::string& subcommand, const std::string& stage) {
  const auto cfg = resolve(c, subcommand);
  auto res = pl::run(cfg, stage);
  for (const auto& s : res.log.reused) std::cerr << "reused " << s << "\n";
  for (const auto& s : res.log.executed) std::cerr << "ran " << s << "\n";
  if (stage == "report") {
    std::cerr << "report: " << (std::filesystem::path(cfg.out) / "report.json").string() << "\n";
    print(res.report);
  } else {
    print(res.sections[stage == "features" ? "train" : stage]);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stealthbench: forensic stealth benchmark for image transforms"};
  app.require_subcommand(1);
  app.set_version_flag("--version", pl::kToolVersion);

  struct Staged {
    const char* name;
    const char* stage;
    const char* help;
  };
  const std::vector<Staged> staged = {
      {"build-dataset", "build", "build the labelled, tampered and split dataset"},
      {"train-detector", "train", "extract features and train the spectral detector"},
      {"ingest-scores", "train", "use an external score CSV (id,score) instead of the native detector"},
      {"eval", "eval", "metrics on the test split"},
      {"controls", "controls", "representation controls and file-size baselines"},
      {"sweep-jpeg", "jpeg_sweep", "detection under JPEG recompression"},
      {"per-operator", "per_operator", "TPR per tamper operator at fixed clean thresholds"},
      {"spectral", "spectral", "residual PSD fingerprint against a clean control"},
      {"report", "report", "full run with JSON report and SVG plots"},
  };
  std::map<std::string, Common> commons;
  std::map<std::string, CLI::App*> subs;
  for (const auto& s : staged) {
    auto* sub = app.add_subcommand(s.name, s.help);
    auto& c = commons[s.name];
    common_options(sub, c);
    dataset_options(sub, c);
    subs[s.name] = sub;
  }
  keyed(subs["ingest-scores"], commons["ingest-scores"], "scores", "scores", "score CSV with id,score rows");
  subs["ingest-scores"]->callback([&] {
    if (!commons["ingest-scores"].flags.count("scores")) throw Error(Errc::kConfig, "ingest-scores needs --scores");
  });
  keyed(subs["eval"], commons["eval"], "scores", "scores", "evaluate an external score CSV");
  keyed(subs["controls"], commons["controls"], "skip", "skip", "comma-separated conditions to skip");
  keyed(subs["sweep-jpeg"], commons["sweep-jpeg"], "qualities", "jpeg_qualities", "comma-separated JPEG qualities");
  keyed(subs["spectral"], commons["spectral"], "pairs", "spectral_pairs", "paired residuals (capped by the data)");
  keyed(subs["spectral"], commons["spectral"], "control", "control_pairs", "unpaired clean control differences");
  keyed(subs["report"], commons["report"], "skip", "skip", "comma-separated stages or conditions to skip");

  // tamper: one operator on one image
  auto* tamper = app.add_subcommand("tamper", "apply a tamper operator to an image");
  std::string t_in, t_out, t_op;
  double t_param = 0;
  std::uint64_t t_seed = 0;
  tamper->add_option("--in", t_in, "input image")->required();
  tamper->add_option("--out", t_out, "output PNG")->required();
  auto* op_opt = tamper->add_option("--op", t_op, "operator code A01..A10 (random when omitted)");
  auto* param_opt = tamper->add_option("--param", t_param, "parameter from the operator's sampling set");
  tamper->add_option("--seed", t_seed, "seed for sampling the operator or its parameter");

  // stealth-walk: fixtures from the pool, or a single image
  auto* walk = app.add_subcommand("stealth-walk", "embed the synthetic watermark and run the stealth walk");
  Common& wc = commons["stealth-walk"];
  common_options(walk, wc);
  keyed(walk, wc, "pool", "pool", "pool directory (default: synthetic)");
  keyed(walk, wc, "n", "n", "pool images to draw fixtures and cleans from");
  keyed(walk, wc, "steps", "walk_steps", "walk steps");
  keyed(walk, wc, "proposal", "walk_proposal", "patch_blur | patch_noise | patch_shuffle");
  std::size_t w_count = 50;
  std::string w_in, w_out;
  bool w_report = false;
  walk->add_option("--count", w_count, "number of fixtures");
  walk->add_option("--in", w_in, "walk a single image instead of pool fixtures");
  walk->add_option("--out-image", w_out, "where to write the walked image (with --in)");
  walk->add_flag("--stealth-report", w_report, "train a detector on walk outputs against held-out cleans");

  auto* synth = app.add_subcommand("synth-pool", "write a synthetic image pool");
  std::string s_out;
  std::size_t s_n = 400;
  int s_sources = 1, s_jobs = 0;
  std::uint64_t s_seed = 5;
  synth->add_option("--out", s_out, "directory")->required();
  synth->add_option("--n", s_n, "image count");
  synth->add_option("--sources", s_sources, "number of source subdirectories");
  synth->add_option("--seed", s_seed, "synthetic pool seed");
  synth->add_option("--jobs", s_jobs, "worker threads");

  auto* schema_cmd = app.add_subcommand("schema", "print a JSON schema");
  std::string which = "report";
  schema_cmd->add_option("which", which, "report | manifest")->check(CLI::IsMember({"report", "manifest"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    for (const auto& s : staged) {
      if (subs[s.name]->parsed()) return run_stage_command(commons[s.name], s.name, s.stage);
    }
    if (tamper->parsed()) {
      const ImageBuffer x = dataset::load_file({t_in, ""});
      operators::OperatorSpec spec;
      if (op_opt->count() == 0) {
        spec = operators::sample_operator(t_seed);
      } else if (param_opt->count() == 0) {
        spec = operators::sample_parameter(operators::parse_operator_code(t_op), t_seed);
      } else {
        spec = {operators::parse_operator_code(t_op), t_param, t_seed};
      }
      imageio::write_png(t_out, operators::apply(x, spec));
      print(operators::to_json(spec));
      return 0;
    }
    if (walk->parsed()) {
      const auto cfg = resolve(wc, "stealth-walk");
      if (!w_in.empty()) {
        const ImageBuffer x = dataset::load_file({w_in, ""});
        const auto wm = pl::watermark(cfg);
        const auto pat = stealth::pattern(wm);
        const auto pool = pl::make_pool(cfg);
        const auto control = pl::walk_control(cfg, pool, pl::resolve_jobs(cfg.jobs));
        const ImageBuffer xw = stealth::embed(x, wm, pat);
        const auto st = stealth::walk(xw, x, wm, {cfg.walk_fid, cfg.walk_wm, cfg.walk_ben}, control,
                                      pl::walk_options(cfg, cfg.walk_seed));
        if (!w_out.empty()) imageio::write_png(w_out, st.current);
        auto j = stealth::to_json(st);
        j["verify"] = {{"before", stealth::verify(xw, wm, pat).statistic},
                       {"after", stealth::verify(st.current, wm, pat).statistic},
                       {"threshold", wm.threshold}};
        j["psnr"] = operators::psnr(st.current, x);
        print(j);
        return 0;
      }
      std::vector<ImageBuffer> outputs;
      const auto walks = pl::run_walks(cfg, w_count, w_report ? &outputs : nullptr);
      auto j = pl::to_json(walks);
      j["config"] = pl::to_json(cfg);
      if (w_report) {
        // cleans come from the pool beyond the walked fixtures
        auto pool = pl::make_pool(cfg);
        if (pool.size() < 2 * w_count) throw Error(Errc::kInsufficientImages, "stealth report needs n >= 2 * count");
        std::vector<ImageBuffer> cleans;
        for (std::size_t i = w_count; i < 2 * w_count; ++i) cleans.push_back(pl::load_entry(pool[i]));
        stealth::StealthReportOptions so;
        so.seed = cfg.seed;
        so.jobs = pl::resolve_jobs(cfg.jobs);
        so.hyper = pl::hyper(cfg);
        so.eval = pl::eval_options(cfg);
        j["stealth_report"] = metrics::to_json(stealth::stealth_report(outputs, cleans, so));
      }
      pl::write_text(std::filesystem::path(cfg.out) / "walks.json", j.dump(2) + "\n");
      print(j);
      return 0;
    }
    if (synth->parsed()) {
      const auto n = pl::write_synth_pool(s_out, s_n, s_sources, s_seed, s_jobs);
      std::cerr << "wrote " << n << " images to " << s_out << "\n";
      return 0;
    }
    if (schema_cmd->parsed()) {
      std::cout << (which == "report" ? schema::kReport : schema::kManifest) << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == Errc::kConfig ? kExitConfig : kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}
