// partgraph_cli: scene generation, pipeline runs, gradient checks, timing.
//
// Exit codes: 0 success, 1 usage, 2 I/O, 3 validation failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "partgraph/partgraph.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace partgraph;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kValidation = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::pair<int, int> parse_size(const std::string& s) {
  static const std::regex re(R"((\d+)x(\d+))");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw UsageError("size must look like WxH, got '" + s + "'");
  const int w = std::stoi(m[1]), h = std::stoi(m[2]);
  if (w <= 0 || h <= 0) throw UsageError("size must be positive");
  return {w, h};
}

NoiseSpec parse_noise(const std::string& s) {
  NoiseSpec n;
  if (s.empty() || s == "none") return n;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError("noise entries must be key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq);
    double value = 0.0;
    try {
      std::size_t used = 0;
      value = std::stod(item.substr(eq + 1), &used);
      if (used != item.size() - eq - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw UsageError("bad noise value in '" + item + "'");
    }
    if (key == "offset") n.offset_sigma = value;
    else if (key == "heat") n.heatmap_sigma = value;
    else if (key == "drop") n.drop_prob = value;
    else throw UsageError("unknown noise key '" + key + "' (offset, heat, drop)");
  }
  if (n.offset_sigma < 0 || n.heatmap_sigma < 0 || n.drop_prob < 0 || n.drop_prob > 1)
    throw UsageError("noise values out of range");
  return n;
}

std::uint64_t default_seed() {
  if (const char* env = std::getenv("PARTGRAPH_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("PARTGRAPH_SEED is not an unsigned integer: ") + env);
    }
  }
  return 0;
}

std::vector<std::uint64_t> seeds_or_default(const std::vector<std::uint64_t>& given) {
  return given.empty() ? std::vector<std::uint64_t>{default_seed()} : given;
}

// Runs fn(i) for i in [0, n) on `jobs` threads; results land in index order.
template <typename Fn>
void parallel_for(int n, int jobs, Fn&& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  for (int t = 0; t < jobs; ++t)
    pool.emplace_back([&, t] {
      try {
        for (int i = t; i < n; i += jobs) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

json diagnostics_json(const Diagnostics& d) {
  return {{"stage_ms", d.stage_ms},
          {"peaks_per_category", d.peaks_per_category},
          {"keypoints_per_category", d.keypoints_per_category},
          {"limb_weight_gap", d.limb_weight_gap},
          {"poses", d.poses},
          {"foreground_without_poses", d.foreground_without_poses}};
}

// --- commands ---------------------------------------------------------------

struct SynthArgs {
  int persons = 1;
  std::string size = "256x256";
  std::vector<std::uint64_t> seed;
  std::string overlap = "forbidden";
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  if (a.persons < 0) throw UsageError("--persons must be >= 0");
  if (a.seed.size() > 1) throw UsageError("synth takes a single --seed");
  const auto [w, h] = parse_size(a.size);
  SceneOptions opt;
  opt.overlap = a.overlap == "allowed" ? Overlap::Allowed : Overlap::Forbidden;
  const Scene s = generate_scene(a.persons, w, h, seeds_or_default(a.seed).front(), opt);
  for (const auto& p : save_scene(s, a.out)) std::cout << p.string() << "\n";
  return kOk;
}

struct RunArgs {
  std::vector<std::string> scenes;
  std::string matcher = "pgd";
  std::string noise;
  std::vector<std::uint64_t> seed;
  std::string report;
  std::string render;
  std::string flows = "zero";
  int jobs = 1;
};

int cmd_run(const RunArgs& a) {
  PipelineConfig cfg;
  try {
    cfg.matcher = parse_matcher(a.matcher);
  } catch (const InvalidInput& e) {
    throw UsageError(e.what());
  }
  if (a.jobs < 1) throw UsageError("--jobs must be >= 1");
  if (a.flows != "zero" && a.flows != "injected") throw UsageError("--flows must be zero or injected");
  const NoiseSpec base_noise = parse_noise(a.noise);
  const auto seeds = seeds_or_default(a.seed);

  std::vector<Scene> scenes;
  for (const auto& path : a.scenes) scenes.push_back(load_scene(path));

  RenderOptions ropt;
  ropt.flows = a.flows == "injected" ? FlowMode::Injected : FlowMode::Zero;

  // One run per (scene, seed); the seed only drives the corruption model.
  const int per_scene = static_cast<int>(seeds.size());
  const int n = static_cast<int>(scenes.size()) * per_scene;
  std::vector<PipelineResult> results(static_cast<std::size_t>(n));
  parallel_for(n, a.jobs, [&](int i) {
    NoiseSpec ns = base_noise;
    ns.seed = seeds[static_cast<std::size_t>(i % per_scene)];
    results[static_cast<std::size_t>(i)] = run_scene(scenes[static_cast<std::size_t>(i / per_scene)], ns, cfg, ropt);
  });

  json report;
  report["config"] = {{"matcher", matcher_name(cfg.matcher)},
                      {"noise", {{"offset", base_noise.offset_sigma}, {"heat", base_noise.heatmap_sigma}, {"drop", base_noise.drop_prob}}},
                      {"seeds", seeds},
                      {"scenes", a.scenes},
                      {"flows", a.flows},
                      {"keypoint_threshold", cfg.keypoint_threshold},
                      {"solver",
                       {{"alpha", cfg.solver.alpha},
                        {"pgd_iters", cfg.solver.pgd_iters},
                        {"dykstra_iters", cfg.solver.dykstra_iters},
                        {"tol", cfg.solver.tol}}}};
  report["runs"] = json::array();
  std::vector<std::string> artifacts;
  for (int s = 0; s < per_scene; ++s) {
    std::vector<const InstanceParsing*> preds;
    std::vector<const Scene*> truth;
    for (std::size_t k = 0; k < scenes.size(); ++k) {
      const auto& r = results[k * static_cast<std::size_t>(per_scene) + static_cast<std::size_t>(s)];
      preds.push_back(&r.parsing);
      truth.push_back(&scenes[k]);
    }
    json run = report_to_json(evaluate(preds, truth));
    run["seed"] = seeds[static_cast<std::size_t>(s)];
    run["diagnostics"] = json::array();
    for (std::size_t k = 0; k < scenes.size(); ++k) {
      const auto& r = results[k * static_cast<std::size_t>(per_scene) + static_cast<std::size_t>(s)];
      run["diagnostics"].push_back(diagnostics_json(r.diagnostics));
      if (!a.render.empty()) {
        const std::string stem = fs::path(a.scenes[k]).stem().string() + "_seed" + std::to_string(seeds[static_cast<std::size_t>(s)]);
        for (const auto& p : save_parsing(r.parsing, a.render, stem)) artifacts.push_back(p.string());
      }
    }
    report["runs"].push_back(std::move(run));
  }
  // Single-run reports also carry the metrics at top level.
  if (per_scene == 1)
    for (const auto& key : {"miou", "ap_p", "pcp", "pose_map"}) report[key] = report["runs"][0][key];
  if (!a.report.empty()) artifacts.push_back(a.report);
  report["artifacts"] = artifacts;

  const std::string text = report.dump(2);
  if (!a.report.empty()) write_json(a.report, report);
  std::cout << text << "\n";
  return kOk;
}

struct GradcheckArgs {
  int probes = 100;
  int size = 4;
  std::vector<std::uint64_t> seed;
  std::optional<double> tol;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (a.probes < 1 || a.size < 1) throw UsageError("--probes and --size must be >= 1");
  const double matcher_tol = a.tol.value_or(1e-3);
  const double warp_tol = a.tol.value_or(1e-4);
  bool ok = true;
  json out = json::array();
  for (std::uint64_t seed : seeds_or_default(a.seed)) {
    GradcheckOptions opt;
    opt.probes = a.probes;
    opt.max_size = a.size;
    opt.seed = seed;
    const auto w = gradcheck_warp(opt);
    const auto m = gradcheck_matcher(opt);
    const bool pass = w.max_rel_error <= warp_tol && m.max_rel_error <= matcher_tol;
    ok = ok && pass;
    std::printf("seed %llu: warp max rel err %.3e (tol %.1e), matcher max rel err %.3e (tol %.1e) -> %s\n",
                static_cast<unsigned long long>(seed), w.max_rel_error, warp_tol, m.max_rel_error, matcher_tol,
                pass ? "pass" : "FAIL");
    out.push_back({{"seed", seed},
                   {"warp", {{"probes", w.probes}, {"max_rel_error", w.max_rel_error}, {"tol", warp_tol}}},
                   {"matcher", {{"probes", m.probes}, {"max_rel_error", m.max_rel_error}, {"tol", matcher_tol}}},
                   {"pass", pass}});
  }
  std::cout << out.dump(2) << "\n";
  return ok ? kOk : kValidation;
}

struct BenchArgs {
  std::vector<std::string> sizes{"256x256"};
  std::vector<int> persons{1, 2, 4, 6, 8};
  int repeats = 10;
  std::string matcher = "pgd";
  std::vector<std::uint64_t> seed;
  std::string report;
};

int cmd_bench(const BenchArgs& a) {
  PipelineConfig cfg;
  try {
    cfg.matcher = parse_matcher(a.matcher);
  } catch (const InvalidInput& e) {
    throw UsageError(e.what());
  }
  if (a.repeats < 10) throw UsageError("--repeats must be >= 10");
  std::vector<std::pair<int, int>> sizes;
  for (const auto& s : a.sizes) sizes.push_back(parse_size(s));
  for (int p : a.persons)
    if (p < 0) throw UsageError("--persons entries must be >= 0");
  json out = json::array();
  for (std::uint64_t seed : seeds_or_default(a.seed))
    for (const auto& row : benchmark(sizes, a.persons, a.repeats, cfg, {0.0, 0.05, 0.0, 0}, seed)) {
      std::printf("%dx%d persons=%d median=%.2f ms\n", row.width, row.height, row.persons, row.median_ms);
      out.push_back({{"seed", seed}, {"width", row.width}, {"height", row.height}, {"persons", row.persons}, {"median_ms", row.median_ms}});
    }
  if (!a.report.empty()) write_json(a.report, {{"matcher", a.matcher}, {"repeats", a.repeats}, {"rows", out}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bottom-up multi-person part parsing toolkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic scene (JSON + PGF1 grids)");
  synth->add_option("--persons", sa.persons, "number of persons")->default_val(1);
  synth->add_option("--size", sa.size, "lattice size WxH")->default_val("256x256");
  synth->add_option("--seed", sa.seed, "generator seed (default: $PARTGRAPH_SEED or 0)");
  synth->add_option("--overlap", sa.overlap, "forbidden or allowed")->check(CLI::IsMember({"forbidden", "allowed"}));
  synth->add_option("--out", sa.out, "scene JSON path")->required();

  RunArgs ra;
  auto* run = app.add_subcommand("run", "run the pipeline on scene files and evaluate");
  run->add_option("--scene", ra.scenes, "scene JSON (repeatable)")->required();
  run->add_option("--matcher", ra.matcher, "hungarian, greedy_sorted, greedy_row or pgd")->default_val("pgd");
  run->add_option("--noise", ra.noise, "corruption, e.g. offset=3,heat=0.05,drop=0.1");
  run->add_option("--seed", ra.seed, "noise seed (repeatable; each seed reports separately)");
  run->add_option("--report", ra.report, "write the JSON report here");
  run->add_option("--render", ra.render, "directory for PGF1 grids and PPM renderings");
  run->add_option("--flows", ra.flows, "DSPF pyramid flows: zero or injected")->default_val("zero");
  run->add_option("--jobs", ra.jobs, "scene-level worker threads")->default_val(1);

  GradcheckArgs ga;
  double tol = 0.0;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference checks of warp_backward and matcher_backward");
  grad->add_option("--probes", ga.probes, "probes per suite")->default_val(100);
  grad->add_option("--size", ga.size, "largest matrix side / coarse lattice side")->default_val(4);
  grad->add_option("--seed", ga.seed, "probe seed (repeatable)");
  auto* tol_opt = grad->add_option("--tol", tol, "relative error tolerance (default 1e-3 matcher, 1e-4 warp)");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "median pipeline time per lattice size and person count");
  bench->add_option("--size", ba.sizes, "lattice size WxH (repeatable)");
  bench->add_option("--persons", ba.persons, "person counts")->delimiter(',');
  bench->add_option("--repeats", ba.repeats, "timed repetitions (>= 10)")->default_val(10);
  bench->add_option("--matcher", ba.matcher, "matcher")->default_val("pgd");
  bench->add_option("--seed", ba.seed, "scene seed (repeatable)");
  bench->add_option("--report", ba.report, "write the JSON rows here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  if (tol_opt->count()) ga.tol = tol;

  try {
    if (*synth) return cmd_synth(sa);
    if (*run) return cmd_run(ra);
    if (*grad) return cmd_gradcheck(ga);
    if (*bench) return cmd_bench(ba);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "load error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
  return kUsage;
}
