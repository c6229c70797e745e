// mixprec: command-line front end for the solver experiments.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mixprec/harness.hpp"

namespace fs = std::filesystem;
using namespace mixprec;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDefect = 3;

struct CommonOptions {
  std::string mesh = "2,2,2,8";
  double tol = 1e-10;
  int miter = 1000;
  std::string precond = "none";
  std::string scope_file;
  std::string machine_file;
  std::optional<std::uint64_t> seed;
  int runs = 20;
  std::string out = ".";
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--mesh", o.mesh, "ex,ey,ez,nx1")->capture_default_str();
  cmd->add_option("--tol", o.tol, "residual tolerance")->capture_default_str();
  cmd->add_option("--miter", o.miter, "maximum CG iterations")->capture_default_str();
  cmd->add_option("--precond", o.precond, "none or jacobi")
      ->check(CLI::IsMember({"none", "jacobi"}))
      ->capture_default_str();
  cmd->add_option("--scope", o.scope_file, "scope JSON file");
  cmd->add_option("--machine", o.machine_file, "machine model JSON file");
  cmd->add_option("--seed", o.seed, "MCA seed");
  cmd->add_option("--runs", o.runs, "ensemble size")->capture_default_str();
  cmd->add_option("--out", o.out, "output directory")->capture_default_str();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

CgConfig cg_config(const CommonOptions& o) {
  CgConfig cfg;
  cfg.tol = o.tol;
  cfg.miter = o.miter;
  cfg.precond = parse_preconditioner(o.precond);
  cfg.validate();
  return cfg;
}

ScopeMap load_scope(const CommonOptions& o) {
  ScopeMap scope = o.scope_file.empty() ? ScopeMap{} : ScopeMap::from_json(read_file(o.scope_file));
  if (o.seed) {
    const auto reseed = [&](Backend& b) {
      if (b.kind() != BackendKind::mca) return;
      const auto& m = b.mca_config();
      b = Backend::mca(McaConfig(m.mode, m.t, *o.seed));
    };
    reseed(scope.default_backend);
    for (auto& [name, backend] : scope.per_kernel) reseed(backend);
  }
  KernelSet named;
  for (const auto& [name, backend] : scope.per_kernel) named.insert(name);
  named.insert(scope.include.begin(), scope.include.end());
  named.insert(scope.exclude.begin(), scope.exclude.end());
  require_known(named);
  return scope;
}

MachineModel load_machine(const CommonOptions& o) {
  return o.machine_file.empty() ? MachineModel::xeon_e5_2690_peaks()
                                : MachineModel::load(o.machine_file);
}

KernelSet parse_kernel_list(const std::string& text) {
  if (text == "cg_loop") return cg_loop_kernels();
  KernelSet kernels;
  std::stringstream in(text);
  for (std::string name; std::getline(in, name, ',');) {
    if (!name.empty()) kernels.insert(name);
  }
  if (kernels.empty()) throw ConfigError("empty kernel list");
  require_known(kernels);
  return kernels;
}

// Output files carry the hash of the canonical run config on their first line.
class Output {
 public:
  Output(const std::string& dir, nlohmann::json config) : dir_(dir) {
    fs::create_directories(dir_);
    const auto canonical = config.dump();
    hash_ = config_hash(canonical);
    config["config_hash"] = hash_;
    write_raw("config.json", config.dump(2) + "\n");
  }

  const std::string& hash() const { return hash_; }

  void write_csv(const std::string& name, const std::string& body) const {
    write_raw(name, "# config_hash=" + hash_ + "\n" + body);
  }
  void write_json(const std::string& name, nlohmann::json doc) const {
    doc["config_hash"] = hash_;
    write_raw(name, doc.dump(2) + "\n");
  }

 private:
  void write_raw(const std::string& name, const std::string& body) const {
    std::ofstream out(dir_ / name);
    if (!out) throw ConfigError("cannot write '" + (dir_ / name).string() + "'");
    out << body;
  }

  fs::path dir_;
  std::string hash_;
};

nlohmann::json base_config(const std::string& command, const CommonOptions& o) {
  return {{"command", command},
          {"mesh", MeshSpec::parse(o.mesh).to_string()},
          {"tol", o.tol},
          {"miter", o.miter},
          {"precond", o.precond}};
}

nlohmann::json stats_json(const SampleStats& s) {
  nlohmann::json j{{"n", s.n},     {"mean", s.mean}, {"stddev", s.stddev},
                   {"min", s.min}, {"max", s.max}};
  j["s2"] = s.s2 ? nlohmann::json(*s.s2) : nlohmann::json(nullptr);
  return j;
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

int cmd_solve(const CommonOptions& o, const std::string& variant_name) {
  auto cfg = cg_config(o);
  cfg.variant = parse_variant(variant_name);
  const auto scope = load_scope(o);
  const auto spec = MeshSpec::parse(o.mesh);
  auto config = base_config("solve", o);
  config["variant"] = variant_name;
  config["scope"] = nlohmann::json::parse(scope.to_json());
  const Output out(o.out, config);

  const Mesh mesh = spec.build();
  const auto run = run_solve(mesh, cfg, scope);
  const auto total = run.counters.total();
  const auto& trace = run.result.trace;

  out.write_csv("trace.csv", trace.to_csv());
  out.write_csv("counters.csv", run.counters.to_csv());
  nlohmann::json summary{{"variant", variant_name},
                         {"iterations", trace.iterations},
                         {"converged", run.converged()},
                         {"final_residual", trace.final_residual()},
                         {"wall_seconds", run.setup_seconds + run.solve_seconds},
                         {"bytes_read", total.bytes_read},
                         {"bytes_written", total.bytes_written},
                         {"flops", total.flops()}};
  if (run.defect) summary["defect"] = run.defect_message;
  out.write_json("summary.json", summary);
  std::cout << summary.dump(2) << "\n";
  if (run.defect) {
    std::cerr << "mixprec: " << run.defect_message << "\n";
    return kExitDefect;
  }
  return 0;
}

int cmd_sweep(const CommonOptions& o, int t_min, int t_max, int r, const std::string& section) {
  const auto cfg = cg_config(o);
  const auto kernels = parse_kernel_list(section);
  auto config = base_config("sweep-vprec", o);
  config["t_min"] = t_min;
  config["t_max"] = t_max;
  config["r"] = r;
  config["section"] = kernels;
  const Output out(o.out, config);

  const Mesh mesh = MeshSpec::parse(o.mesh).build();
  const ProblemOptions options{kernels.contains(kernel::cancel_probe)};
  const auto rows = sweep_vprec(mesh, cfg, kernels, t_min, t_max, r, options);
  std::ostringstream csv;
  csv << "t,final_residual,iterations,converged\n";
  for (const auto& row : rows) {
    csv << row.t << ',' << fmt(row.final_residual) << ',' << row.iterations << ','
        << (row.converged ? 1 : 0) << '\n';
  }
  out.write_csv("sweep.csv", csv.str());
  std::cout << csv.str();
  if (const auto onset = plateau_onset(rows)) {
    std::cout << "plateau onset t=" << *onset << "\n";
  } else {
    std::cout << "no plateau\n";
  }
  return 0;
}

int cmd_ensemble(const CommonOptions& o, const std::string& mode, int t, const std::string& section) {
  const auto cfg = cg_config(o);
  const auto kernels = parse_kernel_list(section);
  const McaConfig mca(mode == "full" ? McaMode::full : McaMode::random_rounding, t,
                      o.seed.value_or(0));
  auto config = base_config("mca-ensemble", o);
  config["mca"] = Backend::mca(mca).to_string();
  config["runs"] = o.runs;
  config["section"] = kernels;
  const Output out(o.out, config);

  const Mesh mesh = MeshSpec::parse(o.mesh).build();
  const ProblemOptions options{kernels.contains(kernel::cancel_probe)};
  const auto ens = mca_ensemble(mesh, cfg, kernels, mca, o.runs, true, options);

  std::ostringstream runs_csv;
  runs_csv << "iteration,run_id,residual\n";
  for (std::size_t i = 0; i < ens.traces.size(); ++i) {
    for (const auto& rec : ens.traces[i].records) {
      runs_csv << rec.iteration << ',' << i << ',' << fmt(rec.residual) << '\n';
    }
  }
  out.write_csv("ensemble.csv", runs_csv.str());

  std::ostringstream summary_csv;
  summary_csv << "iteration,mean,min,max,stddev,s2\n";
  for (std::size_t k = 0; k < ens.per_iteration.size(); ++k) {
    const auto& s = ens.per_iteration[k];
    summary_csv << k + 1 << ',' << fmt(s.mean) << ',' << fmt(s.min) << ',' << fmt(s.max) << ','
                << fmt(s.stddev) << ',' << fmt(s.s2.value_or(0.0)) << '\n';
  }
  out.write_csv("ensemble_summary.csv", summary_csv.str());

  nlohmann::json final{{"runs", o.runs},
                       {"converged", ens.converged_count},
                       {"common_iterations", ens.common_iterations()},
                       {"final_residual", stats_json(ens.final_residual)}};
  out.write_json("ensemble.json", final);
  std::cout << final.dump(2) << "\n";
  return 0;
}

int cmd_roofline(const CommonOptions& o) {
  const auto cfg = cg_config(o);
  const auto machine = load_machine(o);
  auto config = base_config("roofline", o);
  config["machine"] = o.machine_file.empty() ? "xeon_e5_2690_peaks" : o.machine_file;
  const Output out(o.out, config);

  const Mesh mesh = MeshSpec::parse(o.mesh).build();
  const auto run = run_solve(mesh, cfg, ScopeMap{});
  if (run.defect) {
    std::cerr << "mixprec: " << run.defect_message << "\n";
    return kExitDefect;
  }
  std::ostringstream csv;
  csv << "kernel,ai,attainable_gflops,binding_roof,predicted_sp_speedup\n";
  for (const auto& [name, counters] : run.counters.kernels()) {
    const auto profile = KernelProfile::from_counters(name, counters);
    if (!(profile.bytes > 0.0)) continue;
    const double ai = arithmetic_intensity(profile);
    const auto bound = attainable(ai, PrecisionClass::dp_vector, machine);
    csv << name << ',' << fmt(ai) << ',' << fmt(bound.gflops) << ',' << bound.roof << ','
        << fmt(predict_precision_gain(profile, machine)) << '\n';
  }
  out.write_csv("roofline.csv", csv.str());
  std::cout << csv.str();
  return 0;
}

Section parse_section(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("section must be name=kernel,kernel,...");
  }
  return {text.substr(0, eq), parse_kernel_list(text.substr(eq + 1))};
}

int cmd_pipeline(const CommonOptions& o, const std::vector<std::string>& sections,
                 const PipelineThresholds& thresholds, const std::string& vprec,
                 const std::string& mca_mode, int mca_t) {
  auto cfg = PipelineConfig::defaults();
  cfg.mesh = MeshSpec::parse(o.mesh);
  cfg.cg = cg_config(o);
  if (!sections.empty()) {
    cfg.sections.clear();
    for (const auto& s : sections) cfg.sections.push_back(parse_section(s));
  }
  cfg.thresholds = thresholds;
  cfg.mca_runs = o.runs;
  cfg.vprec = VprecFormat::parse(vprec);
  cfg.mca = McaConfig(mca_mode == "full" ? McaMode::full : McaMode::random_rounding, mca_t,
                      o.seed.value_or(0));
  cfg.machine = load_machine(o);
  cfg.validate();

  auto config = nlohmann::json::parse(cfg.to_json());
  config["command"] = "pipeline";
  const Output out(o.out, config);
  const auto report = pipeline(cfg);
  out.write_json("candidates.json", nlohmann::json::parse(report.to_json()));
  std::cout << report.to_json() << "\n";
  return 0;
}

int cmd_compare(const CommonOptions& o, int repeats) {
  const auto cfg = cg_config(o);
  auto config = base_config("compare", o);
  config["repeats"] = repeats;
  const Output out(o.out, config);

  const auto report = compare(MeshSpec::parse(o.mesh), cfg, repeats);
  std::ostringstream csv;
  csv << "iteration,residual_double,residual_mixed,ae\n";
  for (std::size_t k = 0; k < report.metrics.ae.size(); ++k) {
    csv << k + 1 << ',' << fmt(report.double_trace.records[k].residual) << ','
        << fmt(report.mixed_trace.records[k].residual) << ',' << fmt(report.metrics.ae[k]) << '\n';
  }
  out.write_csv("compare.csv", csv.str());
  out.write_json("compare.json", nlohmann::json::parse(report.to_json()));
  std::cout << report.to_json() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-precision CG experiments on a spectral-element Poisson solver"};
  app.require_subcommand(1);

  CommonOptions common;

  auto* solve = app.add_subcommand("solve", "single CG solve with trace and counters");
  add_common(solve, common);
  std::string variant = "double";
  solve->add_option("--variant", variant, "double, single or mixed")
      ->check(CLI::IsMember({"double", "single", "mixed"}))
      ->capture_default_str();

  auto* sweep = app.add_subcommand("sweep-vprec", "final residual across VPREC mantissa widths");
  add_common(sweep, common);
  int t_min = 3, t_max = 52, r = 11;
  std::string section = "cg_loop";
  sweep->add_option("--t-min", t_min)->capture_default_str();
  sweep->add_option("--t-max", t_max)->capture_default_str();
  sweep->add_option("--r", r, "exponent bits")->capture_default_str();
  sweep->add_option("--section", section, "cg_loop or a comma list of kernels")
      ->capture_default_str();

  auto* ensemble = app.add_subcommand("mca-ensemble", "MCA ensemble of CG solves");
  add_common(ensemble, common);
  std::string mode = "rr";
  int mca_t = 23;
  ensemble->add_option("--mode", mode)->check(CLI::IsMember({"rr", "full"}))->capture_default_str();
  ensemble->add_option("--t", mca_t, "virtual precision")->capture_default_str();
  ensemble->add_option("--section", section)->capture_default_str();

  auto* roofline = app.add_subcommand("roofline", "per-kernel roofline placement");
  add_common(roofline, common);

  auto* pipe = app.add_subcommand("pipeline", "speed-up and accuracy pruning of code sections");
  add_common(pipe, common);
  std::vector<std::string> sections;
  PipelineThresholds thresholds;
  std::string vprec = "t23r8";
  pipe->add_option("--section", sections, "name=kernel,kernel,... (repeatable)");
  pipe->add_option("--speedup", thresholds.speedup)->capture_default_str();
  pipe->add_option("--vprec-error", thresholds.vprec_error)->capture_default_str();
  pipe->add_option("--mca-bits", thresholds.mca_min_bits)->capture_default_str();
  pipe->add_option("--vprec", vprec, "VPREC format")->capture_default_str();
  pipe->add_option("--mode", mode)->check(CLI::IsMember({"rr", "full"}))->capture_default_str();
  pipe->add_option("--t", mca_t, "MCA virtual precision")->capture_default_str();

  auto* cmp = app.add_subcommand("compare", "double versus mixed variant");
  add_common(cmp, common);
  int repeats = 5;
  cmp->add_option("--repeats", repeats)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*solve) return cmd_solve(common, variant);
    if (*sweep) return cmd_sweep(common, t_min, t_max, r, section);
    if (*ensemble) return cmd_ensemble(common, mode, mca_t, section);
    if (*roofline) return cmd_roofline(common);
    if (*pipe) return cmd_pipeline(common, sections, thresholds, vprec, mode, mca_t);
    if (*cmp) return cmd_compare(common, repeats);
  } catch (const SolverDefect& e) {
    std::cerr << "mixprec: solver defect: " << e.what() << "\n";
    return kExitDefect;
  } catch (const std::invalid_argument& e) {
    std::cerr << "mixprec: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::logic_error& e) {
    // e.g. an emulation backend routed onto binary32 storage
    std::cerr << "mixprec: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "mixprec: " << e.what() << "\n";
    return 1;
  }
  return kExitConfig;
}
