#include "mixprec/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include <json.hpp>

namespace mixprec {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

bool needs_probe(const std::vector<Section>& sections) {
  return std::any_of(sections.begin(), sections.end(), [](const Section& s) {
    return s.kernels.contains(kernel::cancel_probe);
  });
}

KernelCounters section_counters(const OpCounters& counters, const KernelSet& kernels) {
  KernelCounters sum;
  for (const auto& name : kernels) {
    if (const auto* c = counters.find(name)) sum += *c;
  }
  return sum;
}

nlohmann::json stats_json(const SampleStats& s) {
  nlohmann::json j{{"n", s.n}, {"mean", s.mean}, {"stddev", s.stddev}, {"min", s.min},
                   {"max", s.max}};
  j["s2"] = s.s2 ? nlohmann::json(*s.s2) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json counters_json(const KernelCounters& c) {
  return {{"flops", c.flops()}, {"bytes_read", c.bytes_read}, {"bytes_written", c.bytes_written}};
}

}  // namespace

const KernelSet& known_kernels() {
  static const KernelSet kernels{
      std::string(kernel::mxm),    std::string(kernel::add2),    std::string(kernel::ax),
      std::string(kernel::gs),     std::string(kernel::mask),    std::string(kernel::glsc3),
      std::string(kernel::add2s1), std::string(kernel::add2s2),  std::string(kernel::solve_m),
      std::string(kernel::cg),     std::string(kernel::init_rhs), std::string(kernel::cancel_probe)};
  return kernels;
}

const KernelSet& cg_loop_kernels() {
  static const KernelSet kernels{
      std::string(kernel::glsc3), std::string(kernel::add2s1), std::string(kernel::add2s2),
      std::string(kernel::ax),    std::string(kernel::mxm),    std::string(kernel::add2),
      std::string(kernel::gs),    std::string(kernel::mask),   std::string(kernel::solve_m),
      std::string(kernel::cg)};
  return kernels;
}

void require_known(const KernelSet& kernels) {
  for (const auto& name : kernels) {
    if (!known_kernels().contains(name)) throw ConfigError("unknown kernel '" + name + "'");
  }
}

MeshSpec MeshSpec::parse(std::string_view text) {
  MeshSpec spec;
  int* fields[] = {&spec.ex, &spec.ey, &spec.ez, &spec.nx1};
  std::size_t start = 0;
  for (int i = 0; i < 4; ++i) {
    const auto end = i == 3 ? text.size() : text.find(',', start);
    if (end == std::string_view::npos) throw ConfigError("mesh: expected ex,ey,ez,nx1");
    const auto token = text.substr(start, end - start);
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), *fields[i]);
    if (ec != std::errc{} || ptr != token.data() + token.size() || token.empty()) {
      throw ConfigError("mesh: bad field '" + std::string(token) + "'");
    }
    start = end + 1;
  }
  if (spec.ex < 1 || spec.ey < 1 || spec.ez < 1 || spec.nx1 < 2 || spec.nx1 > 32) {
    throw ConfigError("mesh: element counts must be >= 1 and nx1 in [2, 32]");
  }
  return spec;
}

Mesh MeshSpec::build() const { return setup_box_mesh(ex, ey, ez, nx1); }

std::string MeshSpec::to_string() const {
  return std::to_string(ex) + "," + std::to_string(ey) + "," + std::to_string(ez) + "," +
         std::to_string(nx1);
}

ScopeMap section_scope(const KernelSet& kernels, const Backend& backend) {
  ScopeMap scope;
  for (const auto& name : kernels) scope.per_kernel.emplace(name, backend);
  return scope;
}

void apply_cancellation_probe(std::span<double> f, Context& ctx) {
  constexpr double delta = 0x1p-30;
  ctx.run<double>(kernel::cancel_probe, [&](auto& ar) {
    ar.key_points(f.size());
    for (std::size_t q = 0; q < f.size(); ++q) {
      ar.at_point(q);
      const double scale = ar.div(ar.sub(ar.add(1.0, delta), 1.0), delta);
      f[q] = ar.mul(f[q], scale);
    }
  });
  ctx.charge_traffic(kernel::cancel_probe, sizeof(double) * f.size(), sizeof(double) * f.size());
}

SolveRun run_solve(const Mesh& mesh, const CgConfig& cfg, const ScopeMap& scope,
                   std::uint64_t instance, const ProblemOptions& options) {
  SolveRun run;
  Context ctx(scope, instance);
  const auto setup_start = Clock::now();
  auto f = make_rhs(mesh, ctx);
  if (options.cancellation_probe) apply_cancellation_probe(f, ctx);
  run.setup_seconds = seconds_since(setup_start);

  const auto solve_start = Clock::now();
  try {
    run.result = cg_solve(mesh, f, cfg, ctx);
  } catch (const SolverDefect& defect) {
    run.defect = defect.kind();
    run.defect_message = defect.what();
    run.result.trace = defect.trace();
  }
  run.solve_seconds = seconds_since(solve_start);
  run.counters = ctx.counters();
  return run;
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers =
      std::min<std::size_t>(count, std::max(1U, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<SweepRow> sweep_vprec(const Mesh& mesh, const CgConfig& cfg, const KernelSet& section,
                                  int t_min, int t_max, int r, const ProblemOptions& options) {
  require_known(section);
  if (t_min < VprecFormat::kMinMantissa || t_max > VprecFormat::kMaxMantissa || t_min > t_max) {
    throw ConfigError("sweep: t range must lie within [1, 52]");
  }
  std::vector<SweepRow> rows(static_cast<std::size_t>(t_max - t_min + 1));
  parallel_for(rows.size(), [&](std::size_t i) {
    const int t = t_min + static_cast<int>(i);
    const auto run = run_solve(mesh, cfg, section_scope(section, Backend::vprec({t, r})), 0, options);
    rows[i] = {t, run.result.trace.final_residual(), run.result.trace.iterations, run.converged()};
  });
  return rows;
}

std::optional<int> plateau_onset(const std::vector<SweepRow>& rows, double factor) {
  if (rows.empty()) return std::nullopt;
  auto sorted = rows;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  const double reference = sorted.back().final_residual;
  std::optional<int> onset;
  for (auto it = sorted.rbegin(); it != sorted.rend(); ++it) {
    const bool stable = it->converged && it->final_residual <= factor * reference;
    if (!stable) break;
    onset = it->t;
  }
  return onset;
}

std::vector<double> EnsembleResult::band_widths() const {
  std::vector<double> widths;
  widths.reserve(per_iteration.size());
  for (const auto& s : per_iteration) widths.push_back(s.max - s.min);
  return widths;
}

EnsembleResult mca_ensemble(const Mesh& mesh, const CgConfig& cfg, const KernelSet& section,
                            const McaConfig& mca, int runs, bool distinct_streams,
                            const ProblemOptions& options) {
  require_known(section);
  if (runs < 2) throw ConfigError("mca ensemble: need at least two runs");
  EnsembleResult result;
  result.traces.resize(runs);
  std::vector<char> converged(runs, 0);
  const auto scope = section_scope(section, Backend::mca(mca));
  parallel_for(static_cast<std::size_t>(runs), [&](std::size_t i) {
    const auto run = run_solve(mesh, cfg, scope, distinct_streams ? i : 0, options);
    result.traces[i] = run.result.trace;
    converged[i] = run.converged() ? 1 : 0;
  });
  result.converged.assign(converged.begin(), converged.end());
  result.converged_count = static_cast<int>(std::count(converged.begin(), converged.end(), 1));

  std::size_t common = std::numeric_limits<std::size_t>::max();
  for (const auto& trace : result.traces) common = std::min(common, trace.records.size());
  std::vector<double> samples(runs);
  for (std::size_t k = 0; k < common; ++k) {
    for (int i = 0; i < runs; ++i) samples[i] = result.traces[i].records[k].residual;
    result.per_iteration.push_back(summarize(samples));
  }
  if (common > 0) {
    for (int i = 0; i < runs; ++i) samples[i] = result.traces[i].final_residual();
    result.final_residual = summarize(samples);
  } else {
    result.final_residual.n = static_cast<std::size_t>(runs);
    result.final_residual.s2 = 0.0;
  }
  return result;
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::pruned_speedup: return "pruned-speedup";
    case Verdict::pruned_vprec: return "pruned-vprec";
    case Verdict::pruned_mca: return "pruned-mca";
    case Verdict::candidate: return "candidate";
  }
  return "candidate";
}

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig cfg;
  cfg.sections.push_back({"cg_loop", cg_loop_kernels()});
  return cfg;
}

void PipelineConfig::validate() const {
  if (sections.empty()) throw ConfigError("pipeline: no sections");
  for (const auto& s : sections) {
    if (s.kernels.empty()) throw ConfigError("pipeline: section '" + s.name + "' is empty");
    require_known(s.kernels);
  }
  if (!(thresholds.speedup > 0.0) || !(thresholds.vprec_error > 0.0) ||
      !(thresholds.mca_min_bits > 0.0)) {
    throw ConfigError("pipeline: thresholds must be positive");
  }
  if (mca_runs < 2) throw ConfigError("pipeline: mca_runs must be >= 2");
  try {
    cg.validate();
    machine.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string PipelineConfig::to_json() const {
  nlohmann::json j;
  j["mesh"] = mesh.to_string();
  j["cg"] = {{"miter", cg.miter}, {"tol", cg.tol}, {"precond", to_string(cg.precond)}};
  for (const auto& s : sections) j["sections"][s.name] = s.kernels;
  j["thresholds"] = {{"speedup", thresholds.speedup},
                     {"vprec_error", thresholds.vprec_error},
                     {"mca_min_bits", thresholds.mca_min_bits},
                     {"require_all_converged", thresholds.require_all_converged}};
  j["mca_runs"] = mca_runs;
  j["vprec"] = vprec.to_string();
  j["mca"] = Backend::mca(mca).to_string();
  for (const auto& roof : machine.compute) {
    j["machine"]["compute"].push_back(
        {{"name", roof.name}, {"class", to_string(roof.precision)}, {"gflops", roof.gflops}});
  }
  for (const auto& roof : machine.memory) {
    j["machine"]["memory"].push_back({{"name", roof.name}, {"gbps", roof.gbps}});
  }
  return j.dump();
}

Verdict decide(const SectionMeasurement& m, const PipelineThresholds& thresholds) {
  if (m.predicted_speedup < thresholds.speedup) return Verdict::pruned_speedup;
  if (!m.vprec_error || !m.vprec_converged) return Verdict::pruned_vprec;
  if (!*m.vprec_converged || !(*m.vprec_error <= thresholds.vprec_error)) {
    return Verdict::pruned_vprec;
  }
  if (!m.mca_final || !m.mca_converged || !m.mca_runs) return Verdict::pruned_mca;
  if (thresholds.require_all_converged && *m.mca_converged < *m.mca_runs) {
    return Verdict::pruned_mca;
  }
  if (!(m.mca_final->s2.value_or(0.0) >= thresholds.mca_min_bits)) return Verdict::pruned_mca;
  return Verdict::candidate;
}

CandidateReport pipeline(const PipelineConfig& cfg, PipelineCache* cache) {
  cfg.validate();
  PipelineCache local;
  PipelineCache& memo = cache != nullptr ? *cache : local;

  const Mesh mesh = cfg.mesh.build();
  const ProblemOptions options{needs_probe(cfg.sections)};
  if (!memo.reference) memo.reference = run_solve(mesh, cfg.cg, ScopeMap{}, 0, options);
  const SolveRun& reference = *memo.reference;
  if (reference.defect) throw SolverDefect(*reference.defect, reference.defect_message,
                                           reference.result.trace);

  CandidateReport report;
  report.reference_residual = reference.result.trace.final_residual();
  report.reference_iterations = reference.result.trace.iterations;

  for (const auto& section : cfg.sections) {
    auto [it, inserted] = memo.measurements.try_emplace(section.name);
    SectionMeasurement& m = it->second;
    if (inserted) {
      const auto profile =
          KernelProfile::from_counters(section.name, section_counters(reference.counters,
                                                                       section.kernels));
      m.predicted_speedup = profile.bytes > 0.0 ? predict_precision_gain(profile, cfg.machine)
                                                : 1.0;
    }
    SectionReport out{section.name, m, Verdict::candidate};

    if (m.predicted_speedup < cfg.thresholds.speedup) {
      out.verdict = Verdict::pruned_speedup;
      report.sections.push_back(out);
      continue;
    }

    if (!m.vprec_error) {
      const auto run = run_solve(mesh, cfg.cg, section_scope(section.kernels, Backend::vprec(cfg.vprec)),
                                 0, options);
      m.vprec_converged = run.converged();
      m.vprec_error = std::fabs(run.result.trace.final_residual() - report.reference_residual);
      if (std::isnan(*m.vprec_error)) m.vprec_error = std::numeric_limits<double>::infinity();
    }
    if (!*m.vprec_converged || !(*m.vprec_error <= cfg.thresholds.vprec_error)) {
      out.measured = m;
      out.verdict = Verdict::pruned_vprec;
      report.sections.push_back(out);
      continue;
    }

    if (!m.mca_final) {
      const auto ensemble =
          mca_ensemble(mesh, cfg.cg, section.kernels, cfg.mca, cfg.mca_runs, true, options);
      m.mca_final = ensemble.final_residual;
      m.mca_converged = ensemble.converged_count;
      m.mca_runs = cfg.mca_runs;
    }
    out.measured = m;
    out.verdict = decide(m, cfg.thresholds);
    report.sections.push_back(out);
  }
  return report;
}

std::string CandidateReport::to_json() const {
  nlohmann::json j;
  j["reference"] = {{"final_residual", reference_residual}, {"iterations", reference_iterations}};
  j["sections"] = nlohmann::json::array();
  for (const auto& s : sections) {
    nlohmann::json e{{"section", s.section},
                     {"verdict", to_string(s.verdict)},
                     {"predicted_speedup", s.measured.predicted_speedup}};
    e["vprec_error"] = s.measured.vprec_error ? nlohmann::json(*s.measured.vprec_error) : nullptr;
    e["vprec_converged"] =
        s.measured.vprec_converged ? nlohmann::json(*s.measured.vprec_converged) : nullptr;
    e["mca_final"] = s.measured.mca_final ? stats_json(*s.measured.mca_final) : nullptr;
    e["mca_converged"] =
        s.measured.mca_converged ? nlohmann::json(*s.measured.mca_converged) : nullptr;
    e["mca_runs"] = s.measured.mca_runs ? nlohmann::json(*s.measured.mca_runs) : nullptr;
    j["sections"].push_back(e);
  }
  return j.dump(2);
}

ComparisonReport compare(const MeshSpec& spec, const CgConfig& cfg, int repeats, Variant baseline,
                         Variant candidate) {
  if (repeats < 1) throw ConfigError("compare: repeats must be >= 1");
  ComparisonReport report;
  const auto measure = [&](Variant variant, CgTrace& trace, KernelCounters& counters,
                           double& whole, double& solve) {
    CgConfig run_cfg = cfg;
    run_cfg.variant = variant;
    std::vector<double> whole_times, solve_times;
    for (int rep = 0; rep < repeats; ++rep) {
      const auto start = Clock::now();
      const Mesh mesh = spec.build();
      auto run = run_solve(mesh, run_cfg, ScopeMap{});
      whole_times.push_back(seconds_since(start));
      solve_times.push_back(run.solve_seconds);
      if (run.defect) {
        throw SolverDefect(*run.defect, run.defect_message, run.result.trace);
      }
      if (rep == 0) {
        trace = run.result.trace;
        counters = run.counters.total();
      }
    }
    whole = median(whole_times);
    solve = median(solve_times);
  };
  measure(baseline, report.double_trace, report.counters_double, report.whole_seconds_double,
          report.solve_seconds_double);
  measure(candidate, report.mixed_trace, report.counters_mixed, report.whole_seconds_mixed,
          report.solve_seconds_mixed);
  report.metrics = accuracy_metrics(report.mixed_trace, report.double_trace);
  return report;
}

double ComparisonReport::bytes_per_iteration_ratio() const {
  const double per_double = static_cast<double>(counters_double.bytes()) /
                            std::max(1, double_trace.iterations);
  const double per_mixed = static_cast<double>(counters_mixed.bytes()) /
                           std::max(1, mixed_trace.iterations);
  return per_double > 0.0 ? per_mixed / per_double : 0.0;
}

std::string ComparisonReport::to_json() const {
  nlohmann::json j;
  j["iterations"] = {{"double", double_trace.iterations}, {"mixed", mixed_trace.iterations}};
  j["converged"] = {{"double", double_trace.converged}, {"mixed", mixed_trace.converged}};
  j["final_residual"] = {{"double", double_trace.final_residual()},
                         {"mixed", mixed_trace.final_residual()}};
  j["mae"] = metrics.mae;
  j["ae_final"] = metrics.ae.empty() ? 0.0 : metrics.ae.back();
  j["whole_seconds"] = {{"double", whole_seconds_double}, {"mixed", whole_seconds_mixed}};
  j["solve_seconds"] = {{"double", solve_seconds_double}, {"mixed", solve_seconds_mixed}};
  j["gain_percent"] = {{"whole", 100.0 * whole_gain()}, {"solve", 100.0 * solve_gain()}};
  j["counters"] = {{"double", counters_json(counters_double)},
                   {"mixed", counters_json(counters_mixed)}};
  const double bytes_d = static_cast<double>(counters_double.bytes());
  j["byte_ratio"] = bytes_d > 0.0 ? static_cast<double>(counters_mixed.bytes()) / bytes_d : 0.0;
  j["byte_ratio_per_iteration"] = bytes_per_iteration_ratio();
  return j.dump(2);
}

std::string config_hash(std::string_view canonical) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[i] = digits[h & 0xf];
  return out;
}

}  // namespace mixprec
