#pragma once

// Experiment orchestration: VPREC precision sweeps, MCA ensembles, the
// speed-up/accuracy pruning pipeline and the double-vs-mixed comparison.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mixprec/cg.hpp"
#include "mixprec/context.hpp"
#include "mixprec/mca.hpp"
#include "mixprec/roofline.hpp"
#include "mixprec/sem.hpp"

namespace mixprec {

/// Thrown for user configuration problems (unknown kernels, bad ranges).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace kernel {
/// Synthetic RHS normalisation ((1 + 2^-30) - 1) / 2^-30, exactly 1 in
/// binary64 and catastrophically cancelling at lower precision.
inline constexpr std::string_view cancel_probe = "cancel_probe";
}  // namespace kernel

using KernelSet = std::set<std::string, std::less<>>;

const KernelSet& known_kernels();
/// glsc3, add2s1, add2s2, ax, mxm, add2, gs, mask, solveM, cg.
const KernelSet& cg_loop_kernels();
void require_known(const KernelSet& kernels);

struct MeshSpec {
  int ex = 2, ey = 2, ez = 2, nx1 = 8;

  /// "ex,ey,ez,nx1"
  static MeshSpec parse(std::string_view text);
  Mesh build() const;
  std::string to_string() const;
};

/// Section kernels run under `backend`, everything else under IEEE.
ScopeMap section_scope(const KernelSet& kernels, const Backend& backend);

struct ProblemOptions {
  bool cancellation_probe = false;
};

/// Applies the cancel_probe normalisation to f in place.
void apply_cancellation_probe(std::span<double> f, Context& ctx);

struct SolveRun {
  CgResult result;
  OpCounters counters;
  double setup_seconds = 0.0;
  double solve_seconds = 0.0;
  std::optional<DefectKind> defect;
  std::string defect_message;

  bool converged() const { return !defect && result.trace.converged; }
};

/// Builds the RHS and solves under `scope`. Solver defects are captured in the
/// returned run instead of being thrown.
SolveRun run_solve(const Mesh& mesh, const CgConfig& cfg, const ScopeMap& scope,
                   std::uint64_t instance = 0, const ProblemOptions& options = {});

/// Runs fn(0..count-1) on a small worker pool; the first exception is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

struct SweepRow {
  int t = 0;
  double final_residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// One solve per t in [t_min, t_max], section kernels under Vprec(t, r).
/// Rows are in ascending t.
std::vector<SweepRow> sweep_vprec(const Mesh& mesh, const CgConfig& cfg, const KernelSet& section,
                                  int t_min, int t_max, int r,
                                  const ProblemOptions& options = {});

/// First t such that every row at or above it has converged and lies within
/// `factor` of the full-width (largest t) residual.
std::optional<int> plateau_onset(const std::vector<SweepRow>& rows, double factor = 10.0);

struct EnsembleResult {
  std::vector<CgTrace> traces;
  std::vector<bool> converged;
  /// Residual statistics per iteration over the iterations all runs reached.
  std::vector<SampleStats> per_iteration;
  /// Statistics of each run's last recorded residual.
  SampleStats final_residual;
  int converged_count = 0;

  std::size_t common_iterations() const { return per_iteration.size(); }
  double final_s2() const { return final_residual.s2.value_or(0.0); }
  bool all_converged() const { return converged_count == static_cast<int>(traces.size()); }
  std::vector<double> band_widths() const;
};

/// `runs` solves with the section under Mca(mca); run i uses stream
/// (seed, i), or stream (seed, 0) for every run when distinct_streams is off.
EnsembleResult mca_ensemble(const Mesh& mesh, const CgConfig& cfg, const KernelSet& section,
                            const McaConfig& mca, int runs, bool distinct_streams = true,
                            const ProblemOptions& options = {});

enum class Verdict { pruned_speedup, pruned_vprec, pruned_mca, candidate };
std::string_view to_string(Verdict v);

struct Section {
  std::string name;
  KernelSet kernels;
};

struct PipelineThresholds {
  double speedup = 1.2;
  double vprec_error = 1e-6;
  double mca_min_bits = 10.0;
  bool require_all_converged = true;
};

struct PipelineConfig {
  MeshSpec mesh;
  CgConfig cg;
  std::vector<Section> sections;
  PipelineThresholds thresholds;
  int mca_runs = 20;
  VprecFormat vprec{23, 8};
  McaConfig mca{McaMode::random_rounding, 23, 0};
  MachineModel machine = MachineModel::xeon_e5_2690_peaks();

  /// Default sections: "cg_loop" only.
  static PipelineConfig defaults();
  /// Throws ConfigError for unknown kernels, empty sections or bad thresholds.
  void validate() const;
  std::string to_json() const;
};

/// Raw per-section measurements; the verdict is a pure function of these and
/// the thresholds.
struct SectionMeasurement {
  double predicted_speedup = 0.0;
  std::optional<double> vprec_error;
  std::optional<bool> vprec_converged;
  std::optional<SampleStats> mca_final;
  std::optional<int> mca_converged;
  std::optional<int> mca_runs;
};

struct SectionReport {
  std::string section;
  SectionMeasurement measured;
  Verdict verdict = Verdict::candidate;
};

struct CandidateReport {
  double reference_residual = 0.0;
  int reference_iterations = 0;
  std::vector<SectionReport> sections;
  std::string to_json() const;
};

/// Memoises section measurements so threshold grids re-use expensive solves.
class PipelineCache {
 public:
  std::map<std::string, SectionMeasurement> measurements;
  std::optional<SolveRun> reference;
};

/// Speed-up check, then VPREC check, then MCA check; later checks are skipped
/// once a section is pruned.
CandidateReport pipeline(const PipelineConfig& cfg, PipelineCache* cache = nullptr);

/// Apply the pruning rules to existing measurements (nullopt where a later
/// check was never measured).
Verdict decide(const SectionMeasurement& m, const PipelineThresholds& thresholds);

struct ComparisonReport {
  CgTrace double_trace;
  CgTrace mixed_trace;
  AccuracyMetrics metrics;
  double whole_seconds_double = 0.0;
  double whole_seconds_mixed = 0.0;
  double solve_seconds_double = 0.0;
  double solve_seconds_mixed = 0.0;
  KernelCounters counters_double;
  KernelCounters counters_mixed;

  /// Candidate over baseline bytes, each divided by its iteration count.
  double bytes_per_iteration_ratio() const;
  double whole_gain() const { return gain(whole_seconds_double, whole_seconds_mixed); }
  double solve_gain() const { return gain(solve_seconds_double, solve_seconds_mixed); }
  std::string to_json() const;
};

/// Runs `baseline` and `candidate` variants `repeats` times each and reports
/// median timings, residual-history AE/MAE and traffic.
ComparisonReport compare(const MeshSpec& mesh, const CgConfig& cfg, int repeats = 5,
                         Variant baseline = Variant::double_precision,
                         Variant candidate = Variant::mixed);

/// FNV-1a 64-bit hash, hex encoded, of a canonical config string.
std::string config_hash(std::string_view canonical);

}  // namespace mixprec
