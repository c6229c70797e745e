#pragma once

// Analytical roofline: attainable performance is the lesser of the compute
// peak for a precision class and every bandwidth roof times the arithmetic
// intensity.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mixprec/context.hpp"

namespace mixprec {

enum class PrecisionClass { scalar, dp_vector, sp_vector };

std::string_view to_string(PrecisionClass c);
PrecisionClass parse_precision_class(std::string_view text);

struct ComputeRoof {
  std::string name;
  PrecisionClass precision;
  double gflops;
};

struct MemoryRoof {
  std::string name;
  double gbps;
};

struct MachineModel {
  std::vector<ComputeRoof> compute;
  std::vector<MemoryRoof> memory;

  /// Throws std::invalid_argument on non-positive roofs or peaks out of order
  /// (sp_vector >= dp_vector >= scalar).
  void validate() const;

  const ComputeRoof& compute_roof(PrecisionClass c) const;

  static MachineModel from_json(std::string_view text);
  static MachineModel load(const std::string& path);

  /// Compute peaks of the Xeon E5-2690 core used for the Nekbone study
  /// (SP 24.06, DP 12.58, scalar 3.17 GFLOPS) with no bandwidth roofs.
  static MachineModel xeon_e5_2690_peaks();
};

struct KernelProfile {
  std::string name;
  double flops = 0.0;
  double bytes = 0.0;
  std::optional<double> wall_seconds;

  static KernelProfile from_counters(std::string name, const KernelCounters& c);
};

/// flops / bytes; throws std::invalid_argument when bytes <= 0.
double arithmetic_intensity(const KernelProfile& p);

/// Same flops at half the element width.
KernelProfile to_single_storage(const KernelProfile& p);

struct Attainable {
  double gflops;
  std::string roof;
  bool compute_bound;
};

/// min(class peak, min_m bandwidth_m * ai); ties go to the compute roof.
Attainable attainable(double ai, PrecisionClass c, const MachineModel& m);

struct Classification {
  std::string label;  // "<memory roof> memory bound" or "<compute roof> bound"
  Attainable bound;
  std::optional<double> achieved_gflops;
  std::optional<double> fraction_of_roof;
};

Classification classify(const KernelProfile& p, PrecisionClass c, const MachineModel& m);

/// attainable_sp(2 ai) / attainable_dp(ai) for a binary64 profile.
double predict_precision_gain(const KernelProfile& p, const MachineModel& m);

}  // namespace mixprec
