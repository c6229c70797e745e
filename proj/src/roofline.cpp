#include "mixprec/roofline.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace mixprec {

std::string_view to_string(PrecisionClass c) {
  switch (c) {
    case PrecisionClass::scalar: return "scalar";
    case PrecisionClass::dp_vector: return "dp_vector";
    case PrecisionClass::sp_vector: return "sp_vector";
  }
  return "scalar";
}

PrecisionClass parse_precision_class(std::string_view text) {
  if (text == "scalar") return PrecisionClass::scalar;
  if (text == "dp_vector") return PrecisionClass::dp_vector;
  if (text == "sp_vector") return PrecisionClass::sp_vector;
  throw std::invalid_argument("machine: unknown precision class '" + std::string(text) + "'");
}

void MachineModel::validate() const {
  if (compute.empty()) throw std::invalid_argument("machine: no compute roofs");
  for (const auto& roof : compute) {
    if (!(roof.gflops > 0.0)) {
      throw std::invalid_argument("machine: compute roof '" + roof.name + "' must be positive");
    }
  }
  for (const auto& roof : memory) {
    if (!(roof.gbps > 0.0)) {
      throw std::invalid_argument("machine: memory roof '" + roof.name + "' must be positive");
    }
  }
  const auto peak = [&](PrecisionClass c) -> std::optional<double> {
    for (const auto& roof : compute) {
      if (roof.precision == c) return roof.gflops;
    }
    return std::nullopt;
  };
  const auto sp = peak(PrecisionClass::sp_vector);
  const auto dp = peak(PrecisionClass::dp_vector);
  const auto sc = peak(PrecisionClass::scalar);
  if ((sp && dp && *sp < *dp) || (dp && sc && *dp < *sc) || (sp && sc && *sp < *sc)) {
    throw std::invalid_argument("machine: peaks must satisfy sp_vector >= dp_vector >= scalar");
  }
}

const ComputeRoof& MachineModel::compute_roof(PrecisionClass c) const {
  const ComputeRoof* best = nullptr;
  for (const auto& roof : compute) {
    if (roof.precision == c && (best == nullptr || roof.gflops > best->gflops)) best = &roof;
  }
  if (best == nullptr) {
    throw std::invalid_argument("machine: no compute roof for class " + std::string(to_string(c)));
  }
  return *best;
}

MachineModel MachineModel::from_json(std::string_view text) {
  MachineModel model;
  try {
    const auto doc = nlohmann::json::parse(text);
    for (const auto& entry : doc.at("compute")) {
      model.compute.push_back({entry.at("name").get<std::string>(),
                               parse_precision_class(entry.at("class").get<std::string>()),
                               entry.at("gflops").get<double>()});
    }
    if (doc.contains("memory")) {
      for (const auto& entry : doc.at("memory")) {
        model.memory.push_back({entry.at("name").get<std::string>(), entry.at("gbps").get<double>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("machine: ") + e.what());
  }
  model.validate();
  return model;
}

MachineModel MachineModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("machine: cannot open '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

MachineModel MachineModel::xeon_e5_2690_peaks() {
  MachineModel model;
  model.compute = {{"SP Vector Add", PrecisionClass::sp_vector, 24.06},
                   {"DP Vector Add", PrecisionClass::dp_vector, 12.58},
                   {"Scalar Add", PrecisionClass::scalar, 3.17}};
  return model;
}

KernelProfile KernelProfile::from_counters(std::string name, const KernelCounters& c) {
  return {std::move(name), static_cast<double>(c.flops()), static_cast<double>(c.bytes()),
          std::nullopt};
}

double arithmetic_intensity(const KernelProfile& p) {
  if (!(p.bytes > 0.0)) {
    throw std::invalid_argument("roofline: kernel '" + p.name + "' moved no bytes");
  }
  return p.flops / p.bytes;
}

KernelProfile to_single_storage(const KernelProfile& p) {
  KernelProfile out = p;
  out.bytes = p.bytes / 2.0;
  return out;
}

Attainable attainable(double ai, PrecisionClass c, const MachineModel& m) {
  const auto& peak = m.compute_roof(c);
  Attainable best{peak.gflops, peak.name, true};
  for (const auto& roof : m.memory) {
    const double bound = roof.gbps * ai;
    if (bound < best.gflops) best = {bound, roof.name, false};
  }
  return best;
}

Classification classify(const KernelProfile& p, PrecisionClass c, const MachineModel& m) {
  Classification out{{}, attainable(arithmetic_intensity(p), c, m), std::nullopt, std::nullopt};
  out.label = out.bound.compute_bound ? out.bound.roof + " bound"
                                      : out.bound.roof + " memory bound";
  if (p.wall_seconds && *p.wall_seconds > 0.0) {
    out.achieved_gflops = p.flops / *p.wall_seconds * 1e-9;
    out.fraction_of_roof = *out.achieved_gflops / out.bound.gflops;
  }
  return out;
}

double predict_precision_gain(const KernelProfile& p, const MachineModel& m) {
  const double ai = arithmetic_intensity(p);
  if (ai == 0.0) {
    // Limit ai -> 0: the slowest bandwidth roof binds both sides.
    if (!m.memory.empty()) return 2.0;
    return m.compute_roof(PrecisionClass::sp_vector).gflops /
           m.compute_roof(PrecisionClass::dp_vector).gflops;
  }
  const double dp = attainable(ai, PrecisionClass::dp_vector, m).gflops;
  const double sp = attainable(2.0 * ai, PrecisionClass::sp_vector, m).gflops;
  return sp / dp;
}

}  // namespace mixprec
