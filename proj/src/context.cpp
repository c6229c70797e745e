#include "mixprec/context.hpp"

#include <charconv>
#include <sstream>
#include <vector>

#include <json.hpp>

namespace mixprec {

namespace {

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

template <class Int>
Int parse_prefixed(std::string_view field, std::string_view prefix, std::string_view whole) {
  Int value{};
  if (field.substr(0, prefix.size()) == prefix) {
    const auto digits = field.substr(prefix.size());
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec == std::errc{} && ptr == digits.data() + digits.size() && !digits.empty()) {
      return value;
    }
  }
  throw std::invalid_argument("backend: bad field '" + std::string(field) + "' in '" +
                              std::string(whole) + "'");
}

}  // namespace

Backend Backend::parse(std::string_view text) {
  const auto parts = split(text, ':');
  if (parts.size() == 1 && parts[0] == "ieee") return ieee();
  if (parts.size() == 2 && parts[0] == "vprec") return vprec(VprecFormat::parse(parts[1]));
  if ((parts.size() == 3 || parts.size() == 4) && parts[0] == "mca") {
    McaMode mode{};
    if (parts[1] == "rr") {
      mode = McaMode::random_rounding;
    } else if (parts[1] == "full") {
      mode = McaMode::full;
    } else {
      throw std::invalid_argument("backend: unknown MCA mode '" + std::string(parts[1]) + "'");
    }
    const int t = parse_prefixed<int>(parts[2], "t", text);
    const std::uint64_t seed =
        parts.size() == 4 ? parse_prefixed<std::uint64_t>(parts[3], "seed", text) : 0;
    return mca(McaConfig(mode, t, seed));
  }
  throw std::invalid_argument("backend: unrecognised backend '" + std::string(text) + "'");
}

std::string Backend::to_string() const {
  switch (kind()) {
    case BackendKind::ieee: return "ieee";
    case BackendKind::vprec: return "vprec:" + vprec_format().to_string();
    case BackendKind::mca: {
      const auto& cfg = mca_config();
      return "mca:" + std::string(mixprec::to_string(cfg.mode)) + ":t" + std::to_string(cfg.t) +
             ":seed" + std::to_string(cfg.seed);
    }
  }
  return "ieee";
}

ScopeMap ScopeMap::from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("scope: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw std::invalid_argument("scope: document must be an object");

  ScopeMap scope;
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "default") {
        scope.default_backend = Backend::parse(value.get<std::string>());
      } else if (key == "kernels") {
        for (const auto& [name, backend] : value.items()) {
          scope.per_kernel.emplace(name, Backend::parse(backend.get<std::string>()));
        }
      } else if (key == "include") {
        for (const auto& name : value) scope.include.insert(name.get<std::string>());
      } else if (key == "exclude") {
        for (const auto& name : value) scope.exclude.insert(name.get<std::string>());
      } else {
        throw std::invalid_argument("scope: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("scope: ") + e.what());
  }
  return scope;
}

std::string ScopeMap::to_json() const {
  nlohmann::json doc;
  doc["default"] = default_backend.to_string();
  doc["kernels"] = nlohmann::json::object();
  for (const auto& [name, backend] : per_kernel) doc["kernels"][name] = backend.to_string();
  doc["include"] = include;
  doc["exclude"] = exclude;
  return doc.dump();
}

std::uint64_t ScopeMap::stream_seed() const {
  if (default_backend.kind() == BackendKind::mca) return default_backend.mca_config().seed;
  for (const auto& [name, backend] : per_kernel) {
    if (backend.kind() == BackendKind::mca) return backend.mca_config().seed;
  }
  return 0;
}

Backend resolve(std::string_view kernel, const ScopeMap& scope) {
  if (scope.exclude.contains(kernel)) return Backend::ieee();
  if (!scope.include.empty() && !scope.include.contains(kernel)) return Backend::ieee();
  if (auto it = scope.per_kernel.find(kernel); it != scope.per_kernel.end()) return it->second;
  return scope.default_backend;
}

KernelCounters& KernelCounters::operator+=(const KernelCounters& other) {
  flops_add += other.flops_add;
  flops_mul += other.flops_mul;
  flops_div += other.flops_div;
  bytes_read += other.bytes_read;
  bytes_written += other.bytes_written;
  calls += other.calls;
  return *this;
}

KernelCounters& OpCounters::at(std::string_view kernel) {
  auto it = kernels_.find(kernel);
  if (it == kernels_.end()) it = kernels_.emplace(std::string(kernel), KernelCounters{}).first;
  return it->second;
}

const KernelCounters* OpCounters::find(std::string_view kernel) const {
  auto it = kernels_.find(kernel);
  return it == kernels_.end() ? nullptr : &it->second;
}

KernelCounters OpCounters::total() const {
  KernelCounters sum;
  for (const auto& [name, c] : kernels_) sum += c;
  return sum;
}

void OpCounters::merge(const OpCounters& other) {
  for (const auto& [name, c] : other.kernels_) at(name) += c;
}

void OpCounters::reset() {
  for (auto& [name, c] : kernels_) c = KernelCounters{};
}

std::string OpCounters::to_csv() const {
  std::ostringstream out;
  out << "kernel,flops_add,flops_mul,flops_div,bytes_read,bytes_written,calls\n";
  for (const auto& [name, c] : kernels_) {
    out << name << ',' << c.flops_add << ',' << c.flops_mul << ',' << c.flops_div << ','
        << c.bytes_read << ',' << c.bytes_written << ',' << c.calls << '\n';
  }
  return out.str();
}

Context::Context(ScopeMap scope, std::uint64_t instance)
    : scope_(std::move(scope)), rng_(scope_.stream_seed(), instance) {}

Context::Slot& Context::slot(std::string_view kernel) {
  auto it = slots_.find(kernel);
  if (it == slots_.end()) {
    if (kernel.empty()) throw std::invalid_argument("context: empty kernel name");
    Slot s{resolve(kernel, scope_), &counters_.at(kernel)};
    it = slots_.emplace(std::string(kernel), s).first;
  }
  return it->second;
}

double Context::scoped_op(std::string_view kernel, double a, double b, ArithOp op) {
  Slot& s = slot(kernel);
  FlopTally tally;
  tally.count(op);
  s.counters->flops_add += tally.add;
  s.counters->flops_mul += tally.mul;
  s.counters->flops_div += tally.div;
  switch (s.backend.kind()) {
    case BackendKind::ieee: return apply_ieee(op, a, b);
    case BackendKind::vprec: return vprec_op(a, b, op, s.backend.vprec_format());
    case BackendKind::mca: return mca_op(a, b, op, s.backend.mca_config(), rng_);
  }
  return apply_ieee(op, a, b);
}

void Context::charge_traffic(std::string_view kernel, std::uint64_t bytes_read,
                             std::uint64_t bytes_written) {
  KernelCounters& c = *slot(kernel).counters;
  c.bytes_read += bytes_read;
  c.bytes_written += bytes_written;
}

}  // namespace mixprec
