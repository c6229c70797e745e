#pragma once

// Kernel-scoped dispatch of floating-point operations to IEEE, VPREC or MCA
// backends, with per-kernel flop and byte accounting.

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>

#include "mixprec/fpemu.hpp"
#include "mixprec/mca.hpp"

namespace mixprec {

struct IeeeBackend {
  friend bool operator==(const IeeeBackend&, const IeeeBackend&) = default;
};

enum class BackendKind : std::uint8_t { ieee, vprec, mca };

class Backend {
 public:
  Backend() = default;
  static Backend ieee() { return Backend{}; }
  static Backend vprec(VprecFormat fmt) { return Backend{fmt}; }
  static Backend mca(McaConfig cfg) { return Backend{cfg}; }

  /// Accepts "ieee", "vprec:t23r8", "mca:rr:t23:seed42", "mca:full:t24".
  /// Throws std::invalid_argument on anything else.
  static Backend parse(std::string_view text);

  BackendKind kind() const { return static_cast<BackendKind>(value_.index()); }
  const VprecFormat& vprec_format() const { return std::get<VprecFormat>(value_); }
  const McaConfig& mca_config() const { return std::get<McaConfig>(value_); }

  std::string to_string() const;

  friend bool operator==(const Backend&, const Backend&) = default;

 private:
  using Value = std::variant<IeeeBackend, VprecFormat, McaConfig>;
  explicit Backend(Value v) : value_(std::move(v)) {}
  Value value_;
};

/// Routing rules: an excluded kernel is always IEEE; a non-empty include list
/// makes every unlisted kernel IEEE; otherwise the per-kernel entry wins over
/// the default.
struct ScopeMap {
  Backend default_backend;
  std::map<std::string, Backend, std::less<>> per_kernel;
  std::set<std::string, std::less<>> include;
  std::set<std::string, std::less<>> exclude;

  /// Parses the scope JSON document ({"default", "kernels", "include", "exclude"}).
  static ScopeMap from_json(std::string_view text);
  std::string to_json() const;

  /// Seed of the first MCA backend in (default, then per-kernel order), or 0.
  std::uint64_t stream_seed() const;
};

Backend resolve(std::string_view kernel, const ScopeMap& scope);

struct KernelCounters {
  std::uint64_t flops_add = 0;  // add and sub
  std::uint64_t flops_mul = 0;
  std::uint64_t flops_div = 0;
  std::uint64_t bytes_read = 0;
  std::uint64_t bytes_written = 0;
  std::uint64_t calls = 0;

  std::uint64_t flops() const { return flops_add + flops_mul + flops_div; }
  std::uint64_t bytes() const { return bytes_read + bytes_written; }
  KernelCounters& operator+=(const KernelCounters& other);
  friend bool operator==(const KernelCounters&, const KernelCounters&) = default;
};

class OpCounters {
 public:
  using Map = std::map<std::string, KernelCounters, std::less<>>;

  KernelCounters& at(std::string_view kernel);
  const KernelCounters* find(std::string_view kernel) const;
  const Map& kernels() const { return kernels_; }

  KernelCounters total() const;
  void merge(const OpCounters& other);
  /// Zeroes every counter but keeps entries (and references to them) alive.
  void reset();

  /// kernel,flops_add,flops_mul,flops_div,bytes_read,bytes_written,calls
  std::string to_csv() const;

 private:
  Map kernels_;
};

struct FlopTally {
  std::uint64_t add = 0;
  std::uint64_t mul = 0;
  std::uint64_t div = 0;

  void count(ArithOp op) {
    switch (op) {
      case ArithOp::add:
      case ArithOp::sub: ++add; break;
      case ArithOp::mul: ++mul; break;
      case ArithOp::div: ++div; break;
    }
  }
};

// Arithmetic policies handed to kernel bodies. Each one counts the operations
// it performs; kernels are written once against this interface.
//
// Pointwise kernels over a mesh field call key_points(n) once and at_point(i)
// before the operations on entry i. Only MCA reacts: when n matches the bound
// point map, the noise for entry i comes from a stream keyed by (call, global
// point id), so element copies of a shared point stay bitwise identical.

template <class Real>
struct NativeArith {
  FlopTally tally;
  Real add(Real a, Real b) { ++tally.add; return a + b; }
  Real sub(Real a, Real b) { ++tally.add; return a - b; }
  Real mul(Real a, Real b) { ++tally.mul; return a * b; }
  Real div(Real a, Real b) { ++tally.div; return a / b; }
  void key_points(std::size_t) {}
  void at_point(std::size_t) {}
};

struct VprecArith {
  VprecFormat fmt;
  FlopTally tally;
  double add(double a, double b) { ++tally.add; return vprec_round(a + b, fmt); }
  double sub(double a, double b) { ++tally.add; return vprec_round(a - b, fmt); }
  double mul(double a, double b) { ++tally.mul; return vprec_round(a * b, fmt); }
  double div(double a, double b) { ++tally.div; return vprec_round(a / b, fmt); }
  void key_points(std::size_t) {}
  void at_point(std::size_t) {}
};

struct McaArith {
  const McaConfig& cfg;
  RandomStream& rng;
  std::span<const std::uint32_t> points;
  std::uint64_t& epochs;
  FlopTally tally{};
  RandomStream* active = &rng;
  RandomStream local{};
  std::uint64_t epoch = 0;
  bool keyed = false;

  double add(double a, double b) { ++tally.add; return mca_op(a, b, ArithOp::add, cfg, *active); }
  double sub(double a, double b) { ++tally.add; return mca_op(a, b, ArithOp::sub, cfg, *active); }
  double mul(double a, double b) { ++tally.mul; return mca_op(a, b, ArithOp::mul, cfg, *active); }
  double div(double a, double b) { ++tally.div; return mca_op(a, b, ArithOp::div, cfg, *active); }

  void key_points(std::size_t n) {
    keyed = n > 0 && n == points.size();
    if (keyed) epoch = ++epochs;
  }
  void at_point(std::size_t i) {
    if (!keyed) return;
    local = rng.fork(epoch << 32 | points[i]);
    active = &local;
  }
};

/// One context per solver instance. Not thread-safe; ensembles give every
/// run its own context and merge counters afterwards.
class Context {
 public:
  explicit Context(ScopeMap scope = {}, std::uint64_t instance = 0);

  Context(const Context&) = delete;
  Context& operator=(const Context&) = delete;

  const ScopeMap& scope() const { return scope_; }
  RandomStream& stream() { return rng_; }
  const OpCounters& counters() const { return counters_; }
  void reset_counters() { counters_.reset(); }

  /// Global point ids of the mesh fields this context works on (see
  /// McaArith). The span must outlive the context or be rebound.
  void bind_points(std::span<const std::uint32_t> ids) { points_ = ids; }
  std::span<const std::uint32_t> points() const { return points_; }

  const Backend& backend_for(std::string_view kernel) { return slot(kernel).backend; }

  /// One operation of `kernel` through its resolved backend.
  double scoped_op(std::string_view kernel, double a, double b, ArithOp op);

  void charge_traffic(std::string_view kernel, std::uint64_t bytes_read,
                      std::uint64_t bytes_written);

  /// Runs a kernel body `fn(arith)` with the arithmetic policy selected for
  /// `kernel`, counting one call and every operation the body performs.
  /// Binary32 storage only runs natively; routing it to an emulation backend
  /// throws std::logic_error.
  template <class Real, class Fn>
  decltype(auto) run(std::string_view kernel, Fn&& fn);

 private:
  struct Slot {
    Backend backend;
    KernelCounters* counters;
  };

  struct TallyMerge {
    const FlopTally& tally;
    KernelCounters& into;
    ~TallyMerge() {
      into.flops_add += tally.add;
      into.flops_mul += tally.mul;
      into.flops_div += tally.div;
    }
  };

  Slot& slot(std::string_view kernel);

  ScopeMap scope_;
  OpCounters counters_;
  RandomStream rng_;
  std::span<const std::uint32_t> points_;
  std::uint64_t point_epochs_ = 0;
  std::map<std::string, Slot, std::less<>> slots_;
};

template <class Real, class Fn>
decltype(auto) Context::run(std::string_view kernel, Fn&& fn) {
  Slot& s = slot(kernel);
  ++s.counters->calls;
  if (s.backend.kind() == BackendKind::ieee) {
    NativeArith<Real> arith;
    TallyMerge merge{arith.tally, *s.counters};
    return fn(arith);
  }
  if constexpr (std::is_same_v<Real, double>) {
    if (s.backend.kind() == BackendKind::vprec) {
      VprecArith arith{s.backend.vprec_format(), {}};
      TallyMerge merge{arith.tally, *s.counters};
      return fn(arith);
    }
    McaArith arith{s.backend.mca_config(), rng_, points_, point_epochs_};
    TallyMerge merge{arith.tally, *s.counters};
    return fn(arith);
  } else {
    throw std::logic_error("kernel '" + std::string(kernel) +
                           "': emulation backends require binary64 storage");
  }
}

}  // namespace mixprec
