#include <doctest.h>

#include <bit>
#include <cmath>
#include <random>

#include "mixprec/context.hpp"
#include "mixprec/sem.hpp"

using namespace mixprec;

TEST_CASE("backend text forms") {
  CHECK(Backend::parse("ieee").kind() == BackendKind::ieee);
  CHECK(Backend::parse("vprec:t23r8") == Backend::vprec({23, 8}));
  const auto m = Backend::parse("mca:rr:t23:seed42");
  CHECK(m.kind() == BackendKind::mca);
  CHECK(m.mca_config() == McaConfig(McaMode::random_rounding, 23, 42));
  CHECK(Backend::parse("mca:full:t24").mca_config() == McaConfig(McaMode::full, 24, 0));
  CHECK(Backend::parse(m.to_string()) == m);
  for (const char* bad : {"", "IEEE", "vprec", "vprec:t60r8", "mca:xx:t23", "mca:rr:23",
                          "mca:rr:t23:42", "mca:rr:t0"}) {
    CHECK_THROWS_AS(Backend::parse(bad), std::invalid_argument);
  }
}

TEST_CASE("scope resolution") {
  ScopeMap empty;
  CHECK(resolve("glsc3", empty) == Backend::ieee());
  CHECK(resolve("anything", empty) == Backend::ieee());

  ScopeMap direct;
  direct.per_kernel.emplace("glsc3", Backend::vprec({23, 8}));
  CHECK(resolve("glsc3", direct) == Backend::vprec({23, 8}));
  CHECK(resolve("ax", direct) == Backend::ieee());

  ScopeMap restricted;
  restricted.default_backend = Backend::mca(McaConfig(McaMode::random_rounding, 23));
  restricted.include = {"glsc3", "ax"};
  CHECK(resolve("init_rhs", restricted) == Backend::ieee());
  CHECK(resolve("ax", restricted) == restricted.default_backend);

  restricted.exclude = {"ax"};
  CHECK(resolve("ax", restricted) == Backend::ieee());
}

TEST_CASE("include-all equals empty include") {
  ScopeMap a;
  a.default_backend = Backend::vprec({10, 5});
  a.per_kernel.emplace("mxm", Backend::vprec({3, 4}));
  ScopeMap b = a;
  for (const char* k : {"mxm", "add2", "ax", "gs", "mask", "glsc3", "add2s1", "add2s2",
                        "solveM", "cg", "init_rhs"}) {
    b.include.insert(k);
  }
  for (const char* k : {"mxm", "add2", "ax", "glsc3", "cg", "init_rhs"}) {
    CHECK(resolve(k, a) == resolve(k, b));
  }
}

TEST_CASE("scope JSON round trip") {
  const auto scope = ScopeMap::from_json(
      R"({"default":"vprec:t23r8","kernels":{"glsc3":"mca:rr:t23:seed42"},"include":["glsc3","ax"],"exclude":["ax"]})");
  CHECK(scope.default_backend == Backend::vprec({23, 8}));
  CHECK(scope.per_kernel.at("glsc3") == Backend::mca(McaConfig(McaMode::random_rounding, 23, 42)));
  CHECK(scope.include.size() == 2);
  CHECK(scope.exclude.contains("ax"));
  CHECK(scope.stream_seed() == 42);
  const auto again = ScopeMap::from_json(scope.to_json());
  CHECK(again.default_backend == scope.default_backend);
  CHECK(again.per_kernel == scope.per_kernel);
  CHECK(again.include == scope.include);
  CHECK(again.exclude == scope.exclude);

  CHECK_THROWS_AS(ScopeMap::from_json("{"), std::invalid_argument);
  CHECK_THROWS_AS(ScopeMap::from_json(R"({"defaults":"ieee"})"), std::invalid_argument);
  CHECK_THROWS_AS(ScopeMap::from_json(R"({"default":"vprec:t0r8"})"), std::invalid_argument);
  CHECK_THROWS_AS(ScopeMap::from_json("[]"), std::invalid_argument);
}

TEST_CASE("scoped_op by backend") {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(-10.0, 10.0);

  ScopeMap scope;
  scope.per_kernel.emplace("full", Backend::vprec({52, 11}));
  scope.per_kernel.emplace("f32", Backend::vprec({23, 8}));
  scope.per_kernel.emplace("noise", Backend::mca(McaConfig(McaMode::random_rounding, 23, 5)));
  Context ctx(scope, 3);
  RandomStream replay(5, 3);
  const McaConfig mca(McaMode::random_rounding, 23, 5);

  for (int i = 0; i < 5000; ++i) {
    const double a = u(gen), b = u(gen);
    for (auto op : {ArithOp::add, ArithOp::sub, ArithOp::mul, ArithOp::div}) {
      const double native = apply_ieee(op, a, b);
      REQUIRE(std::bit_cast<std::uint64_t>(ctx.scoped_op("plain", a, b, op)) ==
              std::bit_cast<std::uint64_t>(native));
      REQUIRE(ctx.scoped_op("full", a, b, op) == native);
      REQUIRE(ctx.scoped_op("f32", a, b, op) ==
              static_cast<double>(static_cast<float>(native)));
      REQUIRE(ctx.scoped_op("noise", a, b, op) == mca_op(a, b, op, mca, replay));
    }
  }
  const auto* plain = ctx.counters().find("plain");
  REQUIRE(plain != nullptr);
  CHECK(plain->flops_add == 10000);
  CHECK(plain->flops_mul == 5000);
  CHECK(plain->flops_div == 5000);
}

TEST_CASE("traffic accounting") {
  Context ctx;
  const std::size_t n = 100;
  ctx.charge_traffic("glsc3", 3 * sizeof(double) * n, 0);
  CHECK(ctx.counters().find("glsc3")->bytes_read == 24 * n);
  ctx.charge_traffic("glsc3_single", 3 * sizeof(float) * n, 0);
  CHECK(ctx.counters().find("glsc3_single")->bytes_read == 12 * n);
  ctx.charge_traffic("glsc3", 0, 0);
  CHECK(ctx.counters().find("glsc3")->bytes_read == 24 * n);

  OpCounters merged;
  merged.merge(ctx.counters());
  merged.merge(ctx.counters());
  CHECK(merged.find("glsc3")->bytes_read == 48 * n);
  merged.reset();
  CHECK(merged.total() == KernelCounters{});
  CHECK(merged.to_csv().rfind("kernel,flops_add,flops_mul,flops_div,bytes_read,bytes_written,calls\n", 0) == 0);
}

TEST_CASE("run dispatches policies and counts calls") {
  ScopeMap scope;
  scope.per_kernel.emplace("emu", Backend::vprec({10, 5}));
  Context ctx(scope);
  const double r = ctx.run<double>("emu", [](auto& ar) { return ar.add(1.0, 0x1p-12); });
  CHECK(r == 1.0);
  const double n = ctx.run<double>("native", [](auto& ar) { return ar.mul(ar.add(1.0, 0x1p-12), 2.0); });
  CHECK(n == 2.0 + 0x1p-11);
  CHECK(ctx.counters().find("emu")->calls == 1);
  CHECK(ctx.counters().find("native")->flops_add == 1);
  CHECK(ctx.counters().find("native")->flops_mul == 1);

  const float f = ctx.run<float>("native", [](auto& ar) { return ar.add(1.0f, 2.0f); });
  CHECK(f == 3.0f);
  CHECK_THROWS_AS(ctx.run<float>("emu", [](auto& ar) { return ar.add(1.0f, 2.0f); }), std::logic_error);
}

TEST_CASE("default IEEE context matches uninstrumented kernels") {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> a(1000), b(1000), c(1000);
  for (auto* v : {&a, &b, &c}) for (auto& x : *v) x = u(gen);
  Context ctx;
  double want = a[0] * b[0] * c[0];
  for (std::size_t i = 1; i < a.size(); ++i) want = want + a[i] * b[i] * c[i];
  CHECK(std::bit_cast<std::uint64_t>(glsc3<double>(a, b, c, ctx)) ==
        std::bit_cast<std::uint64_t>(want));
}

TEST_CASE("point-keyed noise is identical on coincident copies") {
  const Mesh mesh = setup_box_mesh(2, 1, 1, 3);
  ScopeMap scope;
  scope.default_backend = Backend::mca(McaConfig(McaMode::full, 10, 4));
  Context ctx(scope, 1);
  ctx.bind_points(mesh.global_id);

  std::vector<double> a(mesh.size()), b(mesh.size());
  for (std::size_t q = 0; q < mesh.size(); ++q) {
    a[q] = 1.0 + mesh.x[q];
    b[q] = 2.0 - mesh.y[q] * mesh.z[q];
  }
  add2s2<double>(a, b, 0.3, ctx);
  for (std::size_t g = 0; g + 1 < mesh.gs_offsets.size(); ++g) {
    const double first = a[mesh.gs_members[mesh.gs_offsets[g]]];
    for (auto m = mesh.gs_offsets[g]; m < mesh.gs_offsets[g + 1]; ++m) {
      REQUIRE(a[mesh.gs_members[m]] == first);
    }
  }
  // Distinct global points get distinct noise.
  std::vector<double> ones(mesh.size(), 1.0), zero(mesh.size(), 0.0);
  add2s2<double>(ones, zero, 1.0, ctx);
  CHECK(ones[0] != ones[1]);
  // Unbound sizes fall back to the sequential stream.
  std::vector<double> small(5, 1.0), inc(5, 1.0);
  const auto before = ctx.stream().draws();
  add2<double>(small, inc, ctx);
  CHECK(ctx.stream().draws() == before + 15);
}
