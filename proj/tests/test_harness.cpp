#include <doctest.h>

#include <atomic>
#include <cmath>
#include <json.hpp>

#include "mixprec/harness.hpp"

using namespace mixprec;

namespace {

SectionMeasurement measured(double speedup, double vprec_error, double s2, int converged = 20) {
  SectionMeasurement m;
  m.predicted_speedup = speedup;
  m.vprec_error = vprec_error;
  m.vprec_converged = true;
  SampleStats stats;
  stats.n = 20;
  stats.s2 = s2;
  m.mca_final = stats;
  m.mca_converged = converged;
  m.mca_runs = 20;
  return m;
}

int rank(Verdict v) {
  switch (v) {
    case Verdict::pruned_speedup: return 0;
    case Verdict::pruned_vprec: return 1;
    case Verdict::pruned_mca: return 2;
    case Verdict::candidate: return 3;
  }
  return -1;
}

}  // namespace

TEST_CASE("mesh spec") {
  const auto m = MeshSpec::parse("2,3,4,5");
  CHECK(m.ex == 2);
  CHECK(m.ey == 3);
  CHECK(m.ez == 4);
  CHECK(m.nx1 == 5);
  CHECK(MeshSpec::parse(m.to_string()).to_string() == "2,3,4,5");
  for (const char* bad : {"", "2,2,2", "2,2,2,8,1", "2,x,2,8", "0,1,1,4", "1,1,1,1", "1,1,1,33",
                          "1,,1,4", "1,1,1,4 "}) {
    CHECK_THROWS_AS(MeshSpec::parse(bad), ConfigError);
  }
}

TEST_CASE("kernel registry") {
  CHECK(cg_loop_kernels().size() == 10);
  for (const auto& k : cg_loop_kernels()) CHECK(known_kernels().contains(k));
  CHECK(!cg_loop_kernels().contains("init_rhs"));
  CHECK_NOTHROW(require_known({"glsc3", "cancel_probe"}));
  CHECK_THROWS_AS(require_known({"glsc3", "daxpy"}), ConfigError);

  const auto scope = section_scope({"glsc3", "ax"}, Backend::vprec({10, 5}));
  CHECK(resolve("glsc3", scope) == Backend::vprec({10, 5}));
  CHECK(resolve("mxm", scope) == Backend::ieee());
}

TEST_CASE("plateau onset") {
  std::vector<SweepRow> rows;
  for (int t = 3; t <= 10; ++t) rows.push_back({t, t < 6 ? 1.0 : 1e-11, 10, t >= 5});
  rows.back().final_residual = 2e-11;
  CHECK(plateau_onset(rows) == 6);
  // A late outlier moves the onset above it.
  rows[5].final_residual = 1.0;
  CHECK(plateau_onset(rows) == 9);
  CHECK(!plateau_onset({}).has_value());
  // Order of the rows does not matter.
  std::reverse(rows.begin(), rows.end());
  CHECK(plateau_onset(rows) == 9);
  std::vector<SweepRow> none{{3, 1.0, 5, false}};
  CHECK(!plateau_onset(none).has_value());
}

TEST_CASE("pruning rules") {
  const PipelineThresholds th;
  CHECK(decide(measured(2.0, 1e-9, 30.0), th) == Verdict::candidate);
  CHECK(decide(measured(1.1, 1e-9, 30.0), th) == Verdict::pruned_speedup);
  CHECK(decide(measured(2.0, 1e-3, 30.0), th) == Verdict::pruned_vprec);
  CHECK(decide(measured(2.0, 1e-9, 5.0), th) == Verdict::pruned_mca);
  CHECK(decide(measured(2.0, 1e-9, 30.0, 19), th) == Verdict::pruned_mca);
  PipelineThresholds lax = th;
  lax.require_all_converged = false;
  CHECK(decide(measured(2.0, 1e-9, 30.0, 19), lax) == Verdict::candidate);

  auto unconverged = measured(2.0, 1e-9, 30.0);
  unconverged.vprec_converged = false;
  CHECK(decide(unconverged, th) == Verdict::pruned_vprec);
  auto nan_error = measured(2.0, std::nan(""), 30.0);
  CHECK(decide(nan_error, th) == Verdict::pruned_vprec);
  SectionMeasurement partial;
  partial.predicted_speedup = 2.0;
  CHECK(decide(partial, th) == Verdict::pruned_vprec);

  // Exact IEEE measurements pass zero thresholds.
  const PipelineThresholds zero{0.0, 0.0, 0.0, true};
  CHECK(decide(measured(1.0, 0.0, 53.0), zero) == Verdict::candidate);
}

TEST_CASE("pruning is monotone in every threshold") {
  const std::vector<SectionMeasurement> cases{
      measured(1.5, 1e-8, 12.0), measured(1.9, 1e-5, 4.0), measured(1.1, 1e-12, 40.0),
      measured(2.0, 3e-7, 9.9)};
  const std::vector<double> speedups{1.0, 1.2, 1.6, 2.1};
  const std::vector<double> errors{1e-9, 1e-7, 1e-6, 1e-4};
  const std::vector<double> bits{2.0, 5.0, 10.0, 20.0};
  for (const auto& m : cases) {
    for (std::size_t a = 0; a < speedups.size(); ++a)
      for (std::size_t b = 0; b < errors.size(); ++b)
        for (std::size_t c = 0; c < bits.size(); ++c) {
          const PipelineThresholds th{speedups[a], errors[b], bits[c], true};
          const int v = rank(decide(m, th));
          if (a + 1 < speedups.size())
            CHECK(rank(decide(m, {speedups[a + 1], errors[b], bits[c], true})) <= v);
          if (b + 1 < errors.size())
            CHECK(rank(decide(m, {speedups[a], errors[b + 1], bits[c], true})) >= v);
          if (c + 1 < bits.size())
            CHECK(rank(decide(m, {speedups[a], errors[b], bits[c + 1], true})) <= v);
        }
  }
}

TEST_CASE("config validation") {
  auto cfg = PipelineConfig::defaults();
  CHECK(cfg.sections.size() == 1);
  CHECK(cfg.sections.front().name == "cg_loop");
  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.sections.push_back({"empty", {}});
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.sections.push_back({"odd", {"nope"}});
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.thresholds.vprec_error = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.mca_runs = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  const auto j = nlohmann::json::parse(cfg.to_json());
  CHECK(j.at("mesh") == "2,2,2,8");
}

TEST_CASE("config hash") {
  CHECK(config_hash("") == "cbf29ce484222325");
  CHECK(config_hash("a") == "af63dc4c8601ec8c");
  CHECK(config_hash("foobar") == "85944171f73967e8");
  CHECK(config_hash("x") != config_hash("y"));
}

TEST_CASE("parallel_for") {
  std::vector<int> hits(100, 0);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                    if (i == 7) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
  std::atomic<int> calls{0};
  parallel_for(0, [&](std::size_t) { ++calls; });
  CHECK(calls == 0);
}

TEST_CASE("cancellation probe") {
  std::vector<double> f{1.0, -2.0, 0.5};
  Context exact;
  apply_cancellation_probe(f, exact);
  CHECK(f == std::vector<double>{1.0, -2.0, 0.5});

  Context coarse(section_scope({"cancel_probe"}, Backend::vprec({23, 8})));
  apply_cancellation_probe(f, coarse);
  CHECK(f == std::vector<double>{0.0, -0.0, 0.0});
}

TEST_CASE("small sweep") {
  const auto mesh = setup_box_mesh(1, 1, 2, 4);
  CgConfig cfg;
  const auto rows = sweep_vprec(mesh, cfg, cg_loop_kernels(), 3, 52, 11);
  REQUIRE(rows.size() == 50);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].t == 3 + static_cast<int>(i));
  const auto reference = run_solve(mesh, cfg, ScopeMap{});
  // Full width reproduces IEEE exactly.
  CHECK(rows.back().final_residual == reference.result.trace.final_residual());
  CHECK(rows.back().iterations == reference.result.trace.iterations);
  const auto onset = plateau_onset(rows);
  REQUIRE(onset.has_value());
  for (const auto& row : rows) {
    if (row.t >= *onset) CHECK(row.final_residual <= 10.0 * rows.back().final_residual);
  }
  CHECK_THROWS_AS(sweep_vprec(mesh, cfg, cg_loop_kernels(), 0, 10, 11), ConfigError);
  CHECK_THROWS_AS(sweep_vprec(mesh, cfg, {"bogus"}, 3, 10, 11), ConfigError);
}

TEST_CASE("small ensembles") {
  const auto mesh = setup_box_mesh(1, 1, 2, 4);
  CgConfig cfg;
  const McaConfig rr(McaMode::random_rounding, 23, 7);
  const auto e = mca_ensemble(mesh, cfg, cg_loop_kernels(), rr, 6);
  CHECK(e.traces.size() == 6);
  CHECK(e.all_converged());
  CHECK(e.final_residual.n == 6);
  CHECK(e.common_iterations() > 0);
  for (const auto& s : e.per_iteration) CHECK(s.n == 6);
  const auto widths = e.band_widths();
  CHECK(std::any_of(widths.begin(), widths.end(), [](double w) { return w > 0.0; }));

  // Same seed replays bit for bit.
  const auto again = mca_ensemble(mesh, cfg, cg_loop_kernels(), rr, 6);
  for (std::size_t i = 0; i < e.traces.size(); ++i) CHECK(again.traces[i] == e.traces[i]);

  // One shared stream collapses the band.
  const auto shared = mca_ensemble(mesh, cfg, cg_loop_kernels(), rr, 4, false);
  for (double w : shared.band_widths()) CHECK(w == 0.0);
  CHECK(shared.final_s2() == 53.0);

  CHECK_THROWS_AS(mca_ensemble(mesh, cfg, cg_loop_kernels(), rr, 1), ConfigError);
}

TEST_CASE("pipeline on a small mesh") {
  auto cfg = PipelineConfig::defaults();
  cfg.mesh = MeshSpec::parse("1,1,2,4");
  cfg.mca_runs = 4;
  cfg.sections.push_back({"probe", {"cancel_probe"}});
  cfg.sections.push_back({"dot", {"glsc3"}});
  PipelineCache cache;
  const auto report = pipeline(cfg, &cache);
  REQUIRE(report.sections.size() == 3);
  CHECK(report.reference_iterations > 0);
  CHECK(report.sections[1].verdict == Verdict::pruned_mca);
  const auto j = nlohmann::json::parse(report.to_json());
  CHECK(j.at("sections").size() == 3);

  // A loosened grid re-uses the cached measurements and never tightens.
  auto loose = cfg;
  loose.thresholds.mca_min_bits = 1e-3;
  loose.thresholds.require_all_converged = false;
  const auto relaxed = pipeline(loose, &cache);
  for (std::size_t i = 0; i < report.sections.size(); ++i) {
    CHECK(rank(relaxed.sections[i].verdict) >= rank(report.sections[i].verdict));
    CHECK(relaxed.sections[i].verdict ==
          decide(relaxed.sections[i].measured, loose.thresholds));
  }
}

TEST_CASE("comparison report") {
  CgConfig cfg;
  const auto report = compare(MeshSpec::parse("1,1,2,4"), cfg, 1);
  CHECK(report.double_trace.converged);
  CHECK(!report.metrics.ae.empty());
  CHECK(std::isfinite(report.metrics.mae));
  const double per_d = static_cast<double>(report.counters_double.bytes()) /
                       report.double_trace.iterations;
  const double per_m = static_cast<double>(report.counters_mixed.bytes()) /
                       report.mixed_trace.iterations;
  const double ratio = per_m / per_d;
  CHECK(report.bytes_per_iteration_ratio() == doctest::Approx(ratio));
  CHECK(ratio > 0.45);
  CHECK(ratio < 0.55);
  const auto j = nlohmann::json::parse(report.to_json());
  CHECK(j.contains("gain_percent"));
  CHECK_THROWS_AS(compare(MeshSpec::parse("1,1,1,3"), cfg, 0), ConfigError);
}
