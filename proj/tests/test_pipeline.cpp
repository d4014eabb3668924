#include "compllm/pipeline.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace compllm;

namespace {

struct Fixture {
  ModelConfig cfg = ModelConfig::tiny();
  ModelParams<float> model = ModelParams<float>::random_init(cfg, 42);
  CompressorParams<float> comp = CompressorParams<float>::init(cfg, 4, 8.0, 1);
  SegmentationConfig seg_cfg;
  CompressionConfig ccfg;
};

// Independent oracle: causal pair count by direct summation.
std::uint64_t pairs_by_summation(std::uint64_t n) {
  std::uint64_t total = 0;
  for (std::uint64_t i = 1; i <= n; ++i) total += i;
  return total;
}

// Independent oracle: plain least squares on (log x, log y).
double slope_oracle(const std::vector<double>& xs, const std::vector<double>& ys) {
  const std::size_t n = xs.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lx = std::log(xs[i]);
    const double ly = std::log(ys[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (static_cast<double>(n) * sxy - sx * sy) / (static_cast<double>(n) * sxx - sx * sx);
}

}  // namespace

TEST(Answer, UncompressedPathCosts) {
  Fixture f;
  InferenceRequest req;
  req.context_text = boundary_free_context(100);
  req.question_text = boundary_free_context(10, 1);
  req.use_compression = false;
  req.max_new_tokens = 1;

  auto res = answer(f.cfg, f.model, f.comp, req, f.seg_cfg, f.ccfg);
  EXPECT_EQ(res.cost.compression_pairs, 0u);
  EXPECT_EQ(res.cost.effective_len, 110u);
  EXPECT_EQ(res.cost.prefill_pairs, pairs_by_summation(110));
  EXPECT_EQ(res.cost.kv_entries, res.cost.effective_len + res.token_ids.size());
}

TEST(Answer, CompressedEffectiveLength) {
  // 400 boundary-free tokens at S=20, C=2 plus a 10-token question: 210 rows.
  Fixture f;
  InferenceRequest req;
  req.context_text = boundary_free_context(400);
  req.question_text = boundary_free_context(10, 2);
  req.max_new_tokens = 1;

  auto res = answer(f.cfg, f.model, f.comp, req, f.seg_cfg, f.ccfg);
  EXPECT_EQ(res.cost.effective_len, 210u);
  EXPECT_EQ(res.cost.prefill_pairs, pairs_by_summation(210));
  EXPECT_GT(res.cost.compression_pairs, 0u);
}

TEST(Answer, Validation) {
  Fixture f;
  InferenceRequest req;
  req.context_text = "ok.";
  req.max_new_tokens = 0;
  EXPECT_THROW(answer(f.cfg, f.model, f.comp, req), InputError);

  req.max_new_tokens = 1;
  req.context_text.clear();
  EXPECT_THROW(answer(f.cfg, f.model, f.comp, req), InputError);

  ModelConfig small = f.cfg;
  small.max_positions = 16;
  InferenceRequest big;
  big.context_text = boundary_free_context(100);
  big.use_compression = false;
  big.max_new_tokens = 4;
  EXPECT_THROW(answer(small, f.model, f.comp, big), CapacityError);
}

TEST(Answer, DeterministicOutputs) {
  Fixture f;
  InferenceRequest req;
  req.context_text = "some context that repeats. twice in fact.";
  req.question_text = "and?";
  req.max_new_tokens = 6;
  auto a = answer(f.cfg, f.model, f.comp, req, f.seg_cfg, f.ccfg);
  auto b = answer(f.cfg, f.model, f.comp, req, f.seg_cfg, f.ccfg);
  EXPECT_EQ(a.text, b.text);
  EXPECT_EQ(a.token_ids, b.token_ids);
  EXPECT_EQ(a.cost.prefill_pairs, b.cost.prefill_pairs);
}

TEST(BenchCost, PrefillRatioApproachesCsquared) {
  // |c| = 4096, empty question: exact closed-form pair counts give ~3.999.
  Fixture f;
  InferenceRequest req;
  req.context_text = boundary_free_context(4096);
  req.max_new_tokens = 1;

  req.use_compression = false;
  auto unc = bench_cost(f.cfg, f.model, f.comp, req, f.seg_cfg, f.ccfg);
  req.use_compression = true;
  auto cmp = bench_cost(f.cfg, f.model, f.comp, req, f.seg_cfg, f.ccfg);

  EXPECT_EQ(unc.prefill_pairs, pairs_by_summation(4096));
  EXPECT_EQ(cmp.effective_len, 2048u);  // KV halving with C | every segment length
  EXPECT_EQ(cmp.prefill_pairs, pairs_by_summation(2048));

  const double ratio = static_cast<double>(unc.prefill_pairs) /
                       static_cast<double>(cmp.prefill_pairs);
  EXPECT_NEAR(ratio, 4096.0 * 4097.0 / (2048.0 * 2049.0), 1e-12);
  EXPECT_NEAR(ratio, 4.0, 0.01);
}

TEST(BenchCost, DecodePairsAreLengthDriven) {
  Fixture f;
  InferenceRequest req;
  req.context_text = boundary_free_context(200);
  req.max_new_tokens = 9;  // 1 from prefill + 8 decode steps
  req.use_compression = false;
  auto cost = bench_cost(f.cfg, f.model, f.comp, req, f.seg_cfg, f.ccfg);

  std::uint64_t expected = 0;
  for (int t = 0; t < 8; ++t) expected += 200 + static_cast<std::uint64_t>(t) + 1;
  EXPECT_EQ(cost.decode_pairs, expected);
  EXPECT_EQ(cost.kv_entries, 200u + 9u);
}

TEST(BenchSweep, RowLayoutAndMonotoneAdvantage) {
  Fixture f;
  const std::vector<std::uint64_t> lengths = {64, 128, 256, 512};
  auto rows = bench_sweep(f.cfg, f.model, f.comp, lengths, 2, f.seg_cfg, f.ccfg);
  ASSERT_EQ(rows.size(), lengths.size() * 2);

  // Pair-count advantage of compression is nondecreasing in N.
  std::int64_t prev_advantage = std::numeric_limits<std::int64_t>::min();
  for (std::size_t i = 0; i < rows.size(); i += 2) {
    const auto& unc = rows[i];
    const auto& cmp = rows[i + 1];
    EXPECT_FALSE(unc.compressed);
    EXPECT_TRUE(cmp.compressed);
    EXPECT_EQ(unc.n, cmp.n);
    const std::int64_t advantage =
        static_cast<std::int64_t>(unc.cost.prefill_pairs + unc.cost.decode_pairs) -
        static_cast<std::int64_t>(cmp.cost.compression_pairs + cmp.cost.prefill_pairs +
                                  cmp.cost.decode_pairs);
    EXPECT_GE(advantage, prev_advantage);
    prev_advantage = advantage;
  }

  EXPECT_THROW(bench_sweep(f.cfg, f.model, f.comp, {128, 64}, 1), InputError);
}

TEST(BenchSweep, SlopesMatchIndependentRegression) {
  Fixture f;
  const std::vector<std::uint64_t> lengths = {128, 256, 512, 1024};
  auto rows = bench_sweep(f.cfg, f.model, f.comp, lengths, 1, f.seg_cfg, f.ccfg);
  auto summary = bench_summary(rows);

  std::vector<double> ns, comp_pairs, unc_prefill;
  for (const auto& r : rows) {
    if (r.compressed) {
      ns.push_back(static_cast<double>(r.n));
      comp_pairs.push_back(static_cast<double>(r.cost.compression_pairs));
    } else {
      unc_prefill.push_back(static_cast<double>(r.cost.prefill_pairs));
    }
  }
  EXPECT_NEAR(summary.compression_pairs_slope, slope_oracle(ns, comp_pairs), 1e-9);
  EXPECT_NEAR(summary.uncompressed_prefill_slope, slope_oracle(ns, unc_prefill), 1e-9);
  EXPECT_NEAR(summary.compression_pairs_slope, 1.0, 0.05);
  EXPECT_GT(summary.uncompressed_prefill_slope, 1.8);
}

TEST(BenchSweep, CsvTableShape) {
  Fixture f;
  auto rows = bench_sweep(f.cfg, f.model, f.comp, {64, 128}, 1, f.seg_cfg, f.ccfg);
  const std::string csv = bench_table_csv(rows);
  std::size_t lines = 0;
  for (char c : csv) lines += (c == '\n');
  EXPECT_EQ(lines, 1u + rows.size());  // header + one line per row
  EXPECT_NE(csv.find("n,variant,compression_pairs"), std::string::npos);
  EXPECT_NE(csv.find("uncompressed"), std::string::npos);
  EXPECT_NE(csv.find("compressed"), std::string::npos);
}

TEST(Crossover, SingleSegmentIsStrictlySlower) {
  // One segment: compression overhead cannot be amortized, so no crossover.
  Fixture f;
  auto rows = bench_sweep(f.cfg, f.model, f.comp, {20}, 1, f.seg_cfg, f.ccfg);
  const auto& unc = rows[0];
  const auto& cmp = rows[1];
  EXPECT_GT(cmp.cost.compression_pairs + cmp.cost.prefill_pairs, unc.cost.prefill_pairs);

  auto rep = crossover_report(rows);
  EXPECT_EQ(rep.pair_crossover_n, -1);
}

TEST(Crossover, ReportsBothMetricsSeparately) {
  Fixture f;
  auto rows = bench_sweep(f.cfg, f.model, f.comp, {20, 64, 256, 1024, 2048}, 1, f.seg_cfg, f.ccfg);
  auto rep = crossover_report(rows);
  // Pair-count crossover: N(N+1)/2 > N/2(N/2+1)/2 + sum of segment passes
  // holds from a few hundred tokens on for S=20, C=2.
  EXPECT_GT(rep.pair_crossover_n, 20);
  EXPECT_LE(rep.pair_crossover_n, 2048);
  // Wall-clock crossover is machine-dependent; the field must simply be set
  // to a benchmarked length or -1.
  if (rep.wallclock_crossover_n != -1) {
    bool found = false;
    for (const auto& r : rows) found = found || static_cast<std::int64_t>(r.n) == rep.wallclock_crossover_n;
    EXPECT_TRUE(found);
  }
}

TEST(FitLogLogSlope, ExactPowerLaws) {
  std::vector<double> xs = {1, 2, 4, 8, 16};
  std::vector<double> lin, quad;
  for (double x : xs) {
    lin.push_back(3 * x);
    quad.push_back(0.5 * x * x);
  }
  EXPECT_NEAR(fit_loglog_slope(xs, lin), 1.0, 1e-12);
  EXPECT_NEAR(fit_loglog_slope(xs, quad), 2.0, 1e-12);
  EXPECT_THROW(fit_loglog_slope({1}, {1}), InputError);
  EXPECT_THROW(fit_loglog_slope({1, 0}, {1, 1}), InputError);
}
