// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line each. Exit code is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "compllm/cecache.hpp"
#include "compllm/compressor.hpp"
#include "compllm/distill.hpp"
#include "compllm/evalgen.hpp"
#include "compllm/model.hpp"
#include "compllm/pipeline.hpp"

using namespace compllm;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct TinyRig {
  ModelConfig cfg = ModelConfig::tiny();
  ModelParams<float> model = ModelParams<float>::random_init(cfg, 42);
  CompressorParams<float> comp = CompressorParams<float>::init(cfg, 8, 16.0, 1);
  SegmentationConfig seg;
  CompressionConfig ccfg;
};

// ---------------------------------------------------------------------------
// 1. Prefill-cost ratio approaches C^2 = 4.
void criterion_prefill_ratio(TinyRig& rig) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::uint64_t> lengths = {1024, 2048, 4096, 8192};
  auto rows = bench_sweep(rig.cfg, rig.model, rig.comp, lengths, 1, rig.seg, rig.ccfg);

  std::vector<double> ratios;
  for (std::size_t i = 0; i < rows.size(); i += 2) {
    ratios.push_back(static_cast<double>(rows[i].cost.prefill_pairs) /
                     static_cast<double>(rows[i + 1].cost.prefill_pairs));
  }
  bool monotone = true;
  for (std::size_t i = 1; i < ratios.size(); ++i) {
    monotone = monotone && ratios[i] > ratios[i - 1] && ratios[i] <= 4.0;
  }
  const double final_ratio = ratios.back();
  const bool pass = monotone && std::abs(final_ratio - 4.0) <= 0.02 * 4.0;

  char detail[256];
  std::snprintf(detail, sizeof(detail),
                "ratios %.4f %.4f %.4f %.4f, monotone=%d, |4-r|=%.4f, %.1fs", ratios[0],
                ratios[1], ratios[2], ratios[3], monotone ? 1 : 0, std::abs(final_ratio - 4.0),
                seconds_since(t0));
  report(1, "prefill-cost ratio -> C^2", pass, detail);

  // 3. KV halving piggybacks on the same compressed rows: exact N / C.
  bool kv_exact = true;
  std::string kv_detail;
  for (std::size_t i = 1; i < rows.size(); i += 2) {
    const std::uint64_t n = rows[i].n;
    const std::uint64_t after_prefill = rows[i].cost.kv_entries - 1;  // minus generated token
    kv_exact = kv_exact && rows[i].cost.effective_len == n / 2 && after_prefill == n / 2;
    kv_detail += std::to_string(rows[i].cost.effective_len) + "=" + std::to_string(n / 2) + " ";
  }
  report(3, "KV halving, compressed kv_entries = N/C exactly", kv_exact, kv_detail);
}

// ---------------------------------------------------------------------------
// 2. Decode-cost ratio approaches C = 2 at N = 8192, T = 64.
void criterion_decode_ratio(TinyRig& rig) {
  const auto t0 = std::chrono::steady_clock::now();
  InferenceRequest req;
  req.context_text = boundary_free_context(8192);
  req.max_new_tokens = 64;

  req.use_compression = false;
  auto unc = bench_cost(rig.cfg, rig.model, rig.comp, req, rig.seg, rig.ccfg);
  req.use_compression = true;
  auto cmp = bench_cost(rig.cfg, rig.model, rig.comp, req, rig.seg, rig.ccfg);

  const double ratio =
      static_cast<double>(unc.decode_pairs) / static_cast<double>(cmp.decode_pairs);
  const bool pass = std::abs(ratio - 2.0) <= 0.05 * 2.0;
  char detail[160];
  std::snprintf(detail, sizeof(detail), "decode pairs %llu / %llu = %.4f, %.1fs",
                static_cast<unsigned long long>(unc.decode_pairs),
                static_cast<unsigned long long>(cmp.decode_pairs), ratio, seconds_since(t0));
  report(2, "decode-cost ratio -> C", pass, detail);
}

// ---------------------------------------------------------------------------
// 4. Linear compression cost: log-log slope 1.00 +/- 0.05 over 512..16384.
void criterion_compression_slope(TinyRig& rig) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> ns, pairs;
  for (std::uint64_t n : {512, 1024, 2048, 4096, 8192, 16384}) {
    PairCounter pc;
    const auto tokens = Tokenizer::encode(boundary_free_context(n));
    compress_context(rig.cfg, rig.model, rig.comp, tokens, rig.seg, rig.ccfg, &pc);
    ns.push_back(static_cast<double>(n));
    pairs.push_back(static_cast<double>(pc.pairs));
  }
  const double slope = fit_loglog_slope(ns, pairs);
  const bool pass = std::abs(slope - 1.0) <= 0.05;
  char detail[128];
  std::snprintf(detail, sizeof(detail), "slope=%.4f over N=512..16384, %.1fs", slope,
                seconds_since(t0));
  report(4, "linear compression cost, slope 1.00 +/- 0.05", pass, detail);
}

// ---------------------------------------------------------------------------
// 5. Loss-formula unit suite in 64-bit.
void criterion_loss_units() {
  bool pass = true;
  pass = pass && std::abs(smooth_l1(1.0, 1.0, 1.0) - 0.0) < 1e-12;
  pass = pass && std::abs(smooth_l1(0.5, 0.0, 1.0) - 0.125) < 1e-12;
  pass = pass && std::abs(smooth_l1(2.0, 0.0, 1.0) - 1.5) < 1e-12;

  Matrix<double> s(1, 2), t(1, 2);
  s << 0.5, 2.0;
  t << 0.0, 0.0;
  pass = pass && std::abs(layer_loss(s, t, 0.5, 1.0) - 1.625) < 1e-12;

  Matrix<double> z(1, 1);
  z << 0.25;
  pass = pass && std::abs(layer_loss(z, z, 1.0, 1.0)) < 1e-12;

  // Continuity at |u-v| = beta, probed at beta +/- 1e-6: the symmetric
  // difference equals 2e-6 (unit slope) to within 1e-9.
  const double beta = 1.0, eps = 1e-6;
  const double gap = smooth_l1(beta + eps, 0.0, beta) - smooth_l1(beta - eps, 0.0, beta);
  pass = pass && std::abs(gap - 2 * eps) < 1e-9;

  char detail[96];
  std::snprintf(detail, sizeof(detail), "hand values 0/0.125/1.5/1.625 ok, kink gap err %.2e",
                std::abs(gap - 2 * eps));
  report(5, "loss-formula unit suite", pass, detail);
}

// ---------------------------------------------------------------------------
// 6. Gradient correctness on the tiny model in 64-bit, both branches.
void criterion_grad_check() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig cfg = ModelConfig::tiny();
  auto model = ModelParams<double>::random_init(cfg, 42);
  auto comp = CompressorParams<double>::init(cfg, 8, 16.0, 1);
  std::mt19937_64 rng(99);
  visit_compressor_tensors(comp, [&](const std::string&, Matrix<double>& m) {
    Matrix<double> r(m.rows(), m.cols());
    fill_normal(r, rng, 0.05);
    m += r;
  });

  SegmentationConfig seg;
  seg.max_segment_tokens = 8;  // S = 8 per the criterion
  CompressionConfig ccfg;
  ccfg.max_segment_tokens = 8;

  auto sample = to_sample(make_corpus({.n_facts = 2, .filler_sentences_per_fact = 1,
                                       .seed = 7})[0]);
  const double quad = grad_check(cfg, model, comp, sample, seg, ccfg, 100.0, 1e-5, 50, 11);
  const double lin = grad_check(cfg, model, comp, sample, seg, ccfg, 1e-4, 1e-5, 50, 12);
  const bool pass = quad < 1e-4 && lin < 1e-4;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "max rel err: quadratic %.2e, linear %.2e (eps=1e-5, 50 entries each), %.1fs",
                quad, lin, seconds_since(t0));
  report(6, "gradient correctness < 1e-4", pass, detail);
}

// ---------------------------------------------------------------------------
// 7. Reusability and cache laws.
void criterion_reusability() {
  ModelConfig cfg;  // desk-scale defaults
  auto model = ModelParams<float>::random_init(cfg, 42);
  auto comp = CompressorParams<float>::init(cfg, 8, 16.0, 1);
  SegmentationConfig seg;
  CompressionConfig ccfg;

  // (a) compress(A || B) == compress(A) || compress(B) when A ends at a boundary.
  const std::string text_a = "document alpha talks about rivers. it has exactly two sentences.";
  const std::string text_b = "document bravo is rather different and quite a bit longer than that.";
  auto ces_ab = compress_context(cfg, model, comp, Tokenizer::encode(text_a + text_b), seg, ccfg);
  auto ces_a = compress_context(cfg, model, comp, Tokenizer::encode(text_a), seg, ccfg);
  auto ces_b = compress_context(cfg, model, comp, Tokenizer::encode(text_b), seg, ccfg);
  bool concat_ok = ces_ab.size() == ces_a.size() + ces_b.size();
  for (std::size_t i = 0; concat_ok && i < ces_ab.size(); ++i) {
    const auto& expect = i < ces_a.size() ? ces_a[i] : ces_b[i - ces_a.size()];
    concat_ok = bit_equal(ces_ab[i].concept_embeddings, expect.concept_embeddings) &&
                ces_ab[i].source_hash == expect.source_hash;
  }

  // (b) end-to-end generation bit-identical with cache on/off.
  InferenceRequest req;
  req.context_text = text_a + " " + text_b;
  req.question_text = "which document?";
  req.max_new_tokens = 12;
  auto plain = answer<float>(cfg, model, comp, req, seg, ccfg, nullptr);
  CeCache<float> cache;
  auto cached = answer(cfg, model, comp, req, seg, ccfg, &cache);
  auto warm = answer(cfg, model, comp, req, seg, ccfg, &cache);
  const bool transparent = plain.token_ids == cached.token_ids &&
                           plain.token_ids == warm.token_ids && plain.text == warm.text;

  // (c) query {A,B} then {A,C}: A's segments all hit.
  CeCache<float> cache2;
  const std::string text_c = "document charlie closes the set with one more sentence.";
  InferenceRequest q1;
  q1.context_text = text_a + " " + text_b;
  q1.question_text = "compare a and b";
  q1.max_new_tokens = 1;
  answer(cfg, model, comp, q1, seg, ccfg, &cache2);
  const auto before = cache2.stats();

  InferenceRequest q2;
  q2.context_text = text_a + " " + text_c;
  q2.question_text = "compare a and c";
  q2.max_new_tokens = 1;
  answer(cfg, model, comp, q2, seg, ccfg, &cache2);
  const auto after = cache2.stats();

  // The space after A attaches to the following segment, so document A
  // contributes exactly segment(A) reusable segments to both contexts.
  const std::size_t a_segments = segment(Tokenizer::encode(text_a), seg).size();
  const bool shared_hits = after.hits - before.hits >= a_segments;

  const bool pass = concat_ok && transparent && shared_hits;
  char detail[200];
  std::snprintf(detail, sizeof(detail),
                "concat bit-identical=%d, cache-transparent=%d, shared-doc hits %llu >= %zu",
                concat_ok ? 1 : 0, transparent ? 1 : 0,
                static_cast<unsigned long long>(after.hits - before.hits), a_segments);
  report(7, "reusability and cache laws", pass, detail);
}

// ---------------------------------------------------------------------------
// 8 + 9. Training progress on the fixed corpus, then functional recovery.
void criterion_training_and_recovery() {
  auto t0 = std::chrono::steady_clock::now();
  ModelConfig cfg = ModelConfig::tiny();
  auto model = ModelParams<float>::random_init(cfg, 42);
  SegmentationConfig seg;
  CompressionConfig ccfg;

  // Fixed seeded corpus: 64 samples, contexts <= 512 tokens.
  std::vector<DistillSample> samples;
  std::size_t max_ctx = 0;
  for (std::uint64_t corpus_seed = 0; corpus_seed < 8; ++corpus_seed) {
    for (const auto& r : make_corpus({.n_facts = 8, .filler_sentences_per_fact = 1,
                                      .seed = corpus_seed})) {
      samples.push_back(to_sample(r));
      max_ctx = std::max(max_ctx, samples.back().context_tokens.size());
    }
  }

  TrainConfig tc;  // stock defaults: lr 1e-4, batch 4, beta 1
  tc.max_steps = 500;

  const auto run_training = [&](CompressorParams<float>& comp) {
    AdamState<float> adam = AdamState<float>::init(comp);
    double first_loss = -1, last_loss = 0;
    for (int step = 0; step < tc.max_steps; ++step) {
      std::vector<DistillSample> batch;
      for (int b = 0; b < tc.batch_size; ++b) {
        batch.push_back(samples[(static_cast<std::size_t>(step) * tc.batch_size + b) %
                                samples.size()]);
      }
      last_loss = train_step(cfg, model, comp, batch, seg, ccfg, tc, adam);
      if (step == 0) first_loss = last_loss;
    }
    return std::make_pair(first_loss, last_loss);
  };

  const std::string base_digest = model_digest(model);
  auto comp = CompressorParams<float>::init(cfg, 8, 16.0, 1);
  auto [loss0, loss500] = run_training(comp);

  auto comp_rerun = CompressorParams<float>::init(cfg, 8, 16.0, 1);
  auto [r0, r500] = run_training(comp_rerun);
  const bool deterministic = compressor_digest(comp) == compressor_digest(comp_rerun) &&
                             loss0 == r0 && loss500 == r500;
  const bool frozen = model_digest(model) == base_digest;
  const bool halved = loss500 < 0.5 * loss0;
  const bool pass8 = halved && deterministic && frozen && samples.size() == 64 && max_ctx <= 512;

  char detail[240];
  std::snprintf(detail, sizeof(detail),
                "loss %.3e -> %.3e (x%.3f), deterministic=%d, frozen-base=%d, 64 samples, "
                "max ctx %zu, %.0fs",
                loss0, loss500, loss500 / loss0, deterministic ? 1 : 0, frozen ? 1 : 0, max_ctx,
                seconds_since(t0));
  report(8, "training halves the loss in 500 steps", pass8, detail);

  // 9. Functional recovery at training length plus the 8x scalability probe.
  t0 = std::chrono::steady_clock::now();
  std::vector<CorpusRecord> heldout;
  for (std::uint64_t corpus_seed = 100; corpus_seed < 104; ++corpus_seed) {
    auto batch = make_corpus({.n_facts = 8, .filler_sentences_per_fact = 1, .seed = corpus_seed});
    heldout.insert(heldout.end(), batch.begin(), batch.end());
  }
  auto em_unc = evaluate(cfg, model, comp, heldout, false, seg, ccfg, 8);
  auto em_cmp = evaluate(cfg, model, comp, heldout, true, seg, ccfg, 8);
  const double gap = std::abs(em_cmp.exact_match_rate - em_unc.exact_match_rate);
  const bool pass9 = gap <= 0.10;

  // Scalability probe: contexts ~8x the training length, trained compressor
  // reused without retraining; both curves reported, accuracy not asserted.
  auto probe = make_corpus({.n_facts = 64, .filler_sentences_per_fact = 1, .seed = 200});
  auto probe_unc = evaluate(cfg, model, comp, probe, false, seg, ccfg, 8);
  auto probe_cmp = evaluate(cfg, model, comp, probe, true, seg, ccfg, 8);
  std::printf("    probe (8x length, %zu tokens): uncompressed EM %.3f, compressed EM %.3f\n",
              Tokenizer::encode(probe[0].context).size(), probe_unc.exact_match_rate,
              probe_cmp.exact_match_rate);

  char detail9[240];
  std::snprintf(detail9, sizeof(detail9),
                "heldout EM: uncompressed %.3f vs compressed %.3f, |gap| %.3f <= 0.10; "
                "8x probe ran to completion, %.0fs",
                em_unc.exact_match_rate, em_cmp.exact_match_rate, gap, seconds_since(t0));
  report(9, "end-to-end functional recovery within 10 points", pass9, detail9);
}

// ---------------------------------------------------------------------------
// 10. Incremental-decode oracle over 100 random prefixes.
void criterion_incremental_decode() {
  ModelConfig cfg;  // desk-scale defaults
  auto model = ModelParams<float>::random_init(cfg, 42);

  std::mt19937_64 rng(123);
  std::uniform_int_distribution<int> plen(1, 48);
  int failures = 0;
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = plen(rng);
    Matrix<float> x(n + 1, cfg.hidden_dim);
    fill_normal(x, rng, 1.0);

    auto pre = prefill(cfg, model, Matrix<float>(x.topRows(n)));
    Matrix<float> e = x.bottomRows(1);
    Matrix<float> step_logits = decode_step(cfg, model, pre.cache, e);
    auto trace = forward(cfg, model, x);

    double trial_worst = 0;
    for (Eigen::Index j = 0; j < step_logits.cols(); ++j) {
      const double a = step_logits(0, j);
      const double b = trace.logits(n, j);
      trial_worst = std::max(trial_worst, std::abs(a - b) / (1.0 + std::abs(b)));
    }
    worst = std::max(worst, trial_worst);
    if (trial_worst > 1e-5) ++failures;
  }
  char detail[128];
  std::snprintf(detail, sizeof(detail), "100 prefixes, worst rel err %.2e, failures %d", worst,
                failures);
  report(10, "incremental-decode oracle within 1e-5", failures == 0, detail);
}

}  // namespace

int main() {
  std::printf("compllm acceptance suite\n");
  TinyRig rig;

  criterion_prefill_ratio(rig);   // also reports criterion 3
  criterion_decode_ratio(rig);
  criterion_compression_slope(rig);
  criterion_loss_units();
  criterion_grad_check();
  criterion_reusability();
  criterion_training_and_recovery();
  criterion_incremental_decode();

  std::printf("%d criteria failed\n", g_failures);
  return g_failures;
}
