#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "compllm/cecache.hpp"
#include "compllm/compressor.hpp"
#include "compllm/model.hpp"
#include "compllm/segmenter.hpp"
#include "compllm/tokenizer.hpp"

namespace compllm {

struct InferenceRequest {
  std::string context_text;
  std::string question_text;
  bool use_compression = true;
  int max_new_tokens = 1;  // T
};

// Pair counts are exact integers (per layer per head) and are the acceptance
// metric; millisecond timers are informational.
struct CostReport {
  std::uint64_t compression_pairs = 0;
  std::uint64_t prefill_pairs = 0;
  std::uint64_t decode_pairs = 0;
  double compression_ms = 0;
  double prefill_ms = 0;
  double decode_ms = 0;
  std::uint64_t kv_entries = 0;     // effective_len + generated tokens
  std::uint64_t effective_len = 0;  // rows fed to the prefill

  // TTFT with online compression; when CEs come from a warm cache the
  // compression term is zero and this reduces to the prefill time.
  double ttft_ms() const { return compression_ms + prefill_ms; }
};

template <class S>
struct AnswerResult {
  std::string text;
  std::vector<TokenId> token_ids;
  bool truncated = false;
  CostReport cost;
};

namespace detail {

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// Compress (optionally through the cache), assemble the effective sequence,
// prefill, then decode greedily.
template <class S>
AnswerResult<S> answer(const ModelConfig& cfg, const ModelParams<S>& model,
                       const CompressorParams<S>& comp, const InferenceRequest& req,
                       const SegmentationConfig& seg_cfg = {}, const CompressionConfig& ccfg = {},
                       CeCache<S>* cache = nullptr) {
  if (req.max_new_tokens < 1) throw InputError("answer: max_new_tokens must be >= 1");

  const std::vector<TokenId> context_tokens = Tokenizer::encode(req.context_text);
  const std::vector<TokenId> question_tokens = Tokenizer::encode(req.question_text);

  AnswerResult<S> out;
  PairCounter compression_counter;
  Matrix<S> effective;

  if (req.use_compression) {
    if (context_tokens.empty()) throw InputError("answer: empty context");
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<CompressedSegment<S>> ces;
    if (cache) {
      for (const Segment& seg : segment(context_tokens, seg_cfg)) {
        ces.push_back(cache->get_or_compress(cfg, model, comp, seg, ccfg, &compression_counter));
      }
    } else {
      ces = compress_context(cfg, model, comp, context_tokens, seg_cfg, ccfg,
                             &compression_counter);
    }
    effective = effective_sequence(cfg, model, ces, question_tokens);
    out.cost.compression_ms = detail::elapsed_ms(t0);
  } else {
    std::vector<TokenId> all = context_tokens;
    all.insert(all.end(), question_tokens.begin(), question_tokens.end());
    effective = embed(cfg, model, all);
  }
  out.cost.compression_pairs = compression_counter.pairs;
  out.cost.effective_len = static_cast<std::uint64_t>(effective.rows());

  if (effective.rows() == 0) throw InputError("answer: nothing to prefill");
  if (effective.rows() + req.max_new_tokens > cfg.max_positions) {
    throw CapacityError("answer: effective length plus max_new_tokens exceeds max_positions");
  }

  PairCounter prefill_counter;
  const auto t1 = std::chrono::steady_clock::now();
  PrefillResult<S> pre = prefill(cfg, model, effective, &prefill_counter,
                                 static_cast<int>(effective.rows()) + req.max_new_tokens);
  out.cost.prefill_ms = detail::elapsed_ms(t1);
  out.cost.prefill_pairs = prefill_counter.pairs;

  PairCounter decode_counter;
  const auto t2 = std::chrono::steady_clock::now();
  Matrix<S> logits = std::move(pre.last_logits);
  while (true) {
    const TokenId tok = argmax_token(logits);
    if (tok == Tokenizer::kEos) break;
    out.token_ids.push_back(tok);
    if (static_cast<int>(out.token_ids.size()) >= req.max_new_tokens) break;
    if (pre.cache.current_len + 1 > cfg.max_positions) {
      out.truncated = true;
      break;
    }
    Matrix<S> e = model.token_embedding.row(tok);
    logits = decode_step(cfg, model, pre.cache, e, &decode_counter);
  }
  out.cost.decode_ms = detail::elapsed_ms(t2);
  out.cost.decode_pairs = decode_counter.pairs;
  out.cost.kv_entries = out.cost.effective_len + out.token_ids.size();
  out.text = Tokenizer::decode(out.token_ids);
  return out;
}

struct BenchRow {
  std::uint64_t n = 0;  // context token count
  bool compressed = false;
  CostReport cost;
};

// Deterministic boundary-free context: lowercase letters only, so the
// segmenter hard-splits into exact S-token chunks.
inline std::string boundary_free_context(std::uint64_t n, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL + n));
  std::uniform_int_distribution<int> letter('a', 'z');
  std::string s(n, 'a');
  for (auto& c : s) c = static_cast<char>(letter(rng));
  return s;
}

// Cost accounting for one request with a fixed decode budget: exactly
// max_new_tokens decode steps are taken regardless of EOS, so decode_pairs is
// a function of lengths alone.
template <class S>
CostReport bench_cost(const ModelConfig& cfg, const ModelParams<S>& model,
                      const CompressorParams<S>& comp, const InferenceRequest& req,
                      const SegmentationConfig& seg_cfg = {}, const CompressionConfig& ccfg = {},
                      CeCache<S>* cache = nullptr) {
  if (req.max_new_tokens < 1) throw InputError("bench_cost: max_new_tokens must be >= 1");

  const std::vector<TokenId> context_tokens = Tokenizer::encode(req.context_text);
  const std::vector<TokenId> question_tokens = Tokenizer::encode(req.question_text);

  CostReport cost;
  PairCounter compression_counter;
  Matrix<S> effective;
  if (req.use_compression) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<CompressedSegment<S>> ces;
    if (cache) {
      for (const Segment& seg : segment(context_tokens, seg_cfg)) {
        ces.push_back(cache->get_or_compress(cfg, model, comp, seg, ccfg, &compression_counter));
      }
    } else {
      ces = compress_context(cfg, model, comp, context_tokens, seg_cfg, ccfg,
                             &compression_counter);
    }
    effective = effective_sequence(cfg, model, ces, question_tokens);
    cost.compression_ms = detail::elapsed_ms(t0);
  } else {
    std::vector<TokenId> all = context_tokens;
    all.insert(all.end(), question_tokens.begin(), question_tokens.end());
    effective = embed(cfg, model, all);
  }
  cost.compression_pairs = compression_counter.pairs;
  cost.effective_len = static_cast<std::uint64_t>(effective.rows());
  if (effective.rows() + req.max_new_tokens > cfg.max_positions) {
    throw CapacityError("bench_cost: effective length plus max_new_tokens exceeds max_positions");
  }

  PairCounter prefill_counter;
  const auto t1 = std::chrono::steady_clock::now();
  PrefillResult<S> pre = prefill(cfg, model, effective, &prefill_counter,
                                 static_cast<int>(effective.rows()) + req.max_new_tokens);
  cost.prefill_ms = detail::elapsed_ms(t1);
  cost.prefill_pairs = prefill_counter.pairs;

  PairCounter decode_counter;
  const auto t2 = std::chrono::steady_clock::now();
  Matrix<S> logits = std::move(pre.last_logits);
  for (int t = 1; t < req.max_new_tokens; ++t) {
    const TokenId tok = argmax_token(logits);
    Matrix<S> e = model.token_embedding.row(tok);
    logits = decode_step(cfg, model, pre.cache, e, &decode_counter);
  }
  cost.decode_ms = detail::elapsed_ms(t2);
  cost.decode_pairs = decode_counter.pairs;
  cost.kv_entries = cost.effective_len + static_cast<std::uint64_t>(req.max_new_tokens);
  return cost;
}

// One row per length per variant, lengths ascending.
template <class S>
std::vector<BenchRow> bench_sweep(const ModelConfig& cfg, const ModelParams<S>& model,
                                  const CompressorParams<S>& comp,
                                  const std::vector<std::uint64_t>& lengths, int max_new_tokens,
                                  const SegmentationConfig& seg_cfg = {},
                                  const CompressionConfig& ccfg = {},
                                  const std::string& question = "",
                                  CeCache<S>* cache = nullptr) {
  for (std::size_t i = 1; i < lengths.size(); ++i) {
    if (lengths[i] <= lengths[i - 1]) throw InputError("bench_sweep: lengths must be ascending");
  }
  std::vector<BenchRow> rows;
  for (std::uint64_t n : lengths) {
    InferenceRequest req;
    req.context_text = boundary_free_context(n);
    req.question_text = question;
    req.max_new_tokens = max_new_tokens;
    for (bool compressed : {false, true}) {
      req.use_compression = compressed;
      BenchRow row;
      row.n = n;
      row.compressed = compressed;
      row.cost = bench_cost(cfg, model, comp, req, seg_cfg, ccfg, cache);
      rows.push_back(row);
    }
  }
  return rows;
}

// Least-squares slope of log(y) against log(x); zero-valued samples are
// rejected since the laws under test are strictly positive counts.
inline double fit_loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw InputError("fit_loglog_slope: need >= 2 points");
  double mx = 0, my = 0;
  std::vector<double> lx(xs.size()), ly(ys.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] <= 0 || ys[i] <= 0) throw InputError("fit_loglog_slope: values must be positive");
    lx[i] = std::log(xs[i]);
    ly[i] = std::log(ys[i]);
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(xs.size());
  my /= static_cast<double>(ys.size());
  double num = 0, den = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    num += (lx[i] - mx) * (ly[i] - my);
    den += (lx[i] - mx) * (lx[i] - mx);
  }
  return num / den;
}

struct BenchSummary {
  double compression_pairs_slope = 0;    // vs N, compressed rows
  double uncompressed_prefill_slope = 0;  // vs N
  double compressed_prefill_slope = 0;
  double prefill_ratio_at_max = 0;  // uncompressed / compressed, largest N
  double decode_ratio_at_max = 0;
};

inline BenchSummary bench_summary(const std::vector<BenchRow>& rows) {
  std::vector<double> ns, comp_pairs, unc_prefill, cmp_prefill;
  const BenchRow* last_unc = nullptr;
  const BenchRow* last_cmp = nullptr;
  for (const BenchRow& r : rows) {
    if (r.compressed) {
      ns.push_back(static_cast<double>(r.n));
      comp_pairs.push_back(static_cast<double>(r.cost.compression_pairs));
      cmp_prefill.push_back(static_cast<double>(r.cost.prefill_pairs));
      last_cmp = &r;
    } else {
      unc_prefill.push_back(static_cast<double>(r.cost.prefill_pairs));
      last_unc = &r;
    }
  }
  BenchSummary s;
  if (ns.size() >= 2) {  // slopes need at least two lengths
    s.compression_pairs_slope = fit_loglog_slope(ns, comp_pairs);
    s.uncompressed_prefill_slope = fit_loglog_slope(ns, unc_prefill);
    s.compressed_prefill_slope = fit_loglog_slope(ns, cmp_prefill);
  }
  if (last_unc && last_cmp) {
    s.prefill_ratio_at_max = static_cast<double>(last_unc->cost.prefill_pairs) /
                             static_cast<double>(last_cmp->cost.prefill_pairs);
    if (last_cmp->cost.decode_pairs > 0) {
      s.decode_ratio_at_max = static_cast<double>(last_unc->cost.decode_pairs) /
                              static_cast<double>(last_cmp->cost.decode_pairs);
    }
  }
  return s;
}

inline std::string bench_table_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "n,variant,compression_pairs,prefill_pairs,decode_pairs,"
        "compression_ms,prefill_ms,decode_ms,ttft_ms,kv_entries,effective_len\n";
  for (const BenchRow& r : rows) {
    os << r.n << ',' << (r.compressed ? "compressed" : "uncompressed") << ','
       << r.cost.compression_pairs << ',' << r.cost.prefill_pairs << ',' << r.cost.decode_pairs
       << ',' << r.cost.compression_ms << ',' << r.cost.prefill_ms << ',' << r.cost.decode_ms
       << ',' << r.cost.ttft_ms() << ',' << r.cost.kv_entries << ',' << r.cost.effective_len
       << '\n';
  }
  return os.str();
}

inline nlohmann::json bench_summary_json(const std::vector<BenchRow>& rows) {
  const BenchSummary s = bench_summary(rows);
  nlohmann::json j;
  j["compression_pairs_slope"] = s.compression_pairs_slope;
  j["uncompressed_prefill_slope"] = s.uncompressed_prefill_slope;
  j["compressed_prefill_slope"] = s.compressed_prefill_slope;
  j["prefill_ratio_at_max"] = s.prefill_ratio_at_max;
  j["decode_ratio_at_max"] = s.decode_ratio_at_max;
  return j;
}

// Smallest benchmarked N where the compressed path wins, by exact pair counts
// and by measured wall-clock, reported separately. -1 when no benchmarked N
// crosses.
struct CrossoverReport {
  std::int64_t pair_crossover_n = -1;
  std::int64_t wallclock_crossover_n = -1;
};

inline CrossoverReport crossover_report(const std::vector<BenchRow>& rows) {
  CrossoverReport rep;
  for (std::size_t i = 0; i + 1 < rows.size(); i += 2) {
    const BenchRow& unc = rows[i].compressed ? rows[i + 1] : rows[i];
    const BenchRow& cmp = rows[i].compressed ? rows[i] : rows[i + 1];
    const std::uint64_t cmp_ttft_pairs = cmp.cost.compression_pairs + cmp.cost.prefill_pairs;
    if (rep.pair_crossover_n < 0 && cmp_ttft_pairs < unc.cost.prefill_pairs) {
      rep.pair_crossover_n = static_cast<std::int64_t>(unc.n);
    }
    if (rep.wallclock_crossover_n < 0 && cmp.cost.ttft_ms() < unc.cost.ttft_ms()) {
      rep.wallclock_crossover_n = static_cast<std::int64_t>(unc.n);
    }
  }
  return rep;
}

}  // namespace compllm
