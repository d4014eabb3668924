#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "compllm/backward.hpp"
#include "compllm/digest.hpp"
#include "compllm/model.hpp"
#include "compllm/segmenter.hpp"

namespace compllm {

struct CompressionConfig {
  int compression_rate = 2;   // C
  int max_segment_tokens = 20;  // S, shared with SegmentationConfig

  void validate() const {
    if (compression_rate < 1) throw InputError("compression_rate must be >= 1");
    if (max_segment_tokens < 2) throw InputError("max_segment_tokens must be >= 2");
  }
};

// Number of concept embeddings for a segment: ceil(len / C). Partial segments
// round up so capacity is never dropped.
inline int ce_count(int segment_len, int compression_rate) {
  return (segment_len + compression_rate - 1) / compression_rate;
}

// The only trainable parameters: LoRA pairs on every layer's query and value
// projections plus one output linear head. Zero-initialized up matrices make
// the adapted forward identical to the base forward at initialization, and
// the identity head keeps CEs equal to real hidden states at that point.
template <class S>
struct CompressorParams {
  int rank = 8;
  double alpha = 16.0;
  std::vector<LayerAdapters<S>> layers;
  Matrix<S> head_weight;  // hidden x hidden
  Matrix<S> head_bias;    // 1 x hidden

  S lora_scale() const { return static_cast<S>(alpha / rank); }

  static CompressorParams init(const ModelConfig& cfg, int rank = 8, double alpha = 16.0,
                               std::uint64_t seed = 1) {
    cfg.validate();
    if (rank < 1) throw InputError("CompressorParams: rank must be >= 1");
    std::mt19937_64 rng(seed);
    CompressorParams p;
    p.rank = rank;
    p.alpha = alpha;
    p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& l : p.layers) {
      for (LoraPair<S>* pair : {&l.q, &l.v}) {
        pair->down.resize(rank, cfg.hidden_dim);
        fill_normal(pair->down, rng, 0.02);
        pair->up = Matrix<S>::Zero(cfg.hidden_dim, rank);
      }
    }
    p.head_weight = Matrix<S>::Identity(cfg.hidden_dim, cfg.hidden_dim);
    p.head_bias = Matrix<S>::Zero(1, cfg.hidden_dim);
    return p;
  }
};

template <class P, class F>
void visit_compressor_tensors(P& p, F&& f) {
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string pre = "lora." + std::to_string(l) + ".";
    f(pre + "q.down", p.layers[l].q.down);
    f(pre + "q.up", p.layers[l].q.up);
    f(pre + "v.down", p.layers[l].v.down);
    f(pre + "v.up", p.layers[l].v.up);
  }
  f(std::string("head.weight"), p.head_weight);
  f(std::string("head.bias"), p.head_bias);
}

template <class S>
CompressorParams<S> zeros_like(const CompressorParams<S>& p) {
  CompressorParams<S> z;
  z.rank = p.rank;
  z.alpha = p.alpha;
  z.layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    z.layers[l].q.down = Matrix<S>::Zero(p.layers[l].q.down.rows(), p.layers[l].q.down.cols());
    z.layers[l].q.up = Matrix<S>::Zero(p.layers[l].q.up.rows(), p.layers[l].q.up.cols());
    z.layers[l].v.down = Matrix<S>::Zero(p.layers[l].v.down.rows(), p.layers[l].v.down.cols());
    z.layers[l].v.up = Matrix<S>::Zero(p.layers[l].v.up.rows(), p.layers[l].v.up.cols());
  }
  z.head_weight = Matrix<S>::Zero(p.head_weight.rows(), p.head_weight.cols());
  z.head_bias = Matrix<S>::Zero(p.head_bias.rows(), p.head_bias.cols());
  return z;
}

// Compressor version digest: covers rank, alpha (as f32) and every trainable
// tensor. Any retraining changes it, so stale cache entries cannot be served.
template <class S>
std::string compressor_digest(const CompressorParams<S>& p) {
  Sha256 h;
  h.update_value(static_cast<std::uint32_t>(p.rank));
  h.update_value(static_cast<float>(p.alpha));
  visit_compressor_tensors(p, [&](const std::string&, const Matrix<S>& m) { digest_matrix(h, m); });
  return to_hex(h.finish());
}

template <class S>
bool all_finite(const CompressorParams<S>& p) {
  bool ok = true;
  visit_compressor_tensors(p, [&](const std::string&, const Matrix<S>& m) {
    if (!m.allFinite()) ok = false;
  });
  return ok;
}

template <class S>
void save_compressor(const std::string& path, const CompressorParams<S>& p,
                     nlohmann::json extra_meta = {}) {
  ContainerWriter w;
  visit_compressor_tensors(p, [&](const std::string& name, const Matrix<S>& m) {
    w.add_matrix(name, m);
  });
  nlohmann::json meta = std::move(extra_meta);
  meta["kind"] = "compressor";
  meta["rank"] = p.rank;
  meta["alpha"] = p.alpha;
  w.set_meta(std::move(meta));
  w.write(path);
}

template <class S>
CompressorParams<S> load_compressor_from(const Container& c, const ModelConfig& cfg) {
  const auto& meta = c.meta();
  CompressorParams<S> p;
  p.rank = meta.at("rank");
  p.alpha = meta.at("alpha");
  p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  visit_compressor_tensors(p, [&](const std::string& name, Matrix<S>& m) {
    m = c.matrix<S>(name);
  });
  if (!all_finite(p)) throw IoError("compressor checkpoint contains non-finite values");
  return p;
}

template <class S>
CompressorParams<S> load_compressor(const std::string& path, const ModelConfig& cfg) {
  return load_compressor_from<S>(Container::read(path), cfg);
}

template <class S>
struct CompressedSegment {
  Matrix<S> concept_embeddings;  // m x hidden, m = ceil(len / C)
  std::string source_hash;       // hex digest over (token ids, compressor digest, C)
};

inline std::string segment_source_hash(const std::vector<TokenId>& token_ids,
                                       const std::string& compressor_digest_hex,
                                       int compression_rate) {
  Sha256 h;
  for (TokenId id : token_ids) h.update_value(static_cast<std::uint32_t>(id));
  h.update(compressor_digest_hex.data(), compressor_digest_hex.size());
  h.update_value(static_cast<std::uint32_t>(compression_rate));
  return to_hex(h.finish());
}

namespace detail {

// Worker shared by the plain and taped entry points; the compressor digest is
// computed once by the caller.
template <class S>
CompressedSegment<S> compress_segment_impl(const ModelConfig& cfg, const ModelParams<S>& model,
                                           const CompressorParams<S>& comp, const Segment& seg,
                                           const CompressionConfig& ccfg,
                                           const std::string& digest_hex, PairCounter* counter,
                                           ForwardTape<S>* tape) {
  const int len = static_cast<int>(seg.token_ids.size());
  if (len < 1) throw InputError("compress_segment: empty segment");
  if (len > ccfg.max_segment_tokens) {
    throw InputError("compress_segment: segment exceeds max_segment_tokens");
  }
  const int m = ce_count(len, ccfg.compression_rate);

  // [TE(segment tokens); m EOS query slots], segment-local positions from 0.
  Matrix<S> input(len + m, cfg.hidden_dim);
  input.topRows(len) = embed(cfg, model, seg.token_ids);
  for (int i = 0; i < m; ++i) {
    input.row(len + i) = model.token_embedding.row(Tokenizer::kEos);
  }

  ForwardHooks<S> hooks;
  hooks.adapters = &comp.layers;
  hooks.lora_scale = comp.lora_scale();
  hooks.counter = counter;
  hooks.tape = tape;
  ForwardTrace<S> trace = forward(cfg, model, input, hooks);

  CompressedSegment<S> out;
  out.concept_embeddings = trace.final_normed.middleRows(len, m) * comp.head_weight;
  out.concept_embeddings.rowwise() += comp.head_bias.row(0);
  out.source_hash = segment_source_hash(seg.token_ids, digest_hex, ccfg.compression_rate);
  return out;
}

}  // namespace detail

template <class S>
CompressedSegment<S> compress_segment(const ModelConfig& cfg, const ModelParams<S>& model,
                                      const CompressorParams<S>& comp, const Segment& seg,
                                      const CompressionConfig& ccfg = {},
                                      PairCounter* counter = nullptr) {
  ccfg.validate();
  return detail::compress_segment_impl(cfg, model, comp, seg, ccfg, compressor_digest(comp),
                                       counter, static_cast<ForwardTape<S>*>(nullptr));
}

// Segment the context and compress each segment independently, in order.
template <class S>
std::vector<CompressedSegment<S>> compress_context(const ModelConfig& cfg,
                                                   const ModelParams<S>& model,
                                                   const CompressorParams<S>& comp,
                                                   const std::vector<TokenId>& token_ids,
                                                   const SegmentationConfig& seg_cfg = {},
                                                   const CompressionConfig& ccfg = {},
                                                   PairCounter* counter = nullptr) {
  ccfg.validate();
  const std::string digest = compressor_digest(comp);
  std::vector<CompressedSegment<S>> out;
  for (const Segment& seg : segment(token_ids, seg_cfg)) {
    out.push_back(detail::compress_segment_impl(cfg, model, comp, seg, ccfg, digest, counter,
                                                static_cast<ForwardTape<S>*>(nullptr)));
  }
  return out;
}

// Training-time variant that retains the forward tape per segment.
template <class S>
struct TapedSegmentCompression {
  int segment_len = 0;
  int n_ce = 0;
  CompressedSegment<S> result;
  ForwardTape<S> tape;
  Matrix<S> final_normed;  // full (len + m) x hidden final-norm output
};

template <class S>
std::vector<TapedSegmentCompression<S>> compress_context_taped(
    const ModelConfig& cfg, const ModelParams<S>& model, const CompressorParams<S>& comp,
    const std::vector<TokenId>& token_ids, const SegmentationConfig& seg_cfg,
    const CompressionConfig& ccfg, PairCounter* counter = nullptr) {
  ccfg.validate();
  const std::string digest = compressor_digest(comp);
  std::vector<TapedSegmentCompression<S>> out;
  for (const Segment& seg : segment(token_ids, seg_cfg)) {
    TapedSegmentCompression<S> t;
    t.segment_len = static_cast<int>(seg.token_ids.size());
    t.n_ce = ce_count(t.segment_len, ccfg.compression_rate);
    t.result = detail::compress_segment_impl(cfg, model, comp, seg, ccfg, digest, counter, &t.tape);
    // Recompute the final-norm rows for the head backward.
    detail::rmsnorm(t.tape.x_final, model.final_norm, t.final_normed,
                    static_cast<ColVector<S>*>(nullptr));
    out.push_back(std::move(t));
  }
  return out;
}

// Accumulates gradients of one segment's CEs into the compressor grads.
template <class S>
void compress_segment_backward(const ModelConfig& cfg, const ModelParams<S>& model,
                               const CompressorParams<S>& comp,
                               const TapedSegmentCompression<S>& taped, const Matrix<S>& d_ce,
                               CompressorParams<S>& grads) {
  const int len = taped.segment_len;
  const int m = taped.n_ce;
  if (d_ce.rows() != m || d_ce.cols() != cfg.hidden_dim) {
    throw InputError("compress_segment_backward: d_ce shape mismatch");
  }

  auto y_eos = taped.final_normed.middleRows(len, m);
  grads.head_weight.noalias() += y_eos.transpose() * d_ce;
  grads.head_bias.row(0) += d_ce.colwise().sum();

  Matrix<S> d_final = Matrix<S>::Zero(len + m, cfg.hidden_dim);
  d_final.middleRows(len, m).noalias() = d_ce * comp.head_weight.transpose();

  BackwardHooks<S> hooks;
  hooks.adapters = &comp.layers;
  hooks.lora_scale = comp.lora_scale();
  hooks.adapter_grads = &grads.layers;
  backward<S>(cfg, model, taped.tape, nullptr, &d_final, hooks);
}

// Assembles the model input: all CE rows in order, then the question's TEs.
template <class S>
Matrix<S> effective_sequence(const ModelConfig& cfg, const ModelParams<S>& model,
                             const std::vector<CompressedSegment<S>>& ces,
                             const std::vector<TokenId>& question_token_ids) {
  Eigen::Index total = 0;
  for (const auto& c : ces) total += c.concept_embeddings.rows();
  Matrix<S> out(total + static_cast<Eigen::Index>(question_token_ids.size()), cfg.hidden_dim);
  Eigen::Index row = 0;
  for (const auto& c : ces) {
    out.middleRows(row, c.concept_embeddings.rows()) = c.concept_embeddings;
    row += c.concept_embeddings.rows();
  }
  if (!question_token_ids.empty()) {
    out.bottomRows(static_cast<Eigen::Index>(question_token_ids.size())) =
        embed(cfg, model, question_token_ids);
  }
  return out;
}

}  // namespace compllm
