#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "compllm/common.hpp"
#include "compllm/digest.hpp"
#include "compllm/tensorio.hpp"
#include "compllm/tokenizer.hpp"

namespace compllm {

struct ModelConfig {
  int n_layers = 4;       // L
  int hidden_dim = 64;    // d
  int n_heads = 4;
  int head_dim = 16;      // hidden_dim / n_heads
  int ffn_dim = 256;
  int vocab_size = Tokenizer::kVocabSize;
  int max_positions = 32768;

  void validate() const {
    if (n_layers <= 0 || hidden_dim <= 0 || n_heads <= 0 || head_dim <= 0 || ffn_dim <= 0 ||
        vocab_size <= 0 || max_positions <= 0) {
      throw InputError("ModelConfig: all fields must be positive");
    }
    if (hidden_dim != n_heads * head_dim) {
      throw InputError("ModelConfig: hidden_dim must equal n_heads * head_dim");
    }
    if (head_dim % 2 != 0) throw InputError("ModelConfig: head_dim must be even for rotation");
    if (vocab_size < Tokenizer::kVocabSize) {
      throw InputError("ModelConfig: vocab_size must cover 256 byte tokens plus specials");
    }
  }

  // Small configuration for 64-bit gradient checks and fast training tests.
  static ModelConfig tiny() {
    ModelConfig c;
    c.n_layers = 2;
    c.hidden_dim = 16;
    c.n_heads = 2;
    c.head_dim = 8;
    c.ffn_dim = 64;
    c.max_positions = 32768;
    return c;
  }
};

// Weights are applied by right-multiplication of row vectors: y = x * W.
template <class S>
struct LayerParams {
  Matrix<S> wq, wk, wv, wo;  // hidden x hidden
  Matrix<S> w1;              // hidden x ffn
  Matrix<S> w2;              // ffn x hidden
  Matrix<S> norm1, norm2;    // 1 x hidden RMSNorm gains
};

template <class S>
struct ModelParams {
  Matrix<S> token_embedding;  // vocab x hidden (the TEs)
  std::vector<LayerParams<S>> layers;
  Matrix<S> final_norm;  // 1 x hidden
  Matrix<S> unembedding;  // hidden x vocab

  static ModelParams random_init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ModelParams p;
    p.token_embedding.resize(cfg.vocab_size, cfg.hidden_dim);
    fill_normal(p.token_embedding, rng, 1.0);
    p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& l : p.layers) {
      l.wq.resize(cfg.hidden_dim, cfg.hidden_dim);
      l.wk.resize(cfg.hidden_dim, cfg.hidden_dim);
      l.wv.resize(cfg.hidden_dim, cfg.hidden_dim);
      l.wo.resize(cfg.hidden_dim, cfg.hidden_dim);
      l.w1.resize(cfg.hidden_dim, cfg.ffn_dim);
      l.w2.resize(cfg.ffn_dim, cfg.hidden_dim);
      fill_normal(l.wq, rng, 0.08);
      fill_normal(l.wk, rng, 0.08);
      fill_normal(l.wv, rng, 0.08);
      fill_normal(l.wo, rng, 0.08);
      fill_normal(l.w1, rng, 0.08);
      fill_normal(l.w2, rng, 0.08);
      l.norm1 = Matrix<S>::Ones(1, cfg.hidden_dim);
      l.norm2 = Matrix<S>::Ones(1, cfg.hidden_dim);
    }
    p.final_norm = Matrix<S>::Ones(1, cfg.hidden_dim);
    p.unembedding.resize(cfg.hidden_dim, cfg.vocab_size);
    fill_normal(p.unembedding, rng, 0.08);
    return p;
  }
};

template <class P, class F>
void visit_model_tensors(P& p, F&& f) {
  f(std::string("token_embedding"), p.token_embedding);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    f(pre + "wq", p.layers[l].wq);
    f(pre + "wk", p.layers[l].wk);
    f(pre + "wv", p.layers[l].wv);
    f(pre + "wo", p.layers[l].wo);
    f(pre + "w1", p.layers[l].w1);
    f(pre + "w2", p.layers[l].w2);
    f(pre + "norm1", p.layers[l].norm1);
    f(pre + "norm2", p.layers[l].norm2);
  }
  f(std::string("final_norm"), p.final_norm);
  f(std::string("unembedding"), p.unembedding);
}

// Hex digest of the full frozen weight set; used by the frozen-base checks.
template <class S>
std::string model_digest(const ModelParams<S>& p) {
  Sha256 h;
  visit_model_tensors(p, [&](const std::string&, const Matrix<S>& m) { digest_matrix(h, m); });
  return to_hex(h.finish());
}

template <class S>
bool all_finite(const ModelParams<S>& p) {
  bool ok = true;
  visit_model_tensors(p, [&](const std::string&, const Matrix<S>& m) {
    if (!m.allFinite()) ok = false;
  });
  return ok;
}

template <class S>
void save_model(const std::string& path, const ModelConfig& cfg, const ModelParams<S>& p,
                std::uint64_t seed = 0) {
  ContainerWriter w;
  visit_model_tensors(p, [&](const std::string& name, const Matrix<S>& m) {
    w.add_matrix(name, m);
  });
  nlohmann::json meta;
  meta["kind"] = "model";
  meta["n_layers"] = cfg.n_layers;
  meta["hidden_dim"] = cfg.hidden_dim;
  meta["n_heads"] = cfg.n_heads;
  meta["head_dim"] = cfg.head_dim;
  meta["ffn_dim"] = cfg.ffn_dim;
  meta["vocab_size"] = cfg.vocab_size;
  meta["max_positions"] = cfg.max_positions;
  meta["seed"] = seed;
  w.set_meta(std::move(meta));
  w.write(path);
}

template <class S>
std::pair<ModelConfig, ModelParams<S>> load_model(const std::string& path) {
  Container c = Container::read(path);
  const auto& meta = c.meta();
  ModelConfig cfg;
  cfg.n_layers = meta.at("n_layers");
  cfg.hidden_dim = meta.at("hidden_dim");
  cfg.n_heads = meta.at("n_heads");
  cfg.head_dim = meta.at("head_dim");
  cfg.ffn_dim = meta.at("ffn_dim");
  cfg.vocab_size = meta.at("vocab_size");
  cfg.max_positions = meta.at("max_positions");
  cfg.validate();
  ModelParams<S> p;
  p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  visit_model_tensors(p, [&](const std::string& name, Matrix<S>& m) {
    m = c.matrix<S>(name);
  });
  if (!all_finite(p)) throw IoError("model checkpoint contains non-finite values: " + path);
  return {cfg, std::move(p)};
}

// One low-rank adapter: y = x*W + scale * (x * down^T) * up^T.
template <class S>
struct LoraPair {
  Matrix<S> down;  // rank x hidden
  Matrix<S> up;    // hidden x rank
  bool engaged() const { return down.size() > 0; }
};

template <class S>
struct LayerAdapters {
  LoraPair<S> q, v;
};

template <class S>
struct KVCache {
  std::vector<Matrix<S>> keys;    // per layer, capacity x hidden, post-rotation
  std::vector<Matrix<S>> values;  // per layer, capacity x hidden
  int current_len = 0;
  int capacity = 0;

  static KVCache allocate(const ModelConfig& cfg, int cap) {
    KVCache c;
    c.capacity = cap;
    c.keys.assign(static_cast<std::size_t>(cfg.n_layers), Matrix<S>(cap, cfg.hidden_dim));
    c.values.assign(static_cast<std::size_t>(cfg.n_layers), Matrix<S>(cap, cfg.hidden_dim));
    return c;
  }

  void ensure_capacity(int rows) {
    if (rows <= capacity) return;
    int cap = capacity > 0 ? capacity : 16;
    while (cap < rows) cap *= 2;
    for (auto& k : keys) k.conservativeResize(cap, Eigen::NoChange);
    for (auto& v : values) v.conservativeResize(cap, Eigen::NoChange);
    capacity = cap;
  }

  // Live entries only; one key and one value row per position per layer.
  std::size_t footprint_bytes() const {
    if (keys.empty()) return 0;
    return static_cast<std::size_t>(current_len) * keys.size() *
           static_cast<std::size_t>(keys[0].cols()) * 2 * sizeof(S);
  }
};

template <class S>
struct ForwardTrace {
  std::vector<Matrix<S>> hidden;  // L matrices, post-block residual stream
  Matrix<S> final_normed;         // after the final RMSNorm
  Matrix<S> logits;
};

template <class S>
struct LayerTape {
  Matrix<S> x_in;    // residual stream entering the block
  ColVector<S> inv_rms1;
  Matrix<S> a_in;    // normed+scaled attention input
  Matrix<S> q, k, v;  // q,k post-rotation
  std::vector<Matrix<S>> probs;  // per head, n x n
  Matrix<S> ctx;     // attention output before wo
  Matrix<S> x_mid;   // after attention residual
  ColVector<S> inv_rms2;
  Matrix<S> b_in;    // normed+scaled FFN input
  Matrix<S> f1, fa;  // FFN pre/post activation
};

template <class S>
struct ForwardTape {
  std::vector<LayerTape<S>> layers;
  Matrix<S> x_final;  // input to the final norm (== last hidden state)
  ColVector<S> inv_rms_f;
  Matrix<S> cos_table, sin_table;  // n x head_dim/2
};

template <class S>
struct ForwardHooks {
  const std::vector<LayerAdapters<S>>* adapters = nullptr;
  S lora_scale = S(0);
  PairCounter* counter = nullptr;
  ForwardTape<S>* tape = nullptr;
};

namespace detail {

inline constexpr double kNormEps = 1e-6;
inline constexpr double kRopeBase = 10000.0;
inline constexpr Eigen::Index kAttnRowBlock = 2048;

template <class S>
void rope_tables(int pos0, int n, int head_dim, Matrix<S>& cs, Matrix<S>& sn) {
  const int half = head_dim / 2;
  cs.resize(n, half);
  sn.resize(n, half);
  for (int t = 0; t < half; ++t) {
    const double freq = std::pow(kRopeBase, -2.0 * t / head_dim);
    for (int i = 0; i < n; ++i) {
      const double angle = static_cast<double>(pos0 + i) * freq;
      cs(i, t) = static_cast<S>(std::cos(angle));
      sn(i, t) = static_cast<S>(std::sin(angle));
    }
  }
}

// Rotates pair (2t, 2t+1) within each head slice; table row i pairs with x
// row i. inverse=true applies the transposed rotation (used by backward).
template <class S>
void rope_rotate(Matrix<S>& x, int n_heads, int head_dim, const Matrix<S>& cs,
                 const Matrix<S>& sn, bool inverse = false) {
  const int half = head_dim / 2;
  ColVector<S> a, b;
  for (int h = 0; h < n_heads; ++h) {
    for (int t = 0; t < half; ++t) {
      const int c0 = h * head_dim + 2 * t;
      a = x.col(c0);
      b = x.col(c0 + 1);
      auto c = cs.col(t).array();
      auto s = sn.col(t).array();
      if (!inverse) {
        x.col(c0).array() = a.array() * c - b.array() * s;
        x.col(c0 + 1).array() = a.array() * s + b.array() * c;
      } else {
        x.col(c0).array() = a.array() * c + b.array() * s;
        x.col(c0 + 1).array() = -a.array() * s + b.array() * c;
      }
    }
  }
}

template <class S>
void rmsnorm(const Matrix<S>& x, const Matrix<S>& gain, Matrix<S>& out,
             ColVector<S>* inv_rms_out) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  ColVector<S> r(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S ms = x.row(i).squaredNorm() / static_cast<S>(d);
    r(i) = S(1) / std::sqrt(ms + static_cast<S>(kNormEps));
  }
  out = (x.array().colwise() * r.array()).rowwise() * gain.row(0).array();
  if (inv_rms_out) *inv_rms_out = std::move(r);
}

template <class S>
Matrix<S> silu(const Matrix<S>& x) {
  return x.array() / (S(1) + (-x.array()).exp());
}

template <class S>
Matrix<S> silu_grad(const Matrix<S>& x) {
  auto sig = (S(1) / (S(1) + (-x.array()).exp())).eval();
  return sig * (S(1) + x.array() * (S(1) - sig));
}

template <class S>
Matrix<S> adapted_proj(const Matrix<S>& x, const Matrix<S>& w, const LoraPair<S>* a, S scale) {
  Matrix<S> y = x * w;
  if (a != nullptr && a->engaged()) {
    y.noalias() += scale * ((x * a->down.transpose()) * a->up.transpose());
  }
  return y;
}

// Causal self-attention over q/k/v of equal length. When probs_out is set the
// per-head probability matrices are retained (training scale); otherwise the
// score buffer is processed in row blocks to bound memory at bench scale.
template <class S>
void causal_attention(const Matrix<S>& q, const Matrix<S>& k, const Matrix<S>& v, int n_heads,
                      int head_dim, Matrix<S>& ctx, std::vector<Matrix<S>>* probs_out) {
  const Eigen::Index n = q.rows();
  ctx.resize(n, q.cols());
  if (n == 0) return;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(head_dim)));
  if (probs_out) probs_out->assign(static_cast<std::size_t>(n_heads), Matrix<S>());

  const Eigen::Index block = probs_out ? n : std::min<Eigen::Index>(n, kAttnRowBlock);
  Matrix<S> scores;
  for (int h = 0; h < n_heads; ++h) {
    auto qh = q.middleCols(h * head_dim, head_dim);
    auto kh = k.middleCols(h * head_dim, head_dim);
    auto vh = v.middleCols(h * head_dim, head_dim);
    for (Eigen::Index i0 = 0; i0 < n; i0 += block) {
      const Eigen::Index bn = std::min(block, n - i0);
      scores.resize(bn, n);
      scores.noalias() = qh.middleRows(i0, bn) * kh.transpose();
      scores *= scale;
      for (Eigen::Index i = 0; i < bn; ++i) {
        const Eigen::Index allowed = i0 + i + 1;
        auto row = scores.row(i).head(allowed);
        const S mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
        scores.row(i).tail(n - allowed).setZero();
      }
      ctx.block(i0, h * head_dim, bn, head_dim).noalias() = scores * vh;
    }
    if (probs_out) (*probs_out)[static_cast<std::size_t>(h)] = scores;
  }
}

// One pre-norm block over the whole sequence; x is the residual stream and is
// updated in place. When k_out/v_out are given, the rotated keys and values
// are copied into their rows starting at 0 (prefill cache fill).
template <class S>
void block_forward(const ModelConfig& cfg, const LayerParams<S>& lp, const LayerAdapters<S>* ad,
                   S lora_scale, Matrix<S>& x, const Matrix<S>& cs, const Matrix<S>& sn,
                   LayerTape<S>* tape, Matrix<S>* k_out, Matrix<S>* v_out) {
  const Eigen::Index n = x.rows();
  Matrix<S> a;
  ColVector<S> r1;
  rmsnorm(x, lp.norm1, a, tape ? &r1 : nullptr);

  Matrix<S> q = adapted_proj(a, lp.wq, ad ? &ad->q : nullptr, lora_scale);
  Matrix<S> k = a * lp.wk;
  Matrix<S> v = adapted_proj(a, lp.wv, ad ? &ad->v : nullptr, lora_scale);
  rope_rotate(q, cfg.n_heads, cfg.head_dim, cs, sn);
  rope_rotate(k, cfg.n_heads, cfg.head_dim, cs, sn);
  if (k_out) k_out->topRows(n) = k;
  if (v_out) v_out->topRows(n) = v;

  Matrix<S> ctx;
  causal_attention(q, k, v, cfg.n_heads, cfg.head_dim, ctx, tape ? &tape->probs : nullptr);

  if (tape) {
    tape->x_in = x;
    tape->inv_rms1 = std::move(r1);
    tape->a_in = a;
    tape->q = std::move(q);
    tape->k = std::move(k);
    tape->v = std::move(v);
    tape->ctx = ctx;
  }

  x.noalias() += ctx * lp.wo;
  if (tape) tape->x_mid = x;

  Matrix<S> b;
  ColVector<S> r2;
  rmsnorm(x, lp.norm2, b, tape ? &tape->inv_rms2 : nullptr);
  Matrix<S> f1 = b * lp.w1;
  Matrix<S> fa = silu(f1);
  x.noalias() += fa * lp.w2;
  if (tape) {
    tape->b_in = std::move(b);
    tape->f1 = std::move(f1);
    tape->fa = std::move(fa);
  }
}

}  // namespace detail

// TE lookup. Accepts any mix of byte and special ids below vocab_size.
template <class S>
Matrix<S> embed(const ModelConfig& cfg, const ModelParams<S>& p,
                const std::vector<TokenId>& token_ids) {
  Matrix<S> out(static_cast<Eigen::Index>(token_ids.size()), cfg.hidden_dim);
  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    const TokenId id = token_ids[i];
    if (id < 0 || id >= cfg.vocab_size) {
      throw InputError("embed: token id out of range: " + std::to_string(id));
    }
    out.row(static_cast<Eigen::Index>(i)) = p.token_embedding.row(id);
  }
  return out;
}

// Full forward over arbitrary input embeddings (TEs or CEs), causal masking
// always on. Positions are row indices starting at 0.
template <class S>
ForwardTrace<S> forward(const ModelConfig& cfg, const ModelParams<S>& p, const Matrix<S>& input,
                        const ForwardHooks<S>& hooks = {}) {
  const Eigen::Index n = input.rows();
  if (n > cfg.max_positions) {
    throw CapacityError("forward: sequence length " + std::to_string(n) +
                        " exceeds max_positions " + std::to_string(cfg.max_positions));
  }
  if (n > 0 && input.cols() != cfg.hidden_dim) {
    throw InputError("forward: input width must equal hidden_dim");
  }
  if (hooks.adapters && static_cast<int>(hooks.adapters->size()) != cfg.n_layers) {
    throw InputError("forward: adapter count must equal n_layers");
  }

  Matrix<S> cs, sn;
  detail::rope_tables(0, static_cast<int>(n), cfg.head_dim, cs, sn);
  if (hooks.tape) {
    hooks.tape->layers.resize(static_cast<std::size_t>(cfg.n_layers));
    hooks.tape->cos_table = cs;
    hooks.tape->sin_table = sn;
  }

  ForwardTrace<S> trace;
  trace.hidden.reserve(static_cast<std::size_t>(cfg.n_layers));
  Matrix<S> x = input;
  for (int l = 0; l < cfg.n_layers; ++l) {
    detail::block_forward<S>(cfg, p.layers[static_cast<std::size_t>(l)],
                             hooks.adapters ? &(*hooks.adapters)[static_cast<std::size_t>(l)]
                                            : nullptr,
                             hooks.lora_scale, x, cs, sn,
                             hooks.tape ? &hooks.tape->layers[static_cast<std::size_t>(l)]
                                        : nullptr,
                             nullptr, nullptr);
    trace.hidden.push_back(x);
  }

  if (hooks.tape) hooks.tape->x_final = x;
  detail::rmsnorm(x, p.final_norm, trace.final_normed,
                  hooks.tape ? &hooks.tape->inv_rms_f : nullptr);

  // Row-at-a-time so that prefill/decode, which produce single rows, follow
  // the identical expression.
  trace.logits.resize(n, cfg.vocab_size);
  for (Eigen::Index i = 0; i < n; ++i) {
    trace.logits.row(i).noalias() = trace.final_normed.row(i) * p.unembedding;
  }

  if (hooks.counter) hooks.counter->pairs += causal_pair_count(static_cast<std::uint64_t>(n));
  return trace;
}

template <class S>
struct PrefillResult {
  KVCache<S> cache;
  Matrix<S> last_logits;  // 1 x vocab
};

// First forward pass over the prefix: fills the KV cache and returns the
// last-position logits (bitwise equal to forward()'s last row).
template <class S>
PrefillResult<S> prefill(const ModelConfig& cfg, const ModelParams<S>& p, const Matrix<S>& input,
                         PairCounter* counter = nullptr, int capacity_hint = 0) {
  const Eigen::Index n = input.rows();
  if (n == 0) throw InputError("prefill: empty input");
  if (n > cfg.max_positions) {
    throw CapacityError("prefill: sequence length exceeds max_positions");
  }
  if (input.cols() != cfg.hidden_dim) throw InputError("prefill: input width must equal hidden_dim");

  PrefillResult<S> res;
  res.cache = KVCache<S>::allocate(cfg, std::max<int>(static_cast<int>(n), capacity_hint));

  Matrix<S> cs, sn;
  detail::rope_tables(0, static_cast<int>(n), cfg.head_dim, cs, sn);
  Matrix<S> x = input;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::size_t li = static_cast<std::size_t>(l);
    detail::block_forward<S>(cfg, p.layers[li], nullptr, S(0), x, cs, sn, nullptr,
                             &res.cache.keys[li], &res.cache.values[li]);
  }
  res.cache.current_len = static_cast<int>(n);

  Matrix<S> y;
  {
    Matrix<S> last = x.bottomRows(1);
    detail::rmsnorm<S>(last, p.final_norm, y, nullptr);
  }
  res.last_logits.resize(1, cfg.vocab_size);
  res.last_logits.row(0).noalias() = y.row(0) * p.unembedding;

  if (counter) counter->pairs += causal_pair_count(static_cast<std::uint64_t>(n));
  return res;
}

// One autoregressive step: appends the embedding's K/V rows and returns the
// logits for the new position.
template <class S>
Matrix<S> decode_step(const ModelConfig& cfg, const ModelParams<S>& p, KVCache<S>& cache,
                      const Matrix<S>& next_embedding, PairCounter* counter = nullptr) {
  if (next_embedding.rows() != 1 || next_embedding.cols() != cfg.hidden_dim) {
    throw InputError("decode_step: expected a single 1 x hidden_dim embedding");
  }
  if (cache.current_len + 1 > cfg.max_positions) {
    throw CapacityError("decode_step: cache is at max_positions");
  }
  cache.ensure_capacity(cache.current_len + 1);

  const int pos = cache.current_len;
  const int keys_visible = pos + 1;
  Matrix<S> cs, sn;
  detail::rope_tables(pos, 1, cfg.head_dim, cs, sn);
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(cfg.head_dim)));

  Matrix<S> x = next_embedding;
  Matrix<S> a, b, scores;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::size_t li = static_cast<std::size_t>(l);
    const LayerParams<S>& lp = p.layers[li];
    detail::rmsnorm<S>(x, lp.norm1, a, nullptr);
    Matrix<S> q = a * lp.wq;
    Matrix<S> k = a * lp.wk;
    Matrix<S> v = a * lp.wv;
    detail::rope_rotate(q, cfg.n_heads, cfg.head_dim, cs, sn);
    detail::rope_rotate(k, cfg.n_heads, cfg.head_dim, cs, sn);
    cache.keys[li].row(pos) = k.row(0);
    cache.values[li].row(pos) = v.row(0);

    Matrix<S> ctx(1, cfg.hidden_dim);
    for (int h = 0; h < cfg.n_heads; ++h) {
      auto kh = cache.keys[li].topRows(keys_visible).middleCols(h * cfg.head_dim, cfg.head_dim);
      auto vh = cache.values[li].topRows(keys_visible).middleCols(h * cfg.head_dim, cfg.head_dim);
      scores.noalias() = q.middleCols(h * cfg.head_dim, cfg.head_dim) * kh.transpose();
      scores *= scale;
      const S mx = scores.row(0).maxCoeff();
      scores.row(0) = (scores.row(0).array() - mx).exp();
      scores.row(0) /= scores.row(0).sum();
      ctx.middleCols(h * cfg.head_dim, cfg.head_dim).noalias() = scores * vh;
    }
    x.noalias() += ctx * lp.wo;

    detail::rmsnorm<S>(x, lp.norm2, b, nullptr);
    Matrix<S> f1 = b * lp.w1;
    x.noalias() += detail::silu(f1) * lp.w2;
  }

  Matrix<S> y;
  detail::rmsnorm<S>(x, p.final_norm, y, nullptr);
  Matrix<S> logits(1, cfg.vocab_size);
  logits.row(0).noalias() = y.row(0) * p.unembedding;

  cache.current_len += 1;
  if (counter) counter->pairs += static_cast<std::uint64_t>(keys_visible);
  return logits;
}

// Greedy argmax; ties resolve to the lowest token id.
template <class S>
TokenId argmax_token(const Matrix<S>& logits_row) {
  TokenId best = 0;
  S best_value = logits_row(0, 0);
  for (Eigen::Index j = 1; j < logits_row.cols(); ++j) {
    if (logits_row(0, j) > best_value) {
      best_value = logits_row(0, j);
      best = static_cast<TokenId>(j);
    }
  }
  return best;
}

struct GenerateResult {
  std::vector<TokenId> token_ids;
  bool truncated = false;  // ran out of positions before EOS / token budget
};

// Greedy decoding from arbitrary prefix embeddings. EOS terminates generation
// and is not emitted.
template <class S>
GenerateResult generate(const ModelConfig& cfg, const ModelParams<S>& p, const Matrix<S>& prefix,
                        int max_new_tokens, PairCounter* counter = nullptr) {
  if (prefix.rows() == 0) throw InputError("generate: empty prefix");
  GenerateResult out;
  if (max_new_tokens <= 0) return out;

  PrefillResult<S> pre = prefill(cfg, p, prefix, counter,
                                 static_cast<int>(prefix.rows()) + max_new_tokens);
  Matrix<S> logits = std::move(pre.last_logits);
  while (true) {
    const TokenId tok = argmax_token(logits);
    if (tok == Tokenizer::kEos) break;
    out.token_ids.push_back(tok);
    if (static_cast<int>(out.token_ids.size()) >= max_new_tokens) break;
    if (pre.cache.current_len + 1 > cfg.max_positions) {
      out.truncated = true;
      break;
    }
    Matrix<S> e = p.token_embedding.row(tok);
    logits = decode_step(cfg, p, pre.cache, e, counter);
  }
  return out;
}

}  // namespace compllm
