#pragma once

#include <vector>

#include "compllm/model.hpp"

namespace compllm {
namespace detail {

// Backward through out = rmsnorm(x) .rowwise* gain, given d_out.
template <class S>
Matrix<S> rmsnorm_vjp(const Matrix<S>& x, const ColVector<S>& inv_rms, const Matrix<S>& gain,
                      const Matrix<S>& d_out) {
  Matrix<S> d_n = d_out.array().rowwise() * gain.row(0).array();
  ColVector<S> rowdot = (d_n.array() * x.array()).rowwise().sum();
  const S inv_d = S(1) / static_cast<S>(x.cols());
  ColVector<S> coef = rowdot.array() * inv_rms.array().cube() * inv_d;
  return (d_n.array().colwise() * inv_rms.array()) - (x.array().colwise() * coef.array());
}

// Backward through the causal attention of one block. Consumes the retained
// per-head probabilities; outputs grads w.r.t. the rotated q/k and v.
template <class S>
void attention_vjp(const LayerTape<S>& t, int n_heads, int head_dim, const Matrix<S>& d_ctx,
                   Matrix<S>& d_q, Matrix<S>& d_k, Matrix<S>& d_v) {
  const Eigen::Index n = t.q.rows();
  d_q.setZero(n, t.q.cols());
  d_k.setZero(n, t.k.cols());
  d_v.setZero(n, t.v.cols());
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(head_dim)));

  for (int h = 0; h < n_heads; ++h) {
    const Matrix<S>& probs = t.probs[static_cast<std::size_t>(h)];
    auto qh = t.q.middleCols(h * head_dim, head_dim);
    auto kh = t.k.middleCols(h * head_dim, head_dim);
    auto vh = t.v.middleCols(h * head_dim, head_dim);
    auto d_ctx_h = d_ctx.middleCols(h * head_dim, head_dim);

    Matrix<S> d_probs = d_ctx_h * vh.transpose();
    d_v.middleCols(h * head_dim, head_dim).noalias() = probs.transpose() * d_ctx_h;

    // Softmax rows; masked entries have probs == 0, so they drop out here.
    ColVector<S> rowdot = (d_probs.array() * probs.array()).rowwise().sum();
    Matrix<S> d_scores =
        probs.array() * (d_probs.array().colwise() - rowdot.array()) * scale;

    d_q.middleCols(h * head_dim, head_dim).noalias() = d_scores * kh;
    d_k.middleCols(h * head_dim, head_dim).noalias() = d_scores.transpose() * qh;
  }
}

template <class S>
void lora_vjp(const Matrix<S>& a_in, const LoraPair<S>& pair, S scale, const Matrix<S>& d_proj,
              Matrix<S>& d_a, LoraPair<S>* grads) {
  const Matrix<S> mid = a_in * pair.down.transpose();
  const Matrix<S> d_mid = scale * (d_proj * pair.up);
  if (grads) {
    grads->up.noalias() += scale * (d_proj.transpose() * mid);
    grads->down.noalias() += d_mid.transpose() * a_in;
  }
  d_a.noalias() += d_mid * pair.down;
}

template <class S>
Matrix<S> block_backward(const ModelConfig& cfg, const LayerParams<S>& lp,
                         const LayerAdapters<S>* ad, S lora_scale, const LayerTape<S>& t,
                         const Matrix<S>& cs, const Matrix<S>& sn, const Matrix<S>& d_out,
                         LayerAdapters<S>* ad_grads) {
  // FFN half: x_out = x_mid + silu(b_in * w1) * w2.
  Matrix<S> d_fa = d_out * lp.w2.transpose();
  Matrix<S> d_f1 = d_fa.array() * silu_grad(t.f1).array();
  Matrix<S> d_b = d_f1 * lp.w1.transpose();
  Matrix<S> d_x_mid = d_out + rmsnorm_vjp(t.x_mid, t.inv_rms2, lp.norm2, d_b);

  // Attention half: x_mid = x_in + ctx * wo.
  Matrix<S> d_ctx = d_x_mid * lp.wo.transpose();
  Matrix<S> d_q, d_k, d_v;
  attention_vjp(t, cfg.n_heads, cfg.head_dim, d_ctx, d_q, d_k, d_v);
  rope_rotate(d_q, cfg.n_heads, cfg.head_dim, cs, sn, /*inverse=*/true);
  rope_rotate(d_k, cfg.n_heads, cfg.head_dim, cs, sn, /*inverse=*/true);

  Matrix<S> d_a = d_q * lp.wq.transpose();
  d_a.noalias() += d_k * lp.wk.transpose();
  d_a.noalias() += d_v * lp.wv.transpose();
  if (ad) {
    if (ad->q.engaged()) lora_vjp(t.a_in, ad->q, lora_scale, d_q, d_a, ad_grads ? &ad_grads->q : nullptr);
    if (ad->v.engaged()) lora_vjp(t.a_in, ad->v, lora_scale, d_v, d_a, ad_grads ? &ad_grads->v : nullptr);
  }

  return d_x_mid + rmsnorm_vjp(t.x_in, t.inv_rms1, lp.norm1, d_a);
}

}  // namespace detail

template <class S>
struct BackwardHooks {
  const std::vector<LayerAdapters<S>>* adapters = nullptr;
  S lora_scale = S(0);
  std::vector<LayerAdapters<S>>* adapter_grads = nullptr;  // accumulated into, must match shapes
};

// Reverse pass over a taped forward. Upstream gradients may enter at every
// layer's post-block hidden state (d_hidden, entries may be empty) and at the
// final-norm output (d_final_normed). Returns the gradient w.r.t. the input
// embeddings; base model weights are frozen and receive no gradient.
template <class S>
Matrix<S> backward(const ModelConfig& cfg, const ModelParams<S>& p, const ForwardTape<S>& tape,
                   const std::vector<Matrix<S>>* d_hidden, const Matrix<S>* d_final_normed,
                   const BackwardHooks<S>& hooks = {}) {
  if (tape.layers.size() != static_cast<std::size_t>(cfg.n_layers)) {
    throw InputError("backward: tape does not match model depth");
  }
  const Eigen::Index n = tape.x_final.rows();

  Matrix<S> g;
  if (d_final_normed && d_final_normed->size() > 0) {
    g = detail::rmsnorm_vjp(tape.x_final, tape.inv_rms_f, p.final_norm, *d_final_normed);
  } else {
    g = Matrix<S>::Zero(n, cfg.hidden_dim);
  }

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const std::size_t li = static_cast<std::size_t>(l);
    if (d_hidden && li < d_hidden->size() && (*d_hidden)[li].size() > 0) {
      g += (*d_hidden)[li];
    }
    g = detail::block_backward(cfg, p.layers[li],
                               hooks.adapters ? &(*hooks.adapters)[li] : nullptr,
                               hooks.lora_scale, tape.layers[li], tape.cos_table,
                               tape.sin_table, g,
                               hooks.adapter_grads ? &(*hooks.adapter_grads)[li] : nullptr);
  }
  return g;
}

}  // namespace compllm
