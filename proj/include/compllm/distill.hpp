#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "compllm/backward.hpp"
#include "compllm/compressor.hpp"
#include "compllm/model.hpp"
#include "compllm/segmenter.hpp"

namespace compllm {

// One (context c, instruction x, answer y) triple.
struct DistillSample {
  enum class AnswerSource { kTeacherGenerated, kDatasetProvided };

  std::vector<TokenId> context_tokens;      // c
  std::vector<TokenId> instruction_tokens;  // x
  std::vector<TokenId> answer_tokens;       // y
  AnswerSource answer_source = AnswerSource::kDatasetProvided;

  void validate() const {
    if (context_tokens.empty() || instruction_tokens.empty() || answer_tokens.empty()) {
      throw InputError("DistillSample: context, instruction and answer must be nonempty");
    }
  }
};

// Per-layer hidden states restricted to the answer positions, plus the
// per-layer teacher scale statistic.
template <class S>
struct LayerActivations {
  std::vector<Matrix<S>> layers;  // L matrices, |A| x hidden
  std::vector<S> sigma;           // per-layer population std, floored
};

inline constexpr double kSigmaFloor = 1e-6;

// Population standard deviation over all entries (the sigma convention of the
// layer loss: a single scalar per layer, no per-axis reduction).
template <class S>
double population_std(const Matrix<S>& m) {
  double mean = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) mean += static_cast<double>(m(i, j));
  }
  mean /= static_cast<double>(m.size());
  double var = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double r = static_cast<double>(m(i, j)) - mean;
      var += r * r;
    }
  }
  return std::sqrt(var / static_cast<double>(m.size()));
}

struct TrainConfig {
  double beta = 1.0;  // SmoothL1 threshold
  double learning_rate = 1e-4;
  int batch_size = 4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int max_steps = 500;
  std::uint64_t seed = 0;

  void validate() const {
    if (beta <= 0) throw InputError("TrainConfig: beta must be positive");
    if (learning_rate <= 0) throw InputError("TrainConfig: learning_rate must be positive");
    if (batch_size < 1) throw InputError("TrainConfig: batch_size must be >= 1");
  }
};

template <class S>
S smooth_l1(S u, S v, S beta) {
  const S r = std::abs(u - v);
  if (r < beta) return S(0.5) * r * r / beta;
  return r - beta / S(2);
}

// d smooth_l1(u, v) / du.
template <class S>
S smooth_l1_grad(S u, S v, S beta) {
  const S r = u - v;
  if (std::abs(r) < beta) return r / beta;
  return r > S(0) ? S(1) : (r < S(0) ? S(-1) : S(0));
}

// Mean SmoothL1 over all |A| x d entries, divided by the teacher scale.
template <class S>
double layer_loss(const Matrix<S>& student, const Matrix<S>& teacher, double sigma, double beta) {
  if (student.rows() != teacher.rows() || student.cols() != teacher.cols()) {
    throw InputError("layer_loss: shape mismatch between student and teacher");
  }
  if (sigma <= 0) throw InputError("layer_loss: sigma must be positive");
  double sum = 0;
  for (Eigen::Index i = 0; i < student.rows(); ++i) {
    for (Eigen::Index j = 0; j < student.cols(); ++j) {
      sum += smooth_l1(static_cast<double>(student(i, j)), static_cast<double>(teacher(i, j)),
                       beta);
    }
  }
  return sum / (sigma * static_cast<double>(student.size()));
}

namespace detail {

template <class S>
Matrix<S> assemble_teacher_input(const ModelConfig& cfg, const ModelParams<S>& model,
                                 const DistillSample& sample) {
  std::vector<TokenId> all;
  all.reserve(sample.context_tokens.size() + sample.instruction_tokens.size() +
              sample.answer_tokens.size());
  all.insert(all.end(), sample.context_tokens.begin(), sample.context_tokens.end());
  all.insert(all.end(), sample.instruction_tokens.begin(), sample.instruction_tokens.end());
  all.insert(all.end(), sample.answer_tokens.begin(), sample.answer_tokens.end());
  return embed(cfg, model, all);
}

template <class S>
LayerActivations<S> slice_answer_rows(const ModelConfig& cfg, const ForwardTrace<S>& trace,
                                      Eigen::Index n_answer, bool with_sigma) {
  LayerActivations<S> acts;
  acts.layers.reserve(trace.hidden.size());
  for (const Matrix<S>& h : trace.hidden) {
    acts.layers.push_back(h.bottomRows(n_answer));
  }
  if (with_sigma) {
    acts.sigma.reserve(acts.layers.size());
    for (const Matrix<S>& a : acts.layers) {
      acts.sigma.push_back(static_cast<S>(std::max(population_std(a), kSigmaFloor)));
    }
  }
  (void)cfg;
  return acts;
}

}  // namespace detail

// Base-model forward over [TE(c); TE(x); TE(y)], answer rows per layer plus
// sigma. Independent of the compressor by construction.
template <class S>
LayerActivations<S> teacher_pass(const ModelConfig& cfg, const ModelParams<S>& model,
                                 const DistillSample& sample) {
  sample.validate();
  Matrix<S> input = detail::assemble_teacher_input(cfg, model, sample);
  if (input.rows() > cfg.max_positions) {
    throw CapacityError("teacher_pass: assembled sequence exceeds max_positions");
  }
  ForwardTrace<S> trace = forward(cfg, model, input);
  return detail::slice_answer_rows(cfg, trace, static_cast<Eigen::Index>(sample.answer_tokens.size()),
                                   /*with_sigma=*/true);
}

template <class S>
struct StudentForward {
  LayerActivations<S> acts;  // sigma not populated (teacher statistic)
  ForwardTape<S> tape;
  std::vector<TapedSegmentCompression<S>> segments;
  Eigen::Index n_rows = 0;  // student sequence length
  Eigen::Index n_ce = 0;    // leading CE rows
};

// Base-model forward over [CE(compress(c)); TE(x); TE(y)]. Gradients flow
// through the CE rows back into the compressor only, so the base model is run
// without adapters here.
template <class S>
StudentForward<S> student_pass_taped(const ModelConfig& cfg, const ModelParams<S>& model,
                                     const CompressorParams<S>& comp, const DistillSample& sample,
                                     const SegmentationConfig& seg_cfg,
                                     const CompressionConfig& ccfg, bool with_tape = true) {
  sample.validate();
  StudentForward<S> out;
  out.segments = compress_context_taped(cfg, model, comp, sample.context_tokens, seg_cfg, ccfg);

  Eigen::Index n_ce = 0;
  for (const auto& s : out.segments) n_ce += s.n_ce;
  const Eigen::Index n_rest = static_cast<Eigen::Index>(sample.instruction_tokens.size() +
                                                        sample.answer_tokens.size());
  Matrix<S> input(n_ce + n_rest, cfg.hidden_dim);
  Eigen::Index row = 0;
  for (const auto& s : out.segments) {
    input.middleRows(row, s.n_ce) = s.result.concept_embeddings;
    row += s.n_ce;
  }
  std::vector<TokenId> rest = sample.instruction_tokens;
  rest.insert(rest.end(), sample.answer_tokens.begin(), sample.answer_tokens.end());
  input.bottomRows(n_rest) = embed(cfg, model, rest);

  if (input.rows() > cfg.max_positions) {
    throw CapacityError("student_pass: assembled sequence exceeds max_positions");
  }

  ForwardHooks<S> hooks;
  hooks.tape = with_tape ? &out.tape : nullptr;
  ForwardTrace<S> trace = forward(cfg, model, input, hooks);
  out.acts = detail::slice_answer_rows(cfg, trace,
                                       static_cast<Eigen::Index>(sample.answer_tokens.size()),
                                       /*with_sigma=*/false);
  out.n_rows = input.rows();
  out.n_ce = n_ce;
  return out;
}

template <class S>
LayerActivations<S> student_pass(const ModelConfig& cfg, const ModelParams<S>& model,
                                 const CompressorParams<S>& comp, const DistillSample& sample,
                                 const SegmentationConfig& seg_cfg = {},
                                 const CompressionConfig& ccfg = {}) {
  return student_pass_taped(cfg, model, comp, sample, seg_cfg, ccfg, /*with_tape=*/false).acts;
}

namespace detail {

// Loss over one sample; when grads is non-null, accumulates compressor
// gradients (caller owns scaling by the batch size).
template <class S>
double sample_loss_and_grads(const ModelConfig& cfg, const ModelParams<S>& model,
                             const CompressorParams<S>& comp, const DistillSample& sample,
                             const SegmentationConfig& seg_cfg, const CompressionConfig& ccfg,
                             double beta, CompressorParams<S>* grads) {
  LayerActivations<S> teacher = teacher_pass(cfg, model, sample);
  StudentForward<S> student =
      student_pass_taped(cfg, model, comp, sample, seg_cfg, ccfg, /*with_tape=*/grads != nullptr);

  const Eigen::Index n_answer = static_cast<Eigen::Index>(sample.answer_tokens.size());
  double loss = 0;
  std::vector<Matrix<S>> d_hidden;
  if (grads) d_hidden.resize(static_cast<std::size_t>(cfg.n_layers));

  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::size_t li = static_cast<std::size_t>(l);
    const Matrix<S>& stu = student.acts.layers[li];
    const Matrix<S>& tea = teacher.layers[li];
    const double sigma = static_cast<double>(teacher.sigma[li]);
    loss += layer_loss(stu, tea, sigma, beta);

    if (grads) {
      const S denom = static_cast<S>(sigma * static_cast<double>(stu.size()));
      Matrix<S> d_act(stu.rows(), stu.cols());
      for (Eigen::Index i = 0; i < stu.rows(); ++i) {
        for (Eigen::Index j = 0; j < stu.cols(); ++j) {
          d_act(i, j) = smooth_l1_grad(stu(i, j), tea(i, j), static_cast<S>(beta)) / denom;
        }
      }
      Matrix<S>& dh = d_hidden[li];
      dh = Matrix<S>::Zero(student.n_rows, cfg.hidden_dim);
      dh.bottomRows(n_answer) = d_act;
    }
  }

  if (grads) {
    Matrix<S> d_input = backward<S>(cfg, model, student.tape, &d_hidden, nullptr);
    Eigen::Index row = 0;
    for (const auto& seg : student.segments) {
      Matrix<S> d_ce = d_input.middleRows(row, seg.n_ce);
      compress_segment_backward(cfg, model, comp, seg, d_ce, *grads);
      row += seg.n_ce;
    }
  }
  return loss;
}

}  // namespace detail

// Sum over layers of layer_loss for one sample (Eq. 3's inner sum).
template <class S>
double total_loss(const ModelConfig& cfg, const ModelParams<S>& model,
                  const CompressorParams<S>& comp, const DistillSample& sample,
                  const SegmentationConfig& seg_cfg = {}, const CompressionConfig& ccfg = {},
                  double beta = 1.0) {
  return detail::sample_loss_and_grads<S>(cfg, model, comp, sample, seg_cfg, ccfg, beta, nullptr);
}

template <class S>
struct AdamState {
  CompressorParams<S> m, v;
  std::int64_t step = 0;

  static AdamState init(const CompressorParams<S>& p) {
    AdamState s;
    s.m = zeros_like(p);
    s.v = zeros_like(p);
    return s;
  }
};

template <class S>
std::vector<Matrix<S>*> compressor_tensor_ptrs(CompressorParams<S>& p) {
  std::vector<Matrix<S>*> out;
  visit_compressor_tensors(p, [&](const std::string&, Matrix<S>& m) { out.push_back(&m); });
  return out;
}

// One optimizer step over a batch: mean loss, gradients into the compressor
// only. Deterministic given parameters and batch order; the frozen base model
// is read-only throughout.
template <class S>
double train_step(const ModelConfig& cfg, const ModelParams<S>& model, CompressorParams<S>& comp,
                  const std::vector<DistillSample>& batch, const SegmentationConfig& seg_cfg,
                  const CompressionConfig& ccfg, const TrainConfig& tcfg, AdamState<S>& adam) {
  tcfg.validate();
  if (batch.empty()) throw InputError("train_step: empty batch");

  CompressorParams<S> grads = zeros_like(comp);
  double loss = 0;
  for (const DistillSample& sample : batch) {
    loss += detail::sample_loss_and_grads(cfg, model, comp, sample, seg_cfg, ccfg, tcfg.beta,
                                          &grads);
  }
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  loss *= inv_batch;
  if (!std::isfinite(loss)) {
    throw std::runtime_error("train_step: non-finite loss at optimizer step " +
                             std::to_string(adam.step + 1) + " (batch size " +
                             std::to_string(batch.size()) + ")");
  }

  adam.step += 1;
  const S b1 = static_cast<S>(tcfg.adam_beta1);
  const S b2 = static_cast<S>(tcfg.adam_beta2);
  const S eps = static_cast<S>(tcfg.adam_eps);
  const S lr = static_cast<S>(tcfg.learning_rate);
  const S bc1 = static_cast<S>(1.0 - std::pow(tcfg.adam_beta1, static_cast<double>(adam.step)));
  const S bc2 = static_cast<S>(1.0 - std::pow(tcfg.adam_beta2, static_cast<double>(adam.step)));

  auto ps = compressor_tensor_ptrs(comp);
  auto gs = compressor_tensor_ptrs(grads);
  auto ms = compressor_tensor_ptrs(adam.m);
  auto vs = compressor_tensor_ptrs(adam.v);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto g = (gs[i]->array() * static_cast<S>(inv_batch)).eval();
    ms[i]->array() = b1 * ms[i]->array() + (S(1) - b1) * g;
    vs[i]->array() = b2 * vs[i]->array() + (S(1) - b2) * g.square();
    ps[i]->array() -=
        lr * (ms[i]->array() / bc1) / ((vs[i]->array() / bc2).sqrt() + eps);
  }
  return loss;
}

// Greedy teacher generation of y from [TE(c); TE(x)]; used when the answer
// source is teacher-generated. An immediate EOS yields an empty answer, which
// callers skip.
template <class S>
std::vector<TokenId> generate_answer(const ModelConfig& cfg, const ModelParams<S>& model,
                                     const std::vector<TokenId>& context_tokens,
                                     const std::vector<TokenId>& instruction_tokens,
                                     int max_answer_tokens = 16) {
  std::vector<TokenId> all = context_tokens;
  all.insert(all.end(), instruction_tokens.begin(), instruction_tokens.end());
  return generate(cfg, model, embed(cfg, model, all), max_answer_tokens).token_ids;
}

// Central finite differences on randomly chosen compressor entries against
// the analytic gradient. Run with S = double and a small model.
template <class S>
double grad_check(const ModelConfig& cfg, const ModelParams<S>& model,
                  const CompressorParams<S>& comp, const DistillSample& sample,
                  const SegmentationConfig& seg_cfg, const CompressionConfig& ccfg, double beta,
                  double epsilon, int n_entries = 50, std::uint64_t seed = 0) {
  CompressorParams<S> grads = zeros_like(comp);
  detail::sample_loss_and_grads(cfg, model, comp, sample, seg_cfg, ccfg, beta, &grads);

  CompressorParams<S> probe = comp;  // mutated and restored around each evaluation
  auto ps = compressor_tensor_ptrs(probe);
  auto gs = compressor_tensor_ptrs(grads);

  std::size_t total = 0;
  for (auto* t : ps) total += static_cast<std::size_t>(t->size());

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);

  double max_rel = 0;
  for (int e = 0; e < n_entries; ++e) {
    std::size_t flat = pick(rng);
    std::size_t ti = 0;
    while (flat >= static_cast<std::size_t>(ps[ti]->size())) {
      flat -= static_cast<std::size_t>(ps[ti]->size());
      ++ti;
    }
    S* entry = ps[ti]->data() + flat;
    const S saved = *entry;

    *entry = saved + static_cast<S>(epsilon);
    const double up =
        detail::sample_loss_and_grads<S>(cfg, model, probe, sample, seg_cfg, ccfg, beta, nullptr);
    *entry = saved - static_cast<S>(epsilon);
    const double down =
        detail::sample_loss_and_grads<S>(cfg, model, probe, sample, seg_cfg, ccfg, beta, nullptr);
    *entry = saved;

    const double fd = (up - down) / (2.0 * epsilon);
    const double an = static_cast<double>(*(gs[ti]->data() + flat));
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
    max_rel = std::max(max_rel, std::abs(fd - an) / denom);
  }
  return max_rel;
}

// Resumable training checkpoint: compressor tensors plus Adam moments and the
// step counter, in the shared container format.
template <class S>
void save_train_checkpoint(const std::string& path, const CompressorParams<S>& comp,
                           const AdamState<S>& adam, nlohmann::json extra_meta = {}) {
  ContainerWriter w;
  visit_compressor_tensors(comp, [&](const std::string& name, const Matrix<S>& m) {
    w.add_matrix(name, m);
  });
  visit_compressor_tensors(adam.m, [&](const std::string& name, const Matrix<S>& m) {
    w.add_matrix("adam.m." + name, m);
  });
  visit_compressor_tensors(adam.v, [&](const std::string& name, const Matrix<S>& m) {
    w.add_matrix("adam.v." + name, m);
  });
  nlohmann::json meta = std::move(extra_meta);
  meta["kind"] = "compressor";
  meta["rank"] = comp.rank;
  meta["alpha"] = comp.alpha;
  meta["adam_step"] = adam.step;
  w.set_meta(std::move(meta));
  w.write(path);
}

template <class S>
struct TrainCheckpoint {
  CompressorParams<S> comp;
  AdamState<S> adam;
  nlohmann::json meta;
};

template <class S>
TrainCheckpoint<S> load_train_checkpoint_from(const Container& c, const ModelConfig& cfg) {
  TrainCheckpoint<S> ck;
  ck.comp = load_compressor_from<S>(c, cfg);
  ck.meta = c.meta();
  ck.adam = AdamState<S>::init(ck.comp);
  if (c.has("adam.m.head.weight")) {
    visit_compressor_tensors(ck.adam.m, [&](const std::string& name, Matrix<S>& m) {
      m = c.matrix<S>("adam.m." + name);
    });
    visit_compressor_tensors(ck.adam.v, [&](const std::string& name, Matrix<S>& m) {
      m = c.matrix<S>("adam.v." + name);
    });
    ck.adam.step = c.meta().value("adam_step", std::int64_t{0});
  }
  return ck;
}

template <class S>
TrainCheckpoint<S> load_train_checkpoint(const std::string& path, const ModelConfig& cfg) {
  return load_train_checkpoint_from<S>(Container::read(path), cfg);
}

}  // namespace compllm
