// Command-line front end: corpus generation, compressor training, offline
// compression, generation, cost benchmarking, retrieval evaluation and cache
// inspection. Configuration comes from an optional JSON file with flag
// overrides; unknown config keys are rejected.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "compllm/cecache.hpp"
#include "compllm/compressor.hpp"
#include "compllm/distill.hpp"
#include "compllm/evalgen.hpp"
#include "compllm/model.hpp"
#include "compllm/pipeline.hpp"
#include "compllm/segmenter.hpp"
#include "compllm/tokenizer.hpp"

namespace {

using namespace compllm;
using nlohmann::json;

struct RunConfig {
  ModelConfig model;
  std::uint64_t model_seed = 42;
  SegmentationConfig seg;
  CompressionConfig comp;
  int lora_rank = 8;
  double lora_alpha = 16.0;
  std::uint64_t lora_seed = 1;
  TrainConfig train;
  std::string cache_dir;
  int max_answer_tokens = 16;
};

void reject_unknown(const json& j, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || key == k;
    if (!ok) throw InputError("config: unknown key '" + key + "' in " + where);
  }
}

RunConfig load_config(const std::string& path) {
  RunConfig cfg;
  cfg.cache_dir = std::getenv("COMPLLM_CACHE_DIR") ? std::getenv("COMPLLM_CACHE_DIR") : "";
  if (path.empty()) return cfg;

  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  json j = json::parse(f);
  reject_unknown(j, {"model", "model_seed", "segmenter", "compression", "lora", "train",
                     "cache_dir", "max_answer_tokens"},
                 "top level");

  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown(m, {"n_layers", "hidden_dim", "n_heads", "head_dim", "ffn_dim", "vocab_size",
                       "max_positions"},
                   "model");
    cfg.model.n_layers = m.value("n_layers", cfg.model.n_layers);
    cfg.model.hidden_dim = m.value("hidden_dim", cfg.model.hidden_dim);
    cfg.model.n_heads = m.value("n_heads", cfg.model.n_heads);
    cfg.model.head_dim = m.value("head_dim", cfg.model.head_dim);
    cfg.model.ffn_dim = m.value("ffn_dim", cfg.model.ffn_dim);
    cfg.model.vocab_size = m.value("vocab_size", cfg.model.vocab_size);
    cfg.model.max_positions = m.value("max_positions", cfg.model.max_positions);
  }
  cfg.model_seed = j.value("model_seed", cfg.model_seed);
  if (j.contains("segmenter")) {
    const json& s = j["segmenter"];
    reject_unknown(s, {"max_segment_tokens", "boundary_chars"}, "segmenter");
    cfg.seg.max_segment_tokens = s.value("max_segment_tokens", cfg.seg.max_segment_tokens);
    cfg.seg.boundary_chars = s.value("boundary_chars", cfg.seg.boundary_chars);
    cfg.comp.max_segment_tokens = cfg.seg.max_segment_tokens;
  }
  if (j.contains("compression")) {
    const json& c = j["compression"];
    reject_unknown(c, {"rate"}, "compression");
    cfg.comp.compression_rate = c.value("rate", cfg.comp.compression_rate);
  }
  if (j.contains("lora")) {
    const json& l = j["lora"];
    reject_unknown(l, {"rank", "alpha", "seed"}, "lora");
    cfg.lora_rank = l.value("rank", cfg.lora_rank);
    cfg.lora_alpha = l.value("alpha", cfg.lora_alpha);
    cfg.lora_seed = l.value("seed", cfg.lora_seed);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown(t, {"beta", "learning_rate", "batch_size", "max_steps", "seed"}, "train");
    cfg.train.beta = t.value("beta", cfg.train.beta);
    cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.max_steps = t.value("max_steps", cfg.train.max_steps);
    cfg.train.seed = t.value("seed", cfg.train.seed);
  }
  if (j.contains("cache_dir")) cfg.cache_dir = j["cache_dir"];
  cfg.max_answer_tokens = j.value("max_answer_tokens", cfg.max_answer_tokens);
  cfg.model.validate();
  return cfg;
}

json model_meta(const ModelConfig& m, std::uint64_t seed, const std::string& digest) {
  json j;
  j["n_layers"] = m.n_layers;
  j["hidden_dim"] = m.hidden_dim;
  j["n_heads"] = m.n_heads;
  j["head_dim"] = m.head_dim;
  j["ffn_dim"] = m.ffn_dim;
  j["vocab_size"] = m.vocab_size;
  j["max_positions"] = m.max_positions;
  j["seed"] = seed;
  j["digest"] = digest;
  return j;
}

ModelConfig model_from_meta(const json& j, std::uint64_t& seed_out) {
  ModelConfig m;
  m.n_layers = j.at("n_layers");
  m.hidden_dim = j.at("hidden_dim");
  m.n_heads = j.at("n_heads");
  m.head_dim = j.at("head_dim");
  m.ffn_dim = j.at("ffn_dim");
  m.vocab_size = j.at("vocab_size");
  m.max_positions = j.at("max_positions");
  m.validate();
  seed_out = j.at("seed");
  return m;
}

// Frozen base plus compressor, either fresh from the run config or rebuilt
// from a training checkpoint's embedded model description.
struct Session {
  ModelConfig model_cfg;
  ModelParams<float> model;
  CompressorParams<float> comp;
  AdamState<float> adam;
  RunConfig run;
};

Session open_session(const RunConfig& run, const std::string& checkpoint) {
  Session s{run.model, {}, {}, {}, run};
  if (checkpoint.empty()) {
    s.model = ModelParams<float>::random_init(run.model, run.model_seed);
    s.comp = CompressorParams<float>::init(run.model, run.lora_rank, run.lora_alpha,
                                           run.lora_seed);
    s.adam = AdamState<float>::init(s.comp);
    return s;
  }
  Container c = Container::read(checkpoint);
  std::uint64_t model_seed = 0;
  s.model_cfg = model_from_meta(c.meta().at("model"), model_seed);
  s.run.model_seed = model_seed;
  s.model = ModelParams<float>::random_init(s.model_cfg, model_seed);
  const std::string digest = model_digest(s.model);
  if (digest != c.meta().at("model").at("digest")) {
    throw IoError("checkpoint base-model digest mismatch: got " + digest);
  }
  auto ck = load_train_checkpoint_from<float>(c, s.model_cfg);
  s.comp = std::move(ck.comp);
  s.adam = std::move(ck.adam);
  return s;
}

std::vector<std::uint64_t> parse_lengths(const std::string& csv) {
  std::vector<std::uint64_t> out;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    const std::size_t comma = csv.find(',', pos);
    const std::string tok = csv.substr(pos, comma == std::string::npos ? csv.npos : comma - pos);
    out.push_back(std::stoull(tok));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

void print_cost(const CostReport& c) {
  std::cout << "cost: effective_len=" << c.effective_len
            << " kv_entries=" << c.kv_entries
            << " compression_pairs=" << c.compression_pairs
            << " prefill_pairs=" << c.prefill_pairs
            << " decode_pairs=" << c.decode_pairs << "\n"
            << "time: compression_ms=" << c.compression_ms
            << " prefill_ms=" << c.prefill_ms
            << " decode_ms=" << c.decode_ms
            << " ttft_ms=" << c.ttft_ms() << "\n";
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

int cmd_make_corpus(const std::string& out, int n_facts, int filler, int n_contexts,
                    std::uint64_t seed) {
  std::vector<CorpusRecord> records;
  for (int c = 0; c < n_contexts; ++c) {
    SyntheticSpec spec;
    spec.n_facts = n_facts;
    spec.filler_sentences_per_fact = filler;
    spec.seed = seed + static_cast<std::uint64_t>(c);
    auto batch = make_corpus(spec);
    records.insert(records.end(), batch.begin(), batch.end());
  }
  write_corpus(out, records);
  std::cout << "wrote " << records.size() << " samples (" << n_contexts << " contexts) to "
            << out << "\n";
  return 0;
}

int cmd_train(Session& s, const std::string& corpus_path, const std::string& out,
              int checkpoint_every, const std::string& log_path, bool teacher_answers,
              const std::string& save_model_path) {
  const std::string base_digest = model_digest(s.model);
  std::cout << "frozen base digest: " << base_digest << "\n";

  std::vector<DistillSample> samples;
  for (const CorpusRecord& r : read_corpus(corpus_path)) {
    DistillSample sample = to_sample(r, teacher_answers
                                            ? DistillSample::AnswerSource::kTeacherGenerated
                                            : DistillSample::AnswerSource::kDatasetProvided);
    if (teacher_answers) {
      sample.answer_tokens = generate_answer(s.model_cfg, s.model, sample.context_tokens,
                                             sample.instruction_tokens,
                                             s.run.max_answer_tokens);
      if (sample.answer_tokens.empty()) {
        std::cerr << "warning: skipping sample with empty teacher answer (question: "
                  << r.question << ")\n";
        continue;
      }
    }
    samples.push_back(std::move(sample));
  }
  if (samples.empty()) throw InputError("train: corpus has no usable samples");

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::app);
    if (!log) throw IoError("cannot open log: " + log_path);
    if (s.adam.step == 0) log << "step,loss,ms\n";
  }

  const auto save = [&](const std::string& path) {
    json meta;
    meta["model"] = model_meta(s.model_cfg, s.run.model_seed, base_digest);
    save_train_checkpoint(path, s.comp, s.adam, meta);
  };

  const TrainConfig& tc = s.run.train;
  while (s.adam.step < tc.max_steps) {
    const std::int64_t step = s.adam.step;  // batch order is a pure function of the step
    std::vector<DistillSample> batch;
    for (int b = 0; b < tc.batch_size; ++b) {
      batch.push_back(samples[(static_cast<std::size_t>(step) * tc.batch_size + b) %
                              samples.size()]);
    }
    const auto t0 = std::chrono::steady_clock::now();
    const double loss = train_step(s.model_cfg, s.model, s.comp, batch, s.run.seg, s.run.comp,
                                   tc, s.adam);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "step " << s.adam.step << " loss " << loss << " (" << ms << " ms)\n";
    if (log) log << s.adam.step << ',' << loss << ',' << ms << "\n";
    if (checkpoint_every > 0 && s.adam.step % checkpoint_every == 0) save(out);
  }
  save(out);

  if (!save_model_path.empty()) {
    save_model(save_model_path, s.model_cfg, s.model, s.run.model_seed);
  }
  std::cout << "frozen base digest after training: " << model_digest(s.model)
            << (model_digest(s.model) == base_digest ? " (unchanged)" : " (CHANGED!)") << "\n";
  std::cout << "checkpoint written to " << out << "\n";
  return 0;
}

int cmd_compress(Session& s, const std::string& input, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::string text = read_text_file(input);
  const auto tokens = Tokenizer::encode(text);

  PairCounter pc;
  const auto segs = segment(tokens, s.run.seg);
  auto ces = compress_context(s.model_cfg, s.model, s.comp, tokens, s.run.seg, s.run.comp, &pc);

  json manifest;
  manifest["blobs"] = json::array();
  for (std::size_t i = 0; i < ces.size(); ++i) {
    const std::string blob = out_dir + "/" + ces[i].source_hash + ".ceblob";
    save_ce_blob(blob, ces[i], segs[i].token_ids.size());
    json entry;
    entry["index"] = i;
    entry["source_hash"] = ces[i].source_hash;
    entry["n_tokens"] = segs[i].token_ids.size();
    entry["n_ces"] = ces[i].concept_embeddings.rows();
    manifest["blobs"].push_back(entry);
  }
  manifest["compressor_digest"] = compressor_digest(s.comp);
  manifest["compression_rate"] = s.run.comp.compression_rate;
  manifest["compression_pairs"] = pc.pairs;

  std::ofstream mf(out_dir + "/manifest.json");
  if (!mf) throw IoError("cannot write manifest in " + out_dir);
  mf << manifest.dump(2) << "\n";
  std::cout << "wrote " << ces.size() << " CE blobs + manifest to " << out_dir << "\n";
  return 0;
}

int cmd_generate(Session& s, const std::string& context_file, const std::string& ce_manifest,
                 const std::string& question, int max_new_tokens, bool no_compress,
                 bool print_costs) {
  if (!ce_manifest.empty()) {
    // Pre-compressed input: assemble the effective sequence from blobs.
    const std::string dir = std::filesystem::path(ce_manifest).parent_path().string();
    json manifest = json::parse(read_text_file(ce_manifest));
    std::vector<CompressedSegment<float>> ces;
    for (const auto& entry : manifest.at("blobs")) {
      ces.push_back(load_ce_blob<float>(dir + "/" + entry.at("source_hash").get<std::string>() +
                                        ".ceblob"));
    }
    Matrix<float> effective =
        effective_sequence(s.model_cfg, s.model, ces, Tokenizer::encode(question));

    CostReport cost;
    cost.effective_len = static_cast<std::uint64_t>(effective.rows());
    PairCounter prefill_pc, decode_pc;
    const auto t0 = std::chrono::steady_clock::now();
    PrefillResult<float> pre = prefill(s.model_cfg, s.model, effective, &prefill_pc,
                                       static_cast<int>(effective.rows()) + max_new_tokens);
    cost.prefill_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    cost.prefill_pairs = prefill_pc.pairs;

    std::vector<TokenId> out_tokens;
    Matrix<float> logits = std::move(pre.last_logits);
    while (true) {
      const TokenId tok = argmax_token(logits);
      if (tok == Tokenizer::kEos) break;
      out_tokens.push_back(tok);
      if (static_cast<int>(out_tokens.size()) >= max_new_tokens) break;
      if (pre.cache.current_len + 1 > s.model_cfg.max_positions) break;
      Matrix<float> e = s.model.token_embedding.row(tok);
      logits = decode_step(s.model_cfg, s.model, pre.cache, e, &decode_pc);
    }
    cost.decode_pairs = decode_pc.pairs;
    cost.kv_entries = cost.effective_len + out_tokens.size();
    std::cout << Tokenizer::decode(out_tokens) << "\n";
    if (print_costs) print_cost(cost);
    return 0;
  }

  InferenceRequest req;
  req.context_text = read_text_file(context_file);
  req.question_text = question;
  req.use_compression = !no_compress;
  req.max_new_tokens = max_new_tokens;

  std::optional<CeCache<float>> cache;
  if (!s.run.cache_dir.empty() && req.use_compression) {
    cache.emplace(std::numeric_limits<std::uint64_t>::max(), s.run.cache_dir);
  }
  auto res = answer(s.model_cfg, s.model, s.comp, req, s.run.seg, s.run.comp,
                    cache ? &*cache : nullptr);
  std::cout << res.text << "\n";
  if (print_costs) print_cost(res.cost);
  return 0;
}

int cmd_bench(Session& s, const std::string& lengths_csv, int max_new_tokens,
              const std::string& out_csv, const std::string& summary_path, bool cache_stats) {
  const auto lengths = parse_lengths(lengths_csv);
  std::optional<CeCache<float>> cache;
  if (cache_stats || !s.run.cache_dir.empty()) {
    cache.emplace(std::numeric_limits<std::uint64_t>::max(), s.run.cache_dir);
  }

  auto rows = bench_sweep(s.model_cfg, s.model, s.comp, lengths, max_new_tokens, s.run.seg,
                          s.run.comp, "", cache ? &*cache : nullptr);
  const std::string csv = bench_table_csv(rows);
  if (out_csv.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(out_csv);
    if (!f) throw IoError("cannot write " + out_csv);
    f << csv;
    std::cout << "wrote bench table to " << out_csv << "\n";
  }

  json summary = bench_summary_json(rows);
  const CrossoverReport xr = crossover_report(rows);
  summary["pair_crossover_n"] = xr.pair_crossover_n;
  summary["wallclock_crossover_n"] = xr.wallclock_crossover_n;
  if (summary_path.empty()) {
    std::cout << summary.dump(2) << "\n";
  } else {
    std::ofstream f(summary_path);
    if (!f) throw IoError("cannot write " + summary_path);
    f << summary.dump(2) << "\n";
  }

  if (cache_stats && cache) {
    const CacheStats st = cache->stats();
    std::cout << "cache: hits=" << st.hits << " misses=" << st.misses
              << " entries=" << st.entries << " bytes=" << st.bytes << "\n";
  }
  return 0;
}

int cmd_eval(Session& s, const std::string& corpus_path, const std::string& variant,
             int max_answer_tokens) {
  const auto corpus = read_corpus(corpus_path);
  const auto run_variant = [&](bool compressed) {
    EvalResult r = evaluate(s.model_cfg, s.model, s.comp, corpus, compressed, s.run.seg,
                            s.run.comp, max_answer_tokens);
    std::cout << (compressed ? "compressed   " : "uncompressed ") << "exact_match="
              << r.exact_match_rate << " samples=" << r.n_samples;
    std::cout << " per_position=[";
    for (std::size_t i = 0; i < r.per_position_accuracy.size(); ++i) {
      std::cout << (i ? "," : "") << r.per_position_accuracy[i];
    }
    std::cout << "]\n";
    std::cout << "  pairs: compression=" << r.total_cost.compression_pairs
              << " prefill=" << r.total_cost.prefill_pairs
              << " decode=" << r.total_cost.decode_pairs << "\n";
  };
  if (variant == "both" || variant == "uncompressed") run_variant(false);
  if (variant == "both" || variant == "compressed") run_variant(true);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compllm: segment-wise context compression for a desk-scale decoder"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON run configuration (flags override)");

  // make-corpus
  auto* mk = app.add_subcommand("make-corpus", "generate a synthetic retrieval corpus");
  std::string mk_out = "corpus.jsonl";
  int mk_facts = 8, mk_filler = 2, mk_contexts = 1;
  std::uint64_t mk_seed = 0;
  mk->add_option("--out", mk_out, "output corpus file (JSON lines)");
  mk->add_option("--n-facts", mk_facts, "facts per context")->check(CLI::Range(1, 1 << 20));
  mk->add_option("--filler-per-fact", mk_filler, "filler sentences per fact")
      ->check(CLI::Range(0, 1 << 20));
  mk->add_option("--n-contexts", mk_contexts, "number of contexts")->check(CLI::Range(1, 1 << 20));
  mk->add_option("--seed", mk_seed, "base seed");

  // train
  auto* tr = app.add_subcommand("train", "train the compressor by activation distillation");
  std::string tr_corpus, tr_out = "compressor.ckpt", tr_resume, tr_log, tr_save_model;
  int tr_every = 0;
  bool tr_teacher = false;
  double tr_lr = -1, tr_beta = -1;
  int tr_steps = -1, tr_batch = -1;
  tr->add_option("--corpus", tr_corpus, "training corpus (JSON lines)")->required();
  tr->add_option("--out", tr_out, "checkpoint path");
  tr->add_option("--resume", tr_resume, "resume from checkpoint");
  tr->add_option("--max-steps", tr_steps, "total optimizer steps");
  tr->add_option("--batch-size", tr_batch, "samples per step");
  tr->add_option("--lr", tr_lr, "learning rate");
  tr->add_option("--beta", tr_beta, "SmoothL1 threshold");
  tr->add_option("--checkpoint-every", tr_every, "checkpoint period in steps");
  tr->add_option("--log", tr_log, "loss log file (CSV)");
  tr->add_option("--save-model", tr_save_model, "also write the frozen base checkpoint here");
  tr->add_flag("--teacher-answers", tr_teacher, "generate answers with the teacher");

  // compress
  auto* cp = app.add_subcommand("compress", "compress a text file into CE blobs");
  std::string cp_input, cp_ckpt, cp_out = "ce_out";
  cp->add_option("--input", cp_input, "UTF-8 text file")->required();
  cp->add_option("--checkpoint", cp_ckpt, "compressor checkpoint");
  cp->add_option("--out-dir", cp_out, "output directory for blobs + manifest");

  // generate
  auto* gen = app.add_subcommand("generate", "answer a question over a context");
  std::string gen_ctx, gen_manifest, gen_ckpt, gen_question;
  int gen_max_new = 16;
  bool gen_nocompress = false, gen_costs = false;
  gen->add_option("--context", gen_ctx, "context text file");
  gen->add_option("--ce-manifest", gen_manifest, "manifest.json of precompressed CE blobs");
  gen->add_option("--checkpoint", gen_ckpt, "compressor checkpoint");
  gen->add_option("--question", gen_question, "question text")->required();
  gen->add_option("--max-new-tokens", gen_max_new, "decode budget")->check(CLI::Range(1, 1 << 20));
  gen->add_flag("--no-compress", gen_nocompress, "feed raw TEs instead of CEs");
  gen->add_flag("--costs", gen_costs, "print the cost report");

  // bench
  auto* bn = app.add_subcommand("bench", "cost sweep with and without compression");
  std::string bn_lengths = "256,512,1024,2048,4096,8192", bn_ckpt, bn_csv, bn_summary;
  int bn_max_new = 1;
  bool bn_cache_stats = false;
  bn->add_option("--lengths", bn_lengths, "comma-separated context lengths");
  bn->add_option("--max-new-tokens", bn_max_new, "decode budget per run")
      ->check(CLI::Range(1, 1 << 20));
  bn->add_option("--checkpoint", bn_ckpt, "compressor checkpoint");
  bn->add_option("--out", bn_csv, "bench table CSV path (default: stdout)");
  bn->add_option("--summary", bn_summary, "summary JSON path (default: stdout)");
  bn->add_flag("--cache-stats", bn_cache_stats, "run through a CE cache and print its stats");

  // eval
  auto* ev = app.add_subcommand("eval", "exact-match evaluation over a corpus");
  std::string ev_corpus, ev_ckpt, ev_variant = "both";
  int ev_max_answer = -1;
  ev->add_option("--corpus", ev_corpus, "evaluation corpus (JSON lines)")->required();
  ev->add_option("--checkpoint", ev_ckpt, "compressor checkpoint");
  ev->add_option("--variant", ev_variant, "both | compressed | uncompressed")
      ->check(CLI::IsMember({"both", "compressed", "uncompressed"}));
  ev->add_option("--max-answer-tokens", ev_max_answer, "decode budget per answer");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig run = load_config(config_path);
    if (mk->parsed()) return cmd_make_corpus(mk_out, mk_facts, mk_filler, mk_contexts, mk_seed);

    if (tr->parsed()) {
      if (tr_lr > 0) run.train.learning_rate = tr_lr;
      if (tr_beta > 0) run.train.beta = tr_beta;
      if (tr_steps >= 0) run.train.max_steps = tr_steps;
      if (tr_batch > 0) run.train.batch_size = tr_batch;
      Session s = open_session(run, tr_resume);
      return cmd_train(s, tr_corpus, tr_out, tr_every, tr_log, tr_teacher, tr_save_model);
    }
    if (cp->parsed()) {
      Session s = open_session(run, cp_ckpt);
      return cmd_compress(s, cp_input, cp_out);
    }
    if (gen->parsed()) {
      if (gen_ctx.empty() == gen_manifest.empty()) {
        throw InputError("generate: pass exactly one of --context / --ce-manifest");
      }
      Session s = open_session(run, gen_ckpt);
      return cmd_generate(s, gen_ctx, gen_manifest, gen_question, gen_max_new, gen_nocompress,
                          gen_costs);
    }
    if (bn->parsed()) {
      Session s = open_session(run, bn_ckpt);
      return cmd_bench(s, bn_lengths, bn_max_new, bn_csv, bn_summary, bn_cache_stats);
    }
    if (ev->parsed()) {
      Session s = open_session(run, ev_ckpt);
      return cmd_eval(s, ev_corpus, ev_variant,
                      ev_max_answer > 0 ? ev_max_answer : run.max_answer_tokens);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
