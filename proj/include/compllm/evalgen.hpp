#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "compllm/distill.hpp"
#include "compllm/pipeline.hpp"
#include "compllm/tokenizer.hpp"

namespace compllm {

struct SyntheticSpec {
  int n_facts = 8;
  int filler_sentences_per_fact = 2;
  std::string key_alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";
  std::string value_alphabet = "abcdefghijklmnopqrstuvwxyz";
  std::uint64_t seed = 0;

  void validate() const {
    if (n_facts < 1) throw InputError("SyntheticSpec: n_facts must be >= 1");
    if (filler_sentences_per_fact < 0) {
      throw InputError("SyntheticSpec: filler_sentences_per_fact must be >= 0");
    }
    if (key_alphabet.empty() || value_alphabet.empty()) {
      throw InputError("SyntheticSpec: alphabets must be nonempty");
    }
  }
};

// Text form of one Q&A sample. All records from one corpus share the context.
struct CorpusRecord {
  std::string context;
  std::string question;
  std::string answer;
  int fact_position = -1;  // index of the asked fact within the context

  bool operator==(const CorpusRecord&) const = default;
};

inline DistillSample to_sample(const CorpusRecord& r,
                               DistillSample::AnswerSource source =
                                   DistillSample::AnswerSource::kDatasetProvided) {
  DistillSample s;
  s.context_tokens = Tokenizer::encode(r.context);
  s.instruction_tokens = Tokenizer::encode(r.question);
  s.answer_tokens = Tokenizer::encode(r.answer);
  s.answer_source = source;
  return s;
}

namespace detail {

inline const std::vector<std::string>& filler_nouns() {
  static const std::vector<std::string> v = {"river",  "lantern", "garden", "engine",
                                             "meadow", "harbor",  "violin", "orchard"};
  return v;
}

inline const std::vector<std::string>& filler_verbs() {
  static const std::vector<std::string> v = {"drifts", "rests", "settles", "turns",
                                             "waits",  "hums",  "leans",   "glows"};
  return v;
}

inline const std::vector<std::string>& filler_adjectives() {
  static const std::vector<std::string> v = {"quiet",     "amber", "distant", "gentle",
                                             "weathered", "pale",  "steady",  "old"};
  return v;
}

// Fixed template bank with random slot fills; every sentence ends in a
// boundary byte so the segmenter has natural split points.
inline std::string filler_sentence(std::mt19937_64& rng) {
  auto pick = [&rng](const std::vector<std::string>& words) {
    std::uniform_int_distribution<std::size_t> d(0, words.size() - 1);
    return words[d(rng)];
  };
  std::uniform_int_distribution<int> t(0, 3);
  switch (t(rng)) {
    case 0: return "the " + pick(filler_adjectives()) + " " + pick(filler_nouns()) + " " +
                   pick(filler_verbs()) + ".";
    case 1: return "a " + pick(filler_nouns()) + " " + pick(filler_verbs()) + " near the " +
                   pick(filler_nouns()) + ".";
    case 2: return "every " + pick(filler_nouns()) + " " + pick(filler_verbs()) + " in the " +
                   pick(filler_adjectives()) + " evening.";
    default: return "one " + pick(filler_adjectives()) + " " + pick(filler_nouns()) +
                    " slowly " + pick(filler_verbs()) + ".";
  }
}

inline std::string random_word(std::mt19937_64& rng, const std::string& alphabet, int len) {
  std::uniform_int_distribution<std::size_t> d(0, alphabet.size() - 1);
  std::string w(static_cast<std::size_t>(len), ' ');
  for (auto& c : w) c = alphabet[d(rng)];
  return w;
}

}  // namespace detail

// One shuffled context of key/value "needle" facts interleaved with filler
// sentences, plus one question per fact. Deterministic per seed; keys are
// unique within the corpus.
inline std::vector<CorpusRecord> make_corpus(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);

  std::set<std::string> seen;
  std::vector<std::string> keys, values;
  while (static_cast<int>(keys.size()) < spec.n_facts) {
    std::string k = detail::random_word(rng, spec.key_alphabet, 3);
    if (seen.insert(k).second) keys.push_back(k);
  }
  for (int i = 0; i < spec.n_facts; ++i) {
    values.push_back(detail::random_word(rng, spec.value_alphabet, 4));
  }

  std::vector<int> order(static_cast<std::size_t>(spec.n_facts));
  for (int i = 0; i < spec.n_facts; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);

  std::string context;
  std::vector<int> position_of_fact(static_cast<std::size_t>(spec.n_facts), 0);
  for (int pos = 0; pos < spec.n_facts; ++pos) {
    const int fact = order[static_cast<std::size_t>(pos)];
    position_of_fact[static_cast<std::size_t>(fact)] = pos;
    for (int f = 0; f < spec.filler_sentences_per_fact; ++f) {
      if (!context.empty()) context += " ";
      context += detail::filler_sentence(rng);
    }
    if (!context.empty()) context += " ";
    context += "key " + keys[static_cast<std::size_t>(fact)] + " is " +
               values[static_cast<std::size_t>(fact)] + ".";
  }

  std::vector<CorpusRecord> records;
  records.reserve(static_cast<std::size_t>(spec.n_facts));
  for (int fact = 0; fact < spec.n_facts; ++fact) {
    CorpusRecord r;
    r.context = context;
    r.question = "what is " + keys[static_cast<std::size_t>(fact)] + "?";
    r.answer = values[static_cast<std::size_t>(fact)];
    r.fact_position = position_of_fact[static_cast<std::size_t>(fact)];
    records.push_back(std::move(r));
  }
  return records;
}

inline std::vector<DistillSample> make_corpus_samples(const SyntheticSpec& spec) {
  std::vector<DistillSample> out;
  for (const CorpusRecord& r : make_corpus(spec)) out.push_back(to_sample(r));
  return out;
}

// Line-delimited JSON records with fields context, question, answer.
inline void write_corpus(const std::string& path, const std::vector<CorpusRecord>& records) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  for (const CorpusRecord& r : records) {
    nlohmann::json j;
    j["context"] = r.context;
    j["question"] = r.question;
    j["answer"] = r.answer;
    if (r.fact_position >= 0) j["fact_pos"] = r.fact_position;
    f << j.dump() << "\n";
  }
  if (!f) throw IoError("write failed: " + path);
}

inline std::vector<CorpusRecord> read_corpus(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<CorpusRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ":" + std::to_string(line_no) + ": bad record: " + e.what());
    }
    CorpusRecord r;
    r.context = j.at("context");
    r.question = j.at("question");
    r.answer = j.at("answer");
    r.fact_position = j.value("fact_pos", -1);
    records.push_back(std::move(r));
  }
  return records;
}

// Trim and collapse whitespace runs before exact-match comparison.
inline std::string normalize_whitespace(const std::string& s) {
  std::string out;
  bool in_space = true;  // leading whitespace dropped
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_space = true;
    } else {
      if (in_space && !out.empty()) out.push_back(' ');
      out.push_back(c);
      in_space = false;
    }
  }
  return out;
}

struct EvalResult {
  double exact_match_rate = 0;
  std::vector<double> per_position_accuracy;
  std::vector<int> per_position_total;
  bool compressed = false;
  int n_samples = 0;
  CostReport total_cost;  // summed over samples
};

// Greedy generation per sample, exact string match after whitespace
// normalization, aggregated per fact position.
template <class S>
EvalResult evaluate(const ModelConfig& cfg, const ModelParams<S>& model,
                    const CompressorParams<S>& comp, const std::vector<CorpusRecord>& corpus,
                    bool use_compression, const SegmentationConfig& seg_cfg = {},
                    const CompressionConfig& ccfg = {}, int max_answer_tokens = 16,
                    CeCache<S>* cache = nullptr) {
  EvalResult res;
  res.compressed = use_compression;
  res.n_samples = static_cast<int>(corpus.size());

  int max_pos = -1;
  for (const CorpusRecord& r : corpus) max_pos = std::max(max_pos, r.fact_position);
  std::vector<int> pos_hits(static_cast<std::size_t>(max_pos + 1), 0);
  std::vector<int> pos_total(static_cast<std::size_t>(max_pos + 1), 0);

  int hits = 0;
  for (const CorpusRecord& r : corpus) {
    InferenceRequest req;
    req.context_text = r.context;
    req.question_text = r.question;
    req.use_compression = use_compression;
    req.max_new_tokens = max_answer_tokens;
    AnswerResult<S> a = answer(cfg, model, comp, req, seg_cfg, ccfg, cache);

    res.total_cost.compression_pairs += a.cost.compression_pairs;
    res.total_cost.prefill_pairs += a.cost.prefill_pairs;
    res.total_cost.decode_pairs += a.cost.decode_pairs;
    res.total_cost.compression_ms += a.cost.compression_ms;
    res.total_cost.prefill_ms += a.cost.prefill_ms;
    res.total_cost.decode_ms += a.cost.decode_ms;

    const bool match = normalize_whitespace(a.text) == normalize_whitespace(r.answer);
    if (match) ++hits;
    if (r.fact_position >= 0) {
      pos_total[static_cast<std::size_t>(r.fact_position)] += 1;
      if (match) pos_hits[static_cast<std::size_t>(r.fact_position)] += 1;
    }
  }

  res.exact_match_rate = corpus.empty() ? 0.0 : static_cast<double>(hits) / corpus.size();
  res.per_position_accuracy.resize(pos_total.size(), 0.0);
  res.per_position_total = pos_total;
  for (std::size_t i = 0; i < pos_total.size(); ++i) {
    if (pos_total[i] > 0) {
      res.per_position_accuracy[i] = static_cast<double>(pos_hits[i]) / pos_total[i];
    }
  }
  return res;
}

}  // namespace compllm
