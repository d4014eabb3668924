#include "compllm/evalgen.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

using namespace compllm;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(MakeCorpus, SingleFactNoFiller) {
  auto records = make_corpus({.n_facts = 1, .filler_sentences_per_fact = 0, .seed = 3});
  ASSERT_EQ(records.size(), 1u);
  const auto& r = records[0];
  EXPECT_EQ(r.context, "key " + r.context.substr(4, 3) + " is " + r.answer + ".");
  EXPECT_EQ(r.question, "what is " + r.context.substr(4, 3) + "?");
  EXPECT_EQ(r.fact_position, 0);
}

TEST(MakeCorpus, DeterministicPerSeed) {
  SyntheticSpec spec{.n_facts = 5, .filler_sentences_per_fact = 2, .seed = 11};
  EXPECT_EQ(make_corpus(spec), make_corpus(spec));
  SyntheticSpec other = spec;
  other.seed = 12;
  EXPECT_NE(make_corpus(other), make_corpus(spec));
}

TEST(MakeCorpus, KeysUniqueAndAnswersPresent) {
  auto records = make_corpus({.n_facts = 12, .filler_sentences_per_fact = 1, .seed = 4});
  std::set<std::string> questions;
  for (const auto& r : records) {
    questions.insert(r.question);
    // Every fact is literally in the shared context.
    EXPECT_NE(r.context.find(" is " + r.answer + "."), std::string::npos);
  }
  EXPECT_EQ(questions.size(), records.size());
}

TEST(MakeCorpus, LengthGrowsLinearly) {
  auto len = [](const SyntheticSpec& s) {
    return make_corpus(s)[0].context.size();
  };
  const auto l4 = len({.n_facts = 4, .filler_sentences_per_fact = 2, .seed = 9});
  const auto l8 = len({.n_facts = 8, .filler_sentences_per_fact = 2, .seed = 9});
  const auto l16 = len({.n_facts = 16, .filler_sentences_per_fact = 2, .seed = 9});
  const double r1 = static_cast<double>(l8) / static_cast<double>(l4);
  const double r2 = static_cast<double>(l16) / static_cast<double>(l8);
  EXPECT_GT(r1, 1.6);
  EXPECT_LT(r1, 2.4);
  EXPECT_GT(r2, 1.6);
  EXPECT_LT(r2, 2.4);
}

TEST(MakeCorpus, PositionsCoverAllSlots) {
  auto records = make_corpus({.n_facts = 6, .filler_sentences_per_fact = 1, .seed = 5});
  std::set<int> positions;
  for (const auto& r : records) positions.insert(r.fact_position);
  EXPECT_EQ(positions.size(), 6u);
  EXPECT_EQ(*positions.begin(), 0);
  EXPECT_EQ(*positions.rbegin(), 5);
}

TEST(MakeCorpus, Validation) {
  EXPECT_THROW(make_corpus({.n_facts = 0}), InputError);
  SyntheticSpec bad;
  bad.key_alphabet.clear();
  EXPECT_THROW(make_corpus(bad), InputError);
}

TEST(CorpusIo, RoundTripIdentical) {
  const std::string path = temp_path("compllm_corpus_rt.jsonl");
  auto records = make_corpus({.n_facts = 4, .filler_sentences_per_fact = 1, .seed = 21});
  write_corpus(path, records);
  auto loaded = read_corpus(path);
  EXPECT_EQ(loaded, records);
  std::remove(path.c_str());
}

TEST(CorpusIo, RejectsMalformedLines) {
  const std::string path = temp_path("compllm_corpus_bad.jsonl");
  {
    std::ofstream f(path);
    f << "this is not json\n";
  }
  EXPECT_THROW(read_corpus(path), IoError);
  std::remove(path.c_str());
}

TEST(NormalizeWhitespace, CollapsesRuns) {
  EXPECT_EQ(normalize_whitespace("  a   b \t c \n"), "a b c");
  EXPECT_EQ(normalize_whitespace(""), "");
  EXPECT_EQ(normalize_whitespace("x"), "x");
}

TEST(ToSample, TokenizesAllFields) {
  CorpusRecord r{.context = "ctx.", .question = "q?", .answer = "ans", .fact_position = 0};
  DistillSample s = to_sample(r);
  EXPECT_EQ(s.context_tokens.size(), 4u);
  EXPECT_EQ(s.instruction_tokens.size(), 2u);
  EXPECT_EQ(s.answer_tokens.size(), 3u);
  EXPECT_EQ(s.answer_source, DistillSample::AnswerSource::kDatasetProvided);
}

TEST(Evaluate, DeterministicAndCostAccounted) {
  ModelConfig cfg = ModelConfig::tiny();
  auto model = ModelParams<float>::random_init(cfg, 42);
  auto comp = CompressorParams<float>::init(cfg, 4, 8.0, 1);
  auto corpus = make_corpus({.n_facts = 3, .filler_sentences_per_fact = 1, .seed = 31});

  auto a = evaluate(cfg, model, comp, corpus, /*use_compression=*/true);
  auto b = evaluate(cfg, model, comp, corpus, /*use_compression=*/true);
  EXPECT_EQ(a.exact_match_rate, b.exact_match_rate);
  EXPECT_EQ(a.per_position_accuracy, b.per_position_accuracy);
  EXPECT_EQ(a.n_samples, 3);
  EXPECT_TRUE(a.compressed);
  EXPECT_GT(a.total_cost.compression_pairs, 0u);

  // The uncompressed variant does no compression work at all.
  auto unc = evaluate(cfg, model, comp, corpus, /*use_compression=*/false);
  EXPECT_EQ(unc.total_cost.compression_pairs, 0u);
  EXPECT_FALSE(unc.compressed);
  EXPECT_GE(unc.exact_match_rate, 0.0);
  EXPECT_LE(unc.exact_match_rate, 1.0);
}

TEST(Evaluate, PerPositionBucketsSumToSamples) {
  ModelConfig cfg = ModelConfig::tiny();
  auto model = ModelParams<float>::random_init(cfg, 42);
  auto comp = CompressorParams<float>::init(cfg, 4, 8.0, 1);
  auto corpus = make_corpus({.n_facts = 4, .filler_sentences_per_fact = 0, .seed = 32});

  auto res = evaluate(cfg, model, comp, corpus, true);
  ASSERT_EQ(res.per_position_total.size(), 4u);
  int total = 0;
  for (int c : res.per_position_total) total += c;
  EXPECT_EQ(total, res.n_samples);
}
