#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "compllm/common.hpp"

namespace compllm {

struct SegmentationConfig {
  int max_segment_tokens = 20;  // S
  std::string boundary_chars = ".!?\n";

  bool is_boundary(TokenId id) const {
    if (id < 0 || id > 255) return false;
    for (char c : boundary_chars) {
      if (static_cast<TokenId>(static_cast<unsigned char>(c)) == id) return true;
    }
    return false;
  }

  void validate() const {
    if (max_segment_tokens < 2) throw InputError("max_segment_tokens must be >= 2");
  }
};

// A run of at most S consecutive context tokens. origin_span holds the
// [begin, end) offsets into the source token stream (equal to byte offsets
// under the byte tokenizer).
struct Segment {
  std::vector<TokenId> token_ids;
  std::size_t begin = 0;
  std::size_t end = 0;
};

// One segment per sentence: a boundary byte closes the segment that contains
// it. Sentences longer than S are hard-split into chunks of exactly S (the
// last chunk possibly shorter). Concatenating all segments reproduces the
// input token stream exactly.
inline std::vector<Segment> segment(const std::vector<TokenId>& token_ids,
                                    const SegmentationConfig& cfg = {}) {
  cfg.validate();
  if (token_ids.empty()) throw InputError("segment: empty token sequence");

  const std::size_t s = static_cast<std::size_t>(cfg.max_segment_tokens);
  std::vector<Segment> out;
  std::size_t start = 0;

  auto flush = [&](std::size_t end) {
    // Hard-split runs longer than S.
    for (std::size_t pos = start; pos < end; pos += s) {
      std::size_t chunk_end = std::min(pos + s, end);
      Segment seg;
      seg.begin = pos;
      seg.end = chunk_end;
      seg.token_ids.assign(token_ids.begin() + static_cast<std::ptrdiff_t>(pos),
                           token_ids.begin() + static_cast<std::ptrdiff_t>(chunk_end));
      out.push_back(std::move(seg));
    }
    start = end;
  };

  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    if (cfg.is_boundary(token_ids[i])) flush(i + 1);
  }
  flush(token_ids.size());
  return out;
}

}  // namespace compllm
