#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "compllm/common.hpp"

namespace compllm {

// Byte-level tokenizer: ids 0..255 are raw byte values, 256..259 are the
// special ids. encode() never emits specials, so round-trips are lossless.
struct Tokenizer {
  static constexpr TokenId kBos = 256;
  static constexpr TokenId kEos = 257;
  static constexpr TokenId kPad = 258;
  static constexpr TokenId kSep = 259;
  static constexpr int kVocabSize = 260;

  static std::vector<TokenId> encode(std::string_view text) {
    std::vector<TokenId> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(static_cast<TokenId>(c));
    return ids;
  }

  // Special ids carry no byte value and are dropped.
  static std::string decode(const std::vector<TokenId>& ids) {
    std::string text;
    text.reserve(ids.size());
    for (TokenId id : ids) {
      if (id >= 0 && id < 256) text.push_back(static_cast<char>(id));
    }
    return text;
  }
};

}  // namespace compllm
