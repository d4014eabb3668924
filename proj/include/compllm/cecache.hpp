#pragma once

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <list>
#include <mutex>
#include <string>
#include <unordered_map>
#include <utility>

#include "compllm/compressor.hpp"
#include "compllm/segmenter.hpp"
#include "compllm/tensorio.hpp"

namespace compllm {

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t entries = 0;
  std::uint64_t bytes = 0;
};

// Writes one CE blob in the shared container format.
template <class S>
void save_ce_blob(const std::string& path, const CompressedSegment<S>& ce,
                  std::size_t n_tokens = 0) {
  ContainerWriter w;
  w.add_matrix("ce", ce.concept_embeddings);
  nlohmann::json meta;
  meta["kind"] = "ce_blob";
  meta["source_hash"] = ce.source_hash;
  meta["n_tokens"] = n_tokens;
  w.set_meta(std::move(meta));
  w.write(path);
}

template <class S>
CompressedSegment<S> load_ce_blob(const std::string& path) {
  Container c = Container::read(path);
  CompressedSegment<S> ce;
  ce.concept_embeddings = c.matrix<S>("ce");
  ce.source_hash = c.meta().at("source_hash");
  return ce;
}

// Content-addressed store for compressed segments. Keys cover the segment's
// token ids, the compressor version digest and the compression rate, so an
// entry can never be served against different parameters. Optional directory
// persistence keeps one <hex key>.ceblob file per entry; store I/O failures
// degrade to compute-without-store with a warning.
template <class S>
class CeCache {
 public:
  explicit CeCache(std::uint64_t capacity_entries = std::numeric_limits<std::uint64_t>::max(),
                   std::string directory = "")
      : capacity_(capacity_entries), dir_(std::move(directory)) {
    if (!dir_.empty()) {
      std::error_code ec;
      std::filesystem::create_directories(dir_, ec);
      if (ec) {
        warn_once("cannot create cache directory " + dir_ + ": " + ec.message());
        dir_.clear();  // compute-without-store
      }
    }
  }

  CompressedSegment<S> get_or_compress(const ModelConfig& cfg, const ModelParams<S>& model,
                                       const CompressorParams<S>& comp, const Segment& seg,
                                       const CompressionConfig& ccfg = {},
                                       PairCounter* counter = nullptr) {
    ccfg.validate();
    const std::string digest = compressor_digest(comp);
    const std::string key = segment_source_hash(seg.token_ids, digest, ccfg.compression_rate);

    std::lock_guard<std::mutex> lock(mu_);
    auto it = map_.find(key);
    if (it != map_.end()) {
      stats_.hits += 1;
      lru_.splice(lru_.begin(), lru_, it->second.lru_it);
      return it->second.ce;
    }
    if (!dir_.empty()) {
      const std::string path = blob_path(key);
      std::error_code ec;
      if (std::filesystem::exists(path, ec)) {
        try {
          CompressedSegment<S> ce = load_ce_blob<S>(path);
          if (ce.source_hash == key) {
            stats_.hits += 1;
            insert_locked(key, ce, /*persist=*/false);
            return ce;
          }
        } catch (const std::exception& e) {
          warn_once(e.what());
        }
      }
    }

    stats_.misses += 1;
    CompressedSegment<S> ce =
        detail::compress_segment_impl(cfg, model, comp, seg, ccfg, digest, counter,
                                      static_cast<ForwardTape<S>*>(nullptr));
    insert_locked(key, ce, /*persist=*/true, seg.token_ids.size());
    return ce;
  }

  // Least-recently-used eviction of in-memory entries down to max_entries;
  // returns the number evicted. Persistent blob files are left in place.
  std::uint64_t evict_to(std::uint64_t max_entries) {
    std::lock_guard<std::mutex> lock(mu_);
    std::uint64_t evicted = 0;
    while (map_.size() > max_entries) {
      const std::string& victim = lru_.back();
      auto it = map_.find(victim);
      stats_.bytes -= entry_bytes(it->second.ce);
      map_.erase(it);
      lru_.pop_back();
      ++evicted;
    }
    stats_.entries = map_.size();
    return evicted;
  }

  void set_capacity(std::uint64_t capacity_entries) {
    capacity_ = capacity_entries;
    evict_to(capacity_);
  }

  CacheStats stats() const {
    std::lock_guard<std::mutex> lock(mu_);
    return stats_;
  }

 private:
  struct Entry {
    CompressedSegment<S> ce;
    std::list<std::string>::iterator lru_it;
  };

  static std::uint64_t entry_bytes(const CompressedSegment<S>& ce) {
    return static_cast<std::uint64_t>(ce.concept_embeddings.size()) * sizeof(S);
  }

  std::string blob_path(const std::string& key) const { return dir_ + "/" + key + ".ceblob"; }

  void insert_locked(const std::string& key, const CompressedSegment<S>& ce, bool persist,
                     std::size_t n_tokens = 0) {
    lru_.push_front(key);
    map_[key] = Entry{ce, lru_.begin()};
    stats_.bytes += entry_bytes(ce);
    stats_.entries = map_.size();
    if (persist && !dir_.empty()) {
      try {
        save_ce_blob(blob_path(key), ce, n_tokens);
      } catch (const std::exception& e) {
        warn_once(e.what());
      }
    }
    while (map_.size() > capacity_) {
      const std::string& victim = lru_.back();
      auto it = map_.find(victim);
      stats_.bytes -= entry_bytes(it->second.ce);
      map_.erase(it);
      lru_.pop_back();
    }
    stats_.entries = map_.size();
  }

  void warn_once(const std::string& what) {
    if (!warned_) {
      std::cerr << "cecache: store I/O failed, continuing without persistence: " << what << "\n";
      warned_ = true;
    }
  }

  mutable std::mutex mu_;
  std::uint64_t capacity_;
  std::string dir_;
  std::unordered_map<std::string, Entry> map_;
  std::list<std::string> lru_;
  CacheStats stats_;
  bool warned_ = false;
};

}  // namespace compllm
