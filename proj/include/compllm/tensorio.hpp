#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "compllm/common.hpp"

namespace compllm {

// Single-file tensor container, shared by model/compressor checkpoints and CE
// blobs:
//
//   bytes 0..3   magic "CLMB"
//   bytes 4..7   format version (u32 LE)
//   bytes 8..15  manifest length in bytes (u64 LE)
//   ...          manifest (UTF-8 JSON: tensor name/shape/dtype/offset + meta)
//   ...          one f32 little-endian blob holding all tensors
inline constexpr char kContainerMagic[4] = {'C', 'L', 'M', 'B'};
inline constexpr std::uint32_t kContainerVersion = 1;

class ContainerWriter {
 public:
  void add(const std::string& name, std::vector<std::size_t> shape, const float* data,
           std::size_t count) {
    nlohmann::json t;
    t["name"] = name;
    t["shape"] = shape;
    t["dtype"] = "f32";
    t["offset"] = blob_.size() * sizeof(float);
    tensors_.push_back(std::move(t));
    blob_.insert(blob_.end(), data, data + count);
  }

  template <class S>
  void add_matrix(const std::string& name, const Matrix<S>& m) {
    std::vector<float> tmp(static_cast<std::size_t>(m.size()));
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) tmp[k++] = static_cast<float>(m(i, j));
    }
    add(name, {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
        tmp.data(), tmp.size());
  }

  void set_meta(nlohmann::json meta) { meta_ = std::move(meta); }

  void write(const std::string& path) const {
    nlohmann::json manifest;
    manifest["tensors"] = tensors_;
    manifest["meta"] = meta_;
    const std::string text = manifest.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(kContainerMagic, 4);
    const std::uint32_t version = kContainerVersion;
    f.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t mlen = text.size();
    f.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    f.write(reinterpret_cast<const char*>(blob_.data()),
            static_cast<std::streamsize>(blob_.size() * sizeof(float)));
    if (!f) throw IoError("write failed: " + path);
  }

 private:
  nlohmann::json tensors_ = nlohmann::json::array();
  nlohmann::json meta_ = nlohmann::json::object();
  std::vector<float> blob_;
};

class Container {
 public:
  static Container read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);

    char magic[4];
    std::uint32_t version = 0;
    std::uint64_t mlen = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&version), sizeof(version));
    f.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    if (!f || std::memcmp(magic, kContainerMagic, 4) != 0) {
      throw IoError("not a tensor container: " + path);
    }
    if (version != kContainerVersion) throw IoError("unsupported container version: " + path);

    Container c;
    std::string text(mlen, '\0');
    f.read(text.data(), static_cast<std::streamsize>(mlen));
    if (!f) throw IoError("truncated manifest: " + path);
    c.manifest_ = nlohmann::json::parse(text);

    std::vector<char> rest((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (rest.size() % sizeof(float) != 0) throw IoError("blob not f32-aligned: " + path);
    c.blob_.resize(rest.size() / sizeof(float));
    std::memcpy(c.blob_.data(), rest.data(), rest.size());
    return c;
  }

  const nlohmann::json& meta() const { return manifest_.at("meta"); }

  bool has(const std::string& name) const { return find(name) != nullptr; }

  std::vector<std::string> tensor_names() const {
    std::vector<std::string> names;
    for (const auto& t : manifest_.at("tensors")) names.push_back(t.at("name"));
    return names;
  }

  template <class S>
  Matrix<S> matrix(const std::string& name) const {
    const nlohmann::json* t = find(name);
    if (!t) throw IoError("tensor not found: " + name);
    const auto shape = t->at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw IoError("tensor is not 2-d: " + name);
    if (t->at("dtype") != "f32") throw IoError("unsupported dtype for: " + name);
    const std::size_t offset_bytes = t->at("offset").get<std::size_t>();
    const std::size_t count = shape[0] * shape[1];
    if (offset_bytes % sizeof(float) != 0 || offset_bytes / sizeof(float) + count > blob_.size()) {
      throw IoError("tensor data out of range: " + name);
    }
    const float* src = blob_.data() + offset_bytes / sizeof(float);
    Matrix<S> m(static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1]));
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<S>(src[k++]);
    }
    return m;
  }

 private:
  const nlohmann::json* find(const std::string& name) const {
    for (const auto& t : manifest_.at("tensors")) {
      if (t.at("name") == name) return &t;
    }
    return nullptr;
  }

  nlohmann::json manifest_;
  std::vector<float> blob_;
};

}  // namespace compllm
