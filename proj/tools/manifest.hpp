#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ev4dgs/config.hpp"
#include "ev4dgs/core/error.hpp"
#include "json.hpp"

namespace ev4dgs::cli {

inline std::string sha1_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha1 failed");
  }
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

/// Git's blob id: sha1("blob <size>\0" + content).
inline std::string git_blob_hash(const std::string& content) {
  std::string framed = "blob " + std::to_string(content.size());
  framed.push_back('\0');
  framed += content;
  return sha1_hex(framed);
}

inline std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Blob hash of a file; a directory hashes the sorted "<hash> <name>" lines
/// of its regular files, like a flat git tree.
inline std::string content_hash(const std::string& path) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(path)) return git_blob_hash(read_bytes(path));
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  std::string listing;
  for (const auto& n : names) listing += content_hash((fs::path(path) / n).string()) + " " + n + "\n";
  return git_blob_hash(listing);
}

class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& argv) {
    doc_["tool"] = "ev4dgs";
    doc_["command"] = std::move(command);
    doc_["argv"] = argv;
    doc_["inputs"] = nlohmann::json::object();
    doc_["outputs"] = nlohmann::json::array();
  }

  void input(const std::string& role, const std::string& path) {
    doc_["inputs"][role] = {{"path", path}, {"sha1", content_hash(path)}};
  }
  void output(const std::string& path) { doc_["outputs"].push_back(path); }
  void seed(std::uint64_t s) { doc_["seed"] = s; }
  void config(const Config& c) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : c.values()) j[k] = v;
    doc_["config"] = j;
  }
  void set(const std::string& key, nlohmann::json value) { doc_[key] = std::move(value); }

  void write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << doc_.dump(2) << "\n";
  }

 private:
  nlohmann::json doc_;
};

/// Manifest location for an output: inside it when it is a directory,
/// otherwise next to it.
inline std::string manifest_path(const std::string& output) {
  namespace fs = std::filesystem;
  if (fs::is_directory(output)) return (fs::path(output) / "manifest.json").string();
  return output + ".manifest.json";
}

}  // namespace ev4dgs::cli
