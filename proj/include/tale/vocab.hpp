#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tale/errors.hpp"

namespace tale {

// Medical-code vocabulary: identifiers, free-text descriptions and one fixed
// embedding row per code. Embeddings are inputs, never trained; the struct is
// read-only after construction and safe to share across threads.
struct CodeVocabulary {
  std::vector<std::string> codes;
  std::vector<std::string> descriptions;
  std::vector<double> embeddings;  // row-major, size() x d_emb
  std::size_t d_emb = 0;
  std::unordered_map<std::string, std::size_t> index;

  std::size_t size() const { return codes.size(); }

  std::span<const double> embedding(std::size_t i) const {
    return {embeddings.data() + i * d_emb, d_emb};
  }

  // Index of a known code; unknown codes are rejected rather than mapped to
  // a synthetic OOV row.
  std::size_t require(const std::string& code) const {
    auto it = index.find(code);
    if (it == index.end()) throw DataError("unknown code '" + code + "'");
    return it->second;
  }

  void rebuild_index();
  void validate() const;
};

enum class VocabFormat { tsv, binary };

// TSV rows: code<TAB>description<TAB>f1 f2 ... fd
// Binary: "TEV1", u32 count, u32 dim, per code (u32 len + bytes) twice
// (code, description), then count*dim little-endian float32 row-major.
CodeVocabulary load_vocabulary(const std::string& path, VocabFormat format);
CodeVocabulary load_vocabulary(const std::string& path);  // sniffs the magic
void save_vocabulary(const CodeVocabulary& v, const std::string& path, VocabFormat format);

// Gaussian rows with sd 1/sqrt(d_emb), rounded to float32 so binary
// round-trips are exact. Codes are named C0..C{n-1}. Same seed, same matrix.
CodeVocabulary random_vocabulary(std::size_t n_codes, std::size_t d_emb, std::uint64_t seed);

}  // namespace tale
