#include "tale/vocab.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "tale/util.hpp"

namespace tale {

namespace {

constexpr char kMagic[4] = {'T', 'E', 'V', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw ParseError("vocabulary: truncated binary file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

float read_f32(std::istream& is) {
  std::uint32_t bits = read_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is) {
  std::uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw ParseError("vocabulary: truncated string in binary file");
  return s;
}

CodeVocabulary load_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file: " + path);
  CodeVocabulary v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cols = split_on(line, '\t');
    if (cols.size() != 3)
      throw ParseError("vocabulary line " + std::to_string(lineno) + ": expected 3 tab-separated columns, got " +
                       std::to_string(cols.size()));
    std::vector<double> row;
    std::istringstream fs(cols[2]);
    double x;
    while (fs >> x) row.push_back(x);
    if (!fs.eof())
      throw ParseError("vocabulary line " + std::to_string(lineno) + ": malformed embedding value");
    if (row.empty())
      throw ParseError("vocabulary line " + std::to_string(lineno) + ": empty embedding");
    if (v.d_emb == 0) v.d_emb = row.size();
    if (row.size() != v.d_emb)
      throw DataError("vocabulary line " + std::to_string(lineno) + ": embedding dimension " +
                      std::to_string(row.size()) + " does not match " + std::to_string(v.d_emb));
    v.codes.push_back(cols[0]);
    v.descriptions.push_back(cols[1]);
    v.embeddings.insert(v.embeddings.end(), row.begin(), row.end());
  }
  v.rebuild_index();
  v.validate();
  return v;
}

CodeVocabulary load_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw ParseError("vocabulary: bad magic in " + path);
  std::uint32_t n = read_u32(in);
  std::uint32_t d = read_u32(in);
  CodeVocabulary v;
  v.d_emb = d;
  v.codes.reserve(n);
  v.descriptions.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    v.codes.push_back(read_str(in));
    v.descriptions.push_back(read_str(in));
  }
  v.embeddings.reserve(static_cast<std::size_t>(n) * d);
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * d; ++i)
    v.embeddings.push_back(static_cast<double>(read_f32(in)));
  v.rebuild_index();
  v.validate();
  return v;
}

}  // namespace

void CodeVocabulary::rebuild_index() {
  index.clear();
  for (std::size_t i = 0; i < codes.size(); ++i) {
    auto [it, fresh] = index.emplace(codes[i], i);
    if (!fresh) throw DataError("duplicate code '" + codes[i] + "'");
  }
}

void CodeVocabulary::validate() const {
  if (codes.size() != descriptions.size())
    throw DataError("vocabulary: codes/descriptions size mismatch");
  if (embeddings.size() != codes.size() * d_emb)
    throw DataError("vocabulary: embedding matrix size mismatch");
  for (double x : embeddings)
    if (!std::isfinite(x)) throw DataError("vocabulary: non-finite embedding entry");
}

CodeVocabulary load_vocabulary(const std::string& path, VocabFormat format) {
  return format == VocabFormat::binary ? load_binary(path) : load_tsv(path);
}

CodeVocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary file: " + path);
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  bool binary = in && std::memcmp(magic, kMagic, 4) == 0;
  in.close();
  return load_vocabulary(path, binary ? VocabFormat::binary : VocabFormat::tsv);
}

void save_vocabulary(const CodeVocabulary& v, const std::string& path, VocabFormat format) {
  if (format == VocabFormat::binary) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write vocabulary file: " + path);
    out.write(kMagic, 4);
    write_u32(out, static_cast<std::uint32_t>(v.size()));
    write_u32(out, static_cast<std::uint32_t>(v.d_emb));
    for (std::size_t i = 0; i < v.size(); ++i) {
      write_str(out, v.codes[i]);
      write_str(out, v.descriptions[i]);
    }
    for (double x : v.embeddings) write_f32(out, static_cast<float>(x));
    if (!out) throw IoError("write failed: " + path);
    return;
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary file: " + path);
  for (std::size_t i = 0; i < v.size(); ++i) {
    out << v.codes[i] << '\t' << v.descriptions[i] << '\t';
    for (std::size_t j = 0; j < v.d_emb; ++j) {
      if (j) out << ' ';
      out << fmt_double(v.embeddings[i * v.d_emb + j]);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

CodeVocabulary random_vocabulary(std::size_t n_codes, std::size_t d_emb, std::uint64_t seed) {
  if (n_codes < 1 || d_emb < 1) throw ConfigError("random_vocabulary: n_codes and d_emb must be >= 1");
  CodeVocabulary v;
  v.d_emb = d_emb;
  std::mt19937_64 rng(seed_mix(seed, 0x7ec0));
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(d_emb)));
  v.embeddings.reserve(n_codes * d_emb);
  for (std::size_t i = 0; i < n_codes; ++i) {
    v.codes.push_back("C" + std::to_string(i));
    v.descriptions.push_back("synthetic code " + std::to_string(i));
    for (std::size_t j = 0; j < d_emb; ++j)
      v.embeddings.push_back(static_cast<double>(static_cast<float>(dist(rng))));
  }
  v.rebuild_index();
  return v;
}

}  // namespace tale
