#ifndef READMIT_TEXTPREP_HPP
#define READMIT_TEXTPREP_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "readmit/error.hpp"
#include "readmit/io.hpp"
#include "readmit/rng.hpp"
#include "readmit/stopwords.hpp"

namespace readmit {

// ---------------------------------------------------------------------------
// tokenization

class StopWordSet {
 public:
  StopWordSet() = default;
  explicit StopWordSet(std::span<const std::string_view> words) {
    for (auto w : words) words_.emplace(w);
  }

  /// One token per line; blank lines and '#' comments ignored.
  static StopWordSet load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw PathError("cannot open stop-word list '" + path.string() + "'");
    StopWordSet s;
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      s.words_.insert(line);
    }
    return s;
  }

  bool contains(std::string_view w) const { return words_.count(std::string(w)) != 0; }
  std::size_t size() const { return words_.size(); }

 private:
  std::unordered_set<std::string> words_;
};

inline const StopWordSet& default_stopwords() {
  static const StopWordSet set(kEnglishStopWords);
  return set;
}

namespace detail {
// Bytes >= 0x80 belong to tokens so multi-byte UTF-8 sequences stay intact.
inline bool is_token_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}
}  // namespace detail

/// Lowercases ASCII, splits on runs of non-alphanumeric bytes, and drops
/// stop words and purely numeric tokens.
inline std::vector<std::string> tokenize(std::string_view text,
                                         const StopWordSet& stopwords = default_stopwords()) {
  std::vector<std::string> tokens;
  std::string cur;
  bool has_alpha = false;
  auto flush = [&] {
    if (!cur.empty() && has_alpha && !stopwords.contains(cur)) tokens.push_back(cur);
    cur.clear();
    has_alpha = false;
  };
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (!detail::is_token_byte(c)) {
      flush();
      continue;
    }
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    if (c < '0' || c > '9') has_alpha = true;
    cur.push_back(static_cast<char>(c));
  }
  flush();
  return tokens;
}

// ---------------------------------------------------------------------------
// vocabulary

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;

  Vocabulary() : tokens_{"<pad>", "<unk>"} {}

  /// Builds from an ordered token list whose first two entries are PAD/UNK.
  static Vocabulary from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < 2) throw FormatError("vocabulary must contain PAD and UNK");
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    for (std::size_t i = 2; i < v.tokens_.size(); ++i) {
      if (!v.ids_.emplace(v.tokens_[i], static_cast<std::int32_t>(i)).second) {
        throw FormatError("duplicate vocabulary token '" + v.tokens_[i] + "'");
      }
    }
    return v;
  }

  std::int32_t add(const std::string& token) {
    auto [it, inserted] = ids_.emplace(token, static_cast<std::int32_t>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  std::int32_t id_of(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnk : it->second;
  }

  bool contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

/// Ranks tokens by descending corpus frequency (ties lexicographic), keeps at
/// most max_size of them, and assigns ids from 2 in rank order.
inline Vocabulary build_vocab(std::span<const std::vector<std::string>> corpus,
                              std::optional<std::size_t> max_size = std::nullopt) {
  if (corpus.empty()) throw ArgumentError("build_vocab: empty corpus");
  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& doc : corpus) {
    for (const auto& t : doc) ++freq[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (max_size && ranked.size() > *max_size) ranked.resize(*max_size);
  Vocabulary v;
  for (const auto& [tok, n] : ranked) v.add(tok);
  return v;
}

// ---------------------------------------------------------------------------
// embeddings

/// |V| x k row-major matrix; row 0 (PAD) is all zeros.
struct EmbeddingTable {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  EmbeddingTable() = default;
  EmbeddingTable(std::size_t r, std::size_t k) : rows(r), dim(k), values(r * k, 0.0) {}

  std::span<double> row(std::size_t i) { return {values.data() + i * dim, dim}; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

inline constexpr double kOovInitRange = 0.25;

/// Every non-PAD row drawn i.i.d. uniform(-0.25, 0.25).
inline EmbeddingTable random_embeddings(const Vocabulary& vocab, std::size_t k, std::uint64_t seed) {
  EmbeddingTable table(vocab.size(), k);
  Pcg32 rng(seed);
  for (std::size_t i = 1; i < vocab.size(); ++i) {
    for (double& x : table.row(i)) x = rng.uniform(-kOovInitRange, kOovInitRange);
  }
  return table;
}

/// Loads a plain-text embedding file ("count dim" header, then "token v1 ..
/// v_dim" per line). Vocabulary tokens found in the file take its vector;
/// the rest are drawn uniform(-0.25, 0.25) in id order from `seed`. Only
/// lines whose token is in the vocabulary have their floats parsed.
inline EmbeddingTable load_embeddings(const std::filesystem::path& path, const Vocabulary& vocab,
                                      std::size_t k, std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open embedding file '" + path.string() + "'");
  auto where = [&](std::size_t line) { return path.string() + ":" + std::to_string(line) + ": "; };

  std::string line;
  if (!std::getline(in, line)) throw FormatError(where(1) + "missing header");
  std::size_t dim = 0;
  {
    char* end = nullptr;
    std::strtoull(line.c_str(), &end, 10);  // row count; informational only
    char* end2 = nullptr;
    dim = std::strtoull(end, &end2, 10);
    if (end == line.c_str() || end2 == end) throw FormatError(where(1) + "header must be 'count dim'");
  }
  if (dim != k) {
    throw FormatError(where(1) + "embedding dimension " + std::to_string(dim) +
                      " does not match configured k=" + std::to_string(k));
  }

  EmbeddingTable table(vocab.size(), k);
  std::vector<bool> found(vocab.size(), false);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t start = line.find_first_not_of(" \t");
    std::size_t stop = line.find_first_of(" \t", start);
    std::string token = line.substr(start, stop - start);
    if (!vocab.contains(token)) continue;
    auto id = static_cast<std::size_t>(vocab.id_of(token));
    if (found[id]) continue;  // first occurrence wins
    auto row = table.row(id);
    const char* p = line.c_str() + (stop == std::string::npos ? line.size() : stop);
    for (std::size_t d = 0; d < k; ++d) {
      char* end = nullptr;
      double v = std::strtod(p, &end);
      if (end == p) throw FormatError(where(lineno) + "expected " + std::to_string(k) + " floats");
      if (!std::isfinite(v)) throw FormatError(where(lineno) + "non-finite value");
      row[d] = v;
      p = end;
    }
    while (*p == ' ' || *p == '\t') ++p;
    if (*p != '\0') throw FormatError(where(lineno) + "more than " + std::to_string(k) + " values");
    found[id] = true;
  }

  Pcg32 rng(seed);
  for (std::size_t i = 1; i < vocab.size(); ++i) {
    if (found[i]) continue;
    for (double& x : table.row(i)) x = rng.uniform(-kOovInitRange, kOovInitRange);
  }
  std::fill_n(table.values.begin(), k, 0.0);
  return table;
}

// ---------------------------------------------------------------------------
// encoding

struct EncodedNote {
  std::vector<std::int32_t> ids;  // length n_max, PAD after true_length
  std::size_t true_length = 0;

  bool operator==(const EncodedNote&) const = default;
};

inline constexpr std::size_t kDefaultMaxTokens = 2000;

/// Maps tokens to ids (UNK when absent), keeps the first n_max and right-pads.
inline EncodedNote encode(std::span<const std::string> tokens, const Vocabulary& vocab, std::size_t n_max) {
  EncodedNote out;
  out.true_length = std::min(tokens.size(), n_max);
  out.ids.assign(n_max, Vocabulary::kPad);
  for (std::size_t i = 0; i < out.true_length; ++i) out.ids[i] = vocab.id_of(tokens[i]);
  return out;
}

/// Encoded notes plus binary labels; cached on disk as an "NCNN" file.
struct EncodedDataset {
  std::size_t n_max = 0;
  std::vector<EncodedNote> notes;
  std::vector<std::uint8_t> labels;

  bool operator==(const EncodedDataset&) const = default;
};

inline constexpr std::uint16_t kEncodedDatasetVersion = 1;

/// Layout: "NCNN", u16 version, u64 note count, u32 n_max, u32 true_length per
/// note, u8 label per note, then count * n_max u32 ids. All little-endian.
inline std::string serialize_encoded(const EncodedDataset& ds) {
  if (ds.labels.size() != ds.notes.size()) throw ArgumentError("labels and notes differ in length");
  BinaryWriter w;
  w.bytes("NCNN");
  w.put<std::uint16_t>(kEncodedDatasetVersion);
  w.put<std::uint64_t>(ds.notes.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.n_max));
  for (const auto& n : ds.notes) w.put<std::uint32_t>(static_cast<std::uint32_t>(n.true_length));
  for (auto l : ds.labels) w.put<std::uint8_t>(l);
  for (const auto& n : ds.notes) {
    if (n.ids.size() != ds.n_max) throw ArgumentError("encoded note length differs from n_max");
    for (auto id : n.ids) w.put<std::uint32_t>(static_cast<std::uint32_t>(id));
  }
  return w.data();
}

inline EncodedDataset deserialize_encoded(std::string bytes, const std::string& source) {
  BinaryReader r(std::move(bytes), source);
  if (r.bytes(4) != "NCNN") throw FormatError(source + ": bad magic, expected 'NCNN'");
  if (auto v = r.get<std::uint16_t>(); v != kEncodedDatasetVersion) {
    throw FormatError(source + ": unsupported version " + std::to_string(v));
  }
  EncodedDataset ds;
  auto count = r.get<std::uint64_t>();
  ds.n_max = r.get<std::uint32_t>();
  if (count > r.remaining() / (5 + 4 * static_cast<std::uint64_t>(ds.n_max))) {
    throw FormatError(source + ": note count exceeds file size");
  }
  ds.notes.resize(count);
  ds.labels.resize(count);
  for (auto& n : ds.notes) {
    n.true_length = r.get<std::uint32_t>();
    if (n.true_length > ds.n_max) throw FormatError(source + ": true_length exceeds n_max");
  }
  for (auto& l : ds.labels) l = r.get<std::uint8_t>();
  for (auto& n : ds.notes) {
    n.ids.resize(ds.n_max);
    for (auto& id : n.ids) id = static_cast<std::int32_t>(r.get<std::uint32_t>());
  }
  if (!r.at_end()) throw FormatError(source + ": trailing bytes");
  return ds;
}

}  // namespace readmit

#endif  // READMIT_TEXTPREP_HPP
