#pragma once

// Dataset ingestion: JSON-lines loading, tokenization, vocabulary
// construction, and seeded ratio-r subsampling.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fewlens/rng.hpp"
#include "json.hpp"

namespace fewlens {

using TokenSeq = std::vector<std::string>;
using IdSeq = std::vector<int>;

struct Document {
  std::string id;
  TokenSeq segment_a;
  std::optional<TokenSeq> segment_b;
  int label = -1;
};

struct LabeledCorpus {
  std::vector<Document> documents;
  std::vector<std::string> labels;
  std::string split_name;

  std::size_t size() const { return documents.size(); }
  int num_classes() const { return static_cast<int>(labels.size()); }

  int label_index(const std::string& name) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == name) return static_cast<int>(i);
    }
    return -1;
  }
};

// Special token ids are pinned so encoded sequences are stable regardless of
// corpus content.
enum SpecialToken : int {
  kClsId = 0,
  kSepId = 1,
  kMaskId = 2,
  kUnkId = 3,
  kPadId = 4,
};
inline constexpr int kNumSpecialTokens = 5;
inline constexpr const char* kSpecialTokenNames[kNumSpecialTokens] = {
    "[CLS]", "[SEP]", "[MASK]", "[UNK]", "[PAD]"};

class Vocabulary {
 public:
  Vocabulary() {
    for (int i = 0; i < kNumSpecialTokens; ++i) {
      tokens_.emplace_back(kSpecialTokenNames[i]);
      frequency_.push_back(0);
      id_of_.emplace(kSpecialTokenNames[i], i);
    }
  }

  // Appends a regular token; caller is responsible for ordering.
  void add(const std::string& token, std::int64_t freq) {
    if (id_of_.count(token)) {
      throw std::invalid_argument("duplicate vocabulary token: " + token);
    }
    id_of_.emplace(token, static_cast<int>(tokens_.size()));
    tokens_.push_back(token);
    frequency_.push_back(freq);
  }

  int size() const { return static_cast<int>(tokens_.size()); }

  // Returns the token id, or UNK for out-of-vocabulary tokens.
  int id_of(const std::string& token) const {
    auto it = id_of_.find(token);
    return it == id_of_.end() ? kUnkId : it->second;
  }

  bool contains(const std::string& token) const { return id_of_.count(token) > 0; }

  const std::string& token(int id) const { return tokens_.at(id); }
  std::int64_t frequency(int id) const { return frequency_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static bool is_special(int id) { return id >= 0 && id < kNumSpecialTokens; }

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (int i = 0; i < size(); ++i) {
      h = splitmix64(h ^ fnv1a64(tokens_[i]));
      h = splitmix64(h ^ static_cast<std::uint64_t>(frequency_[i]));
    }
    return h;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<std::int64_t> frequency_;
  std::unordered_map<std::string, int> id_of_;
};

// Lowercases ASCII, splits on whitespace, then peels leading/trailing
// punctuation off each chunk into separate tokens. Interior punctuation
// (don't, e-mail) stays attached.
inline TokenSeq tokenize(const std::string& text) {
  TokenSeq out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  auto is_punct = [](unsigned char c) { return std::ispunct(c) != 0; };
  while (i < n) {
    while (i < n && is_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < n && !is_space(static_cast<unsigned char>(text[i]))) ++i;
    if (i == start) continue;
    std::string chunk = text.substr(start, i - start);
    for (char& c : chunk) {
      c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    std::size_t lo = 0, hi = chunk.size();
    while (lo < hi && is_punct(static_cast<unsigned char>(chunk[lo]))) ++lo;
    while (hi > lo && is_punct(static_cast<unsigned char>(chunk[hi - 1]))) --hi;
    for (std::size_t p = 0; p < lo; ++p) out.push_back(std::string(1, chunk[p]));
    if (hi > lo) out.push_back(chunk.substr(lo, hi - lo));
    for (std::size_t p = hi; p < chunk.size(); ++p) {
      out.push_back(std::string(1, chunk[p]));
    }
  }
  return out;
}

inline constexpr int kDefaultMaxLen = 256;

// [CLS] a... [SEP] (b... [SEP]) with UNK substitution, truncated to max_len
// while keeping the final [SEP].
inline IdSeq encode(const Document& doc, const Vocabulary& vocab,
                    int max_len = kDefaultMaxLen) {
  IdSeq ids;
  ids.reserve(doc.segment_a.size() +
              (doc.segment_b ? doc.segment_b->size() : 0) + 3);
  ids.push_back(kClsId);
  for (const auto& t : doc.segment_a) ids.push_back(vocab.id_of(t));
  ids.push_back(kSepId);
  if (doc.segment_b) {
    for (const auto& t : *doc.segment_b) ids.push_back(vocab.id_of(t));
    ids.push_back(kSepId);
  }
  if (max_len > 0 && static_cast<int>(ids.size()) > max_len) {
    ids.resize(max_len);
    ids.back() = kSepId;
  }
  return ids;
}

// Ascending frequency, lexicographic within ties; specials keep ids 0..4.
inline Vocabulary build_vocabulary(const LabeledCorpus& corpus,
                                   std::int64_t min_freq = 1) {
  if (corpus.documents.empty()) {
    throw std::invalid_argument("build_vocabulary: corpus is empty");
  }
  std::map<std::string, std::int64_t> counts;
  for (const auto& doc : corpus.documents) {
    for (const auto& t : doc.segment_a) ++counts[t];
    if (doc.segment_b) {
      for (const auto& t : *doc.segment_b) ++counts[t];
    }
  }
  std::vector<std::pair<std::string, std::int64_t>> kept;
  for (const auto& [tok, cnt] : counts) {
    if (cnt >= min_freq) kept.emplace_back(tok, cnt);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second < b.second;
    return a.first < b.first;
  });
  Vocabulary vocab;
  for (const auto& [tok, cnt] : kept) vocab.add(tok, cnt);
  return vocab;
}

// floor(n * r / 100) computed in exact integer arithmetic. r is a percent in
// [0, 1] with at most six decimal places.
inline std::size_t subsample_size(std::size_t n, double ratio_percent) {
  if (ratio_percent < 0.0 || ratio_percent > 1.0) {
    throw std::invalid_argument("subsample: ratio_percent must be in [0, 1]");
  }
  const std::int64_t millionths =
      static_cast<std::int64_t>(ratio_percent * 1e6 + 0.5);
  return static_cast<std::size_t>(
      (static_cast<std::int64_t>(n) * millionths) / 100000000ll);
}

// Uniform sample without replacement, unstratified; output keeps corpus order.
inline LabeledCorpus subsample(const LabeledCorpus& corpus, double ratio_percent,
                               std::uint64_t seed) {
  const std::size_t k = subsample_size(corpus.size(), ratio_percent);
  auto rng = make_rng(seed, "subsample");
  const auto picks = sample_indices(rng, corpus.size(), k);
  LabeledCorpus out;
  out.labels = corpus.labels;
  out.split_name = corpus.split_name;
  out.documents.reserve(picks.size());
  for (std::size_t idx : picks) out.documents.push_back(corpus.documents[idx]);
  return out;
}

inline std::vector<std::int64_t> label_counts(const LabeledCorpus& corpus) {
  std::vector<std::int64_t> counts(corpus.labels.size(), 0);
  for (const auto& doc : corpus.documents) {
    counts.at(doc.label) += 1;
  }
  return counts;
}

struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, std::size_t line)
      : std::runtime_error(msg + " (line " + std::to_string(line) + ")"),
        line_number(line) {}
  std::size_t line_number;
};

// Field-name mapping for JSON-lines records. Exactly one of `text` or the
// `text_a`+`text_b` pair must be set. When `labels` is given, records with
// labels outside it are rejected; otherwise label order is file-discovery
// order.
struct SchemaMapping {
  std::optional<std::string> text;
  std::optional<std::string> text_a;
  std::optional<std::string> text_b;
  std::string label = "label";
  std::optional<std::string> id;
  std::optional<std::vector<std::string>> labels;

  bool pair() const { return text_a.has_value(); }

  void validate() const {
    const bool single = text.has_value();
    const bool both = text_a.has_value() && text_b.has_value();
    if (single == both || (text_a.has_value() != text_b.has_value())) {
      throw std::invalid_argument(
          "schema: map either `text` or both `text_a` and `text_b`");
    }
  }
};

namespace detail {

inline std::string label_string(const nlohmann::json& v, std::size_t line) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  throw ParseError("label field must be a string or integer", line);
}

inline std::string text_field(const nlohmann::json& rec, const std::string& key,
                              std::size_t line) {
  if (!rec.contains(key)) {
    throw ParseError("missing field `" + key + "`", line);
  }
  if (!rec.at(key).is_string()) {
    throw ParseError("field `" + key + "` must be a string", line);
  }
  return rec.at(key).get<std::string>();
}

}  // namespace detail

inline LabeledCorpus load_jsonl(std::istream& in, const SchemaMapping& schema,
                                const std::string& split_name) {
  schema.validate();
  LabeledCorpus corpus;
  corpus.split_name = split_name;
  const bool fixed_labels = schema.labels.has_value();
  if (fixed_labels) corpus.labels = *schema.labels;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!rec.is_object()) {
      throw ParseError("record is not a JSON object", line_no);
    }
    if (!rec.contains(schema.label)) {
      throw ParseError("missing label field `" + schema.label + "`", line_no);
    }
    const std::string label_name = detail::label_string(rec.at(schema.label), line_no);
    int label = corpus.label_index(label_name);
    if (label < 0) {
      if (fixed_labels) {
        std::string allowed;
        for (const auto& l : corpus.labels) {
          if (!allowed.empty()) allowed += ", ";
          allowed += l;
        }
        throw ParseError(
            "unknown label `" + label_name + "` (allowed: " + allowed + ")",
            line_no);
      }
      label = static_cast<int>(corpus.labels.size());
      corpus.labels.push_back(label_name);
    }

    Document doc;
    doc.label = label;
    if (schema.id && rec.contains(*schema.id)) {
      doc.id = detail::label_string(rec.at(*schema.id), line_no);
    } else {
      doc.id = split_name + ":" + std::to_string(line_no);
    }
    if (schema.pair()) {
      doc.segment_a = tokenize(detail::text_field(rec, *schema.text_a, line_no));
      doc.segment_b = tokenize(detail::text_field(rec, *schema.text_b, line_no));
    } else {
      doc.segment_a = tokenize(detail::text_field(rec, *schema.text, line_no));
    }
    if (doc.segment_a.empty()) {
      throw ParseError("document text tokenizes to nothing", line_no);
    }
    corpus.documents.push_back(std::move(doc));
  }
  return corpus;
}

inline LabeledCorpus load_jsonl(const std::string& path,
                                const SchemaMapping& schema) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open dataset file: " + path);
  }
  std::string stem = path;
  if (auto pos = stem.find_last_of("/\\"); pos != std::string::npos) {
    stem = stem.substr(pos + 1);
  }
  if (auto pos = stem.rfind('.'); pos != std::string::npos) {
    stem = stem.substr(0, pos);
  }
  return load_jsonl(in, schema, stem);
}

inline nlohmann::ordered_json vocabulary_to_json(const Vocabulary& vocab) {
  nlohmann::ordered_json j;
  j["tokens"] = vocab.tokens();
  std::vector<std::int64_t> freqs(vocab.size());
  for (int i = 0; i < vocab.size(); ++i) freqs[i] = vocab.frequency(i);
  j["frequencies"] = freqs;
  return j;
}

inline Vocabulary vocabulary_from_json(const nlohmann::json& j) {
  const auto tokens = j.at("tokens").get<std::vector<std::string>>();
  const auto freqs = j.at("frequencies").get<std::vector<std::int64_t>>();
  if (tokens.size() != freqs.size() ||
      tokens.size() < static_cast<std::size_t>(kNumSpecialTokens)) {
    throw std::runtime_error("vocabulary file is inconsistent");
  }
  for (int i = 0; i < kNumSpecialTokens; ++i) {
    if (tokens[i] != kSpecialTokenNames[i]) {
      throw std::runtime_error("vocabulary file is missing special tokens");
    }
  }
  Vocabulary vocab;
  for (std::size_t i = kNumSpecialTokens; i < tokens.size(); ++i) {
    vocab.add(tokens[i], freqs[i]);
  }
  return vocab;
}

inline void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
  out << vocabulary_to_json(vocab).dump(2) << '\n';
}

inline Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary: " + path);
  nlohmann::json j;
  in >> j;
  return vocabulary_from_json(j);
}

}  // namespace fewlens
