#pragma once

// Synthetic 2-class sentiment corpus with a planted spurious token. The token
// "xq" co-occurs with the positive label in 90% of training documents but is
// label-independent (25%) in both test splits, so a model that latches onto it
// is measurably biased out of domain. The out-of-domain split swaps the filler
// vocabulary for unseen words while keeping the sentiment words, mimicking a
// domain shift that preserves the task signal.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fewlens/corpus.hpp"
#include "fewlens/rng.hpp"

namespace fewlens {

struct FixtureOptions {
  std::uint64_t seed = 7;
  int train_docs = 2000;
  int test_docs = 1000;
};

inline constexpr const char* kSpuriousToken = "xq";

namespace detail {

inline const std::vector<std::string>& fixture_pos_words() {
  static const std::vector<std::string> words = {
      "good", "great",    "love",     "wonderful",
      "fine", "charming", "superb", "delightful"};
  return words;
}

inline const std::vector<std::string>& fixture_neg_words() {
  static const std::vector<std::string> words = {
      "bad",  "awful", "boring",  "terrible",
      "poor", "dull",  "tedious", "dreadful"};
  return words;
}

// Filler skeletons are fixed per domain: a token present in every document
// carries exactly zero label correlation in any subsample, so the few-shot
// fits cannot latch onto filler luck and the LMI rankings stay driven by the
// sentiment words and the planted token.
inline const std::vector<std::string>& fixture_in_domain_filler() {
  static const std::vector<std::string> words = {"the", "movie", "was"};
  return words;
}

inline const std::vector<std::string>& fixture_out_domain_filler() {
  static const std::vector<std::string> words = {"that", "restaurant",
                                                 "seemed"};
  return words;
}

// One generated document: raw text plus its label name.
struct FixtureDoc {
  std::string text;
  std::string label;
};

inline FixtureDoc make_fixture_doc(std::uint64_t split_seed, int index,
                                   bool in_domain, double spurious_pos_rate,
                                   double spurious_neg_rate) {
  auto rng = make_rng(split_seed, std::to_string(index));
  const bool positive = (index % 2) == 1;
  const auto& own =
      positive ? fixture_pos_words() : fixture_neg_words();
  const auto& other =
      positive ? fixture_neg_words() : fixture_pos_words();
  const auto& filler =
      in_domain ? fixture_in_domain_filler() : fixture_out_domain_filler();

  std::vector<std::string> tokens;
  const int own_count = 2 + static_cast<int>(uniform_index(rng, 2));
  for (int i = 0; i < own_count; ++i) {
    tokens.push_back(own[uniform_index(rng, own.size())]);
  }
  if (uniform01(rng) < 0.05) {
    tokens.push_back(other[uniform_index(rng, other.size())]);
  }
  for (const auto& word : filler) {
    tokens.push_back(word);
  }
  const double spurious_rate = positive ? spurious_pos_rate : spurious_neg_rate;
  if (uniform01(rng) < spurious_rate) {
    tokens.push_back(kSpuriousToken);
  }
  shuffle_vec(tokens, rng);

  std::string text;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) text += ' ';
    text += tokens[i];
  }
  text += '.';

  FixtureDoc doc;
  doc.text = std::move(text);
  doc.label = positive ? "pos" : "neg";
  return doc;
}

inline void write_fixture_split(const std::filesystem::path& path,
                                std::uint64_t seed, const std::string& split,
                                int count, bool in_domain,
                                double spurious_pos_rate,
                                double spurious_neg_rate) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write fixture file: " + path.string());
  }
  const std::uint64_t split_seed = derive_seed(seed, "fixture:" + split);
  for (int i = 0; i < count; ++i) {
    const auto doc = make_fixture_doc(split_seed, i, in_domain,
                                      spurious_pos_rate, spurious_neg_rate);
    nlohmann::ordered_json rec;
    rec["text"] = doc.text;
    rec["label"] = doc.label;
    out << rec.dump() << '\n';
  }
  if (!out) {
    throw std::runtime_error("write failed: " + path.string());
  }
}

}  // namespace detail

// Writes train.jsonl, test_in.jsonl, test_out.jsonl, and a ready-to-run
// config.json into `dir`. Deterministic given the seed.
inline void write_fixture(const std::filesystem::path& dir,
                          const FixtureOptions& opt = {}) {
  std::filesystem::create_directories(dir);
  detail::write_fixture_split(dir / "train.jsonl", opt.seed, "train",
                              opt.train_docs, /*in_domain=*/true,
                              /*spurious_pos_rate=*/0.9,
                              /*spurious_neg_rate=*/0.05);
  detail::write_fixture_split(dir / "test_in.jsonl", opt.seed, "test_in",
                              opt.test_docs, /*in_domain=*/true,
                              /*spurious_pos_rate=*/0.25,
                              /*spurious_neg_rate=*/0.25);
  detail::write_fixture_split(dir / "test_out.jsonl", opt.seed, "test_out",
                              opt.test_docs, /*in_domain=*/false,
                              /*spurious_pos_rate=*/0.25,
                              /*spurious_neg_rate=*/0.25);

  nlohmann::ordered_json cfg;
  cfg["version"] = 1;
  cfg["model"] = "bow-logreg";
  cfg["datasets"]["train"] = "train.jsonl";
  cfg["datasets"]["test_in"] = "test_in.jsonl";
  cfg["datasets"]["test_out"] = "test_out.jsonl";
  cfg["schema"]["text"] = "text";
  cfg["schema"]["label"] = "label";
  cfg["ratios"] = {0.0, 0.5, 1.0};
  cfg["seeds"] = {1, 3, 4, 6, 10};
  cfg["explanation"]["method"] = "shapley-sampled";
  cfg["explanation"]["samples"] = 100;
  cfg["explanation"]["steps"] = 50;
  cfg["k"] = 3;
  cfg["sample_size"] = 200;
  cfg["U"] = 10;
  cfg["epsilon"] = 1e-9;
  cfg["embed_dim"] = 32;
  cfg["train"]["lr"] = 0.5;
  cfg["train"]["epochs"] = 100;
  cfg["train"]["batch_size"] = 8;
  cfg["train"]["grad_clip"] = 1.0;
  cfg["train"]["max_len"] = 256;
  cfg["out_dir"] = "out";

  std::ofstream out(dir / "config.json");
  if (!out) {
    throw std::runtime_error("cannot write fixture config: " +
                             (dir / "config.json").string());
  }
  out << cfg.dump(2) << '\n';
}

}  // namespace fewlens
