#pragma once

// Shared fixtures for the test suites.

#include <filesystem>
#include <string>
#include <vector>

#include "fewlens/fewlens.hpp"

namespace testutil {

inline fewlens::Vocabulary tiny_vocab(const std::vector<std::string>& words) {
  fewlens::Vocabulary vocab;
  for (const auto& w : words) vocab.add(w, 1);
  return vocab;
}

// bow-logreg, embed_dim 1: e(good)=1, everything else 0, pos head weight 1.
// [CLS] good [SEP] then scores 1/3 for pos and 0 for neg.
inline fewlens::Checkpoint hand_bow() {
  const auto vocab = tiny_vocab({"good"});
  fewlens::Checkpoint ckpt;
  ckpt.kind = fewlens::ModelKind::kBowLogReg;
  ckpt.vocab_size = vocab.size();
  ckpt.embed_dim = 1;
  ckpt.num_classes = 2;
  ckpt.vocab_hash = vocab.hash();
  ckpt.embeddings = fewlens::Matrix(vocab.size(), 1);
  ckpt.embeddings(vocab.id_of("good"), 0) = 1.0;
  ckpt.head = fewlens::Matrix(2, 1);
  ckpt.head(1, 0) = 1.0;
  ckpt.bias = {0.0, 0.0};
  return ckpt;
}

// Fresh scratch directory under the system temp root; caller owns cleanup
// (or leaves it for the OS).
inline std::string scratch_dir(const std::string& tag) {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("fewlens-" + tag + "-" + std::to_string(::getpid()) + "-" +
                    std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace testutil
