// Drive the drift metrics directly: build two feature pools by hand, compute
// per-label LMI distributions, and measure prediction bias and KL divergence
// between an "early" and a "late" snapshot of the same classifier.

#include <iostream>

#include "fewlens/fewlens.hpp"

int main() {
  // Vocabulary: specials plus four content tokens.
  fewlens::Vocabulary vocab;
  vocab.add("good", 10);
  vocab.add("bad", 10);
  vocab.add("plot", 8);
  vocab.add("movie", 12);
  const int good = vocab.id_of("good");
  const int bad = vocab.id_of("bad");
  const int plot = vocab.id_of("plot");
  const int movie = vocab.id_of("movie");

  // Early snapshot: explanations lean on `movie` for both labels.
  fewlens::FeaturePool early(2);
  early.add(movie, 0, 6);
  early.add(movie, 1, 5);
  early.add(bad, 0, 3);
  early.add(good, 1, 2);
  early.add(plot, 0, 1);

  // Late snapshot: sentiment tokens dominate their own label.
  fewlens::FeaturePool late(2);
  late.add(bad, 0, 8);
  late.add(good, 1, 9);
  late.add(movie, 0, 2);
  late.add(movie, 1, 2);
  late.add(plot, 0, 1);

  for (int label = 0; label < 2; ++label) {
    const auto p = fewlens::lmi_distribution(late, vocab, label);
    const auto q = fewlens::lmi_distribution(early, vocab, label);
    std::cout << "label " << label
              << "  KL(late || early) = " << fewlens::kld(p, q) << "\n";
  }

  // Prediction bias: a model that answers label 0 for 90 of 100 balanced
  // examples is heavily skewed; PB contrasts that skew with the data's own.
  const std::vector<std::int64_t> predictions = {90, 10};
  const std::vector<std::int64_t> data = {50, 50};
  const auto bias = fewlens::prediction_bias(predictions, data);
  std::cout << "prediction bias = " << bias.pb << " (majority label "
            << bias.majority << ")\n";

  // Single-token LMI, spelled out.
  std::cout << "lmi(late, `good`, positive) = "
            << fewlens::lmi(late, good, 1) << "\n";
  std::cout << "lmi(late, `bad`, positive)  = "
            << fewlens::lmi(late, bad, 1) << "\n";
  return 0;
}
