// Train a small bag-of-words classifier on the synthetic corpus, explain one
// test document with sampled Shapley, and print the ranked tokens.
//
// Usage: sample-train-and-explain [work-dir]   (default: ./fewlens-sample)

#include <filesystem>
#include <iostream>

#include "fewlens/fewlens.hpp"

int main(int argc, char** argv) {
  const std::string dir = argc > 1 ? argv[1] : "fewlens-sample";
  fewlens::FixtureOptions fixture;
  fixture.train_docs = 400;
  fixture.test_docs = 100;
  fewlens::write_fixture(dir, fixture);

  fewlens::SchemaMapping schema;
  schema.text = "text";
  const auto train_corpus =
      fewlens::load_jsonl(dir + "/train.jsonl", schema);
  const auto test_corpus =
      fewlens::load_jsonl(dir + "/test_in.jsonl", schema);
  const auto vocab = fewlens::build_vocabulary(train_corpus);

  const std::uint64_t seed = 42;
  const auto init = fewlens::init_model(fewlens::ModelKind::kBowLogReg, vocab,
                                        train_corpus.num_classes(), 32,
                                        fewlens::derive_seed(seed, "init"));
  fewlens::TrainOptions opts;
  const auto ckpt = fewlens::train(init, train_corpus, vocab, opts,
                                   fewlens::derive_seed(seed, "train"));
  fewlens::BuiltinPredictor predictor(ckpt);

  const auto eval = fewlens::evaluate(predictor, test_corpus, vocab);
  std::cout << "in-domain accuracy after training: " << eval.accuracy << "\n";

  const auto& doc = test_corpus.documents.front();
  const auto ids = fewlens::encode(doc, vocab);
  const auto probs = predictor.predict_proba(ids);
  int predicted = 0;
  for (int c = 1; c < predictor.num_classes(); ++c) {
    if (probs[c] > probs[predicted]) predicted = c;
  }

  const auto attr = fewlens::sampling_shapley(
      predictor, doc.id, ids, vocab, predicted, /*num_samples=*/500,
      fewlens::derive_seed(seed, doc.id));

  std::cout << "document " << doc.id << " predicted `"
            << test_corpus.labels[static_cast<std::size_t>(predicted)]
            << "` with p=" << attr.predicted_prob << "\n";
  std::cout << "tokens by attribution:\n";
  for (std::size_t rank : fewlens::ranked_order(attr)) {
    std::cout << "  " << attr.tokens[rank] << "  " << attr.scores[rank] << "\n";
  }
  return 0;
}
