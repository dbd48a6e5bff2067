#include <cmath>
#include <sstream>

#include "catch2/catch_amalgamated.hpp"
#include "helpers.hpp"

using namespace fewlens;
using testutil::hand_bow;
using testutil::tiny_vocab;

namespace {

// Probability-only predictor: no gradients, no attention.
class ProbaOnly : public Predictor {
 public:
  int num_classes() const override { return 2; }
  std::vector<double> predict_proba(std::span<const int>) const override {
    return {0.5, 0.5};
  }
};

double sigmoid_of_margin(double pos_logit) {
  // softmax over {0, pos_logit} evaluated at the pos coordinate
  return 1.0 / (1.0 + std::exp(-pos_logit));
}

}  // namespace

TEST_CASE("attributable positions skip padding but keep CLS and SEP") {
  const auto vocab = tiny_vocab({"good"});
  const IdSeq ids = {kClsId, 5, kSepId, kPadId, kPadId};
  BuiltinPredictor predictor(hand_bow());
  const auto attr = occlusion(predictor, "d", ids, vocab, 1);
  REQUIRE(attr.positions == std::vector<int>{0, 1, 2});
  CHECK(attr.tokens == std::vector<std::string>{"[CLS]", "good", "[SEP]"});
  CHECK(attr.token_ids == std::vector<int>{kClsId, 5, kSepId});
  CHECK(attr.doc_id == "d");
}

TEST_CASE("ranked_order breaks score ties by token id, then position") {
  Attribution attr;
  attr.positions = {0, 1, 2, 3};
  attr.tokens = {"b", "a", "c", "a"};
  attr.token_ids = {7, 5, 9, 5};
  attr.scores = {0.5, 0.5, 0.2, 0.5};
  const auto order = ranked_order(attr);
  // ties at 0.5: id 5 before id 7; within id 5, position 1 before 3
  CHECK(order == std::vector<std::size_t>{1, 3, 0, 2});

  CHECK(top_k_features(attr, 2) == std::vector<std::string>{"a", "a"});
  CHECK(top_k_features(attr, 99).size() == 4);
  CHECK_THROWS_AS(top_k_features(attr, 0), std::invalid_argument);
}

TEST_CASE("occlusion measures the probability drop of masking each position") {
  const auto vocab = tiny_vocab({"good"});
  BuiltinPredictor predictor(hand_bow());
  const IdSeq ids = {kClsId, 5, kSepId};
  const double p_full = sigmoid_of_margin(1.0 / 3.0);

  const auto attr = occlusion(predictor, "d", ids, vocab, 1);
  CHECK(attr.method == "occlusion");
  CHECK(attr.explained_class == 1);
  CHECK_THAT(attr.predicted_prob, Catch::Matchers::WithinAbs(p_full, 1e-15));
  // masking [CLS] or [SEP] swaps a zero embedding for a zero embedding
  CHECK_THAT(attr.scores[0], Catch::Matchers::WithinAbs(0.0, 1e-15));
  CHECK_THAT(attr.scores[2], Catch::Matchers::WithinAbs(0.0, 1e-15));
  // masking "good" collapses the input to the all-zero pooled vector
  CHECK_THAT(attr.scores[1],
             Catch::Matchers::WithinAbs(p_full - 0.5, 1e-15));
}

TEST_CASE("exact Shapley on the hand model: dummies get zero, good gets the gap") {
  const auto vocab = tiny_vocab({"good"});
  BuiltinPredictor predictor(hand_bow());
  const IdSeq ids = {kClsId, 5, kSepId};
  const auto attr = exact_shapley(predictor, "d", ids, vocab, 1);
  CHECK(attr.method == "shapley-exact");
  const double p_full = sigmoid_of_margin(1.0 / 3.0);
  // [CLS]/[SEP] embeddings equal the [MASK] embedding -> dummy players
  CHECK_THAT(attr.scores[0], Catch::Matchers::WithinAbs(0.0, 1e-12));
  CHECK_THAT(attr.scores[2], Catch::Matchers::WithinAbs(0.0, 1e-12));
  CHECK_THAT(attr.scores[1],
             Catch::Matchers::WithinAbs(p_full - 0.5, 1e-12));
}

TEST_CASE("Shapley axioms hold on random models") {
  const auto vocab = tiny_vocab({"p", "q", "r", "s", "t"});
  for (std::uint64_t seed : {3ull, 4ull, 5ull}) {
    for (ModelKind kind : {ModelKind::kBowLogReg, ModelKind::kAttnPool}) {
      auto ckpt = init_model(kind, vocab, 2, 4, seed);
      // plant a dummy: token 9 ("t") embeds exactly like [MASK]
      for (int c = 0; c < ckpt.embed_dim; ++c) {
        ckpt.embeddings(9, c) = ckpt.embeddings(kMaskId, c);
      }
      BuiltinPredictor predictor(ckpt);
      // token 6 appears twice -> symmetric pair; token 9 is the dummy
      const IdSeq ids = {kClsId, 6, 7, 6, 9, kSepId};
      const auto attr = exact_shapley(predictor, "d", ids, vocab, 1);

      std::vector<int> full(ids.begin(), ids.end());
      std::vector<int> empty = full;
      for (int pos : attr.positions) empty[pos] = kMaskId;
      const double gap = predictor.predict_proba(full)[1] -
                         predictor.predict_proba(empty)[1];
      double total = 0.0;
      for (double s : attr.scores) total += s;
      CHECK_THAT(total, Catch::Matchers::WithinAbs(gap, 1e-9));     // efficiency
      CHECK_THAT(attr.scores[1],
                 Catch::Matchers::WithinAbs(attr.scores[3], 1e-9)); // symmetry
      CHECK_THAT(attr.scores[4], Catch::Matchers::WithinAbs(0.0, 1e-12)); // dummy
    }
  }
}

TEST_CASE("sampled Shapley telescopes to the full-empty gap for any m") {
  const auto vocab = tiny_vocab({"p", "q", "r", "s"});
  const auto ckpt = init_model(ModelKind::kAttnPool, vocab, 3, 4, 21);
  BuiltinPredictor predictor(ckpt);
  const IdSeq ids = {kClsId, 5, 6, 7, 8, kSepId};
  const auto attr = sampling_shapley(predictor, "d", ids, vocab, 2, 7, 123);
  CHECK(attr.method == "shapley-sampled");

  std::vector<int> empty(ids.begin(), ids.end());
  for (int pos : attr.positions) empty[pos] = kMaskId;
  const double gap = predictor.predict_proba(ids)[2] -
                     predictor.predict_proba(empty)[2];
  double total = 0.0;
  for (double s : attr.scores) total += s;
  CHECK_THAT(total, Catch::Matchers::WithinAbs(gap, 1e-12));
}

TEST_CASE("sampled Shapley is seed-deterministic") {
  const auto vocab = tiny_vocab({"p", "q", "r"});
  const auto ckpt = init_model(ModelKind::kBowLogReg, vocab, 2, 4, 8);
  BuiltinPredictor predictor(ckpt);
  const IdSeq ids = {kClsId, 5, 6, 7, kSepId};
  const auto a = sampling_shapley(predictor, "d", ids, vocab, 1, 10, 42);
  const auto b = sampling_shapley(predictor, "d", ids, vocab, 1, 10, 42);
  const auto c = sampling_shapley(predictor, "d", ids, vocab, 1, 10, 43);
  CHECK(a.scores == b.scores);
  CHECK(a.scores != c.scores);
  CHECK_THROWS_AS(sampling_shapley(predictor, "d", ids, vocab, 1, 0, 1),
                  std::invalid_argument);
}

TEST_CASE("sampled Shapley converges to exact within three standard errors") {
  const auto vocab = tiny_vocab({"p", "q", "r", "s"});
  const auto ckpt = init_model(ModelKind::kAttnPool, vocab, 2, 4, 31);
  BuiltinPredictor predictor(ckpt);
  const IdSeq ids = {kClsId, 5, 6, 7, 8, kSepId};
  const auto exact = exact_shapley(predictor, "d", ids, vocab, 1);
  const auto detail =
      sampling_shapley_detailed(predictor, "d", ids, vocab, 1, 500, 7);
  REQUIRE(detail.attribution.scores.size() == exact.scores.size());
  for (std::size_t i = 0; i < exact.scores.size(); ++i) {
    const double err = std::abs(detail.attribution.scores[i] - exact.scores[i]);
    CHECK(err <= 3.0 * detail.standard_errors[i] + 1e-9);
  }
  CHECK_THROWS_AS(
      sampling_shapley_detailed(predictor, "d", ids, vocab, 1, 1, 7),
      std::invalid_argument);
}

TEST_CASE("sampled Shapley error shrinks as m grows") {
  const auto vocab = tiny_vocab({"p", "q", "r", "s", "u"});
  const auto ckpt = init_model(ModelKind::kBowLogReg, vocab, 2, 6, 77);
  BuiltinPredictor predictor(ckpt);
  const IdSeq ids = {kClsId, 5, 6, 7, 8, 9, kSepId};
  const auto exact = exact_shapley(predictor, "d", ids, vocab, 1);
  auto max_err = [&](int m) {
    const auto attr = sampling_shapley(predictor, "d", ids, vocab, 1, m, 555);
    double worst = 0.0;
    for (std::size_t i = 0; i < attr.scores.size(); ++i) {
      worst = std::max(worst, std::abs(attr.scores[i] - exact.scores[i]));
    }
    return worst;
  };
  const double e10 = max_err(10);
  const double e1000 = max_err(1000);
  CHECK(e1000 < e10);
  CHECK(e1000 <= 0.02);
}

TEST_CASE("exact Shapley refuses more than 12 attributable positions") {
  const auto vocab = tiny_vocab({"p"});
  BuiltinPredictor predictor(
      init_model(ModelKind::kBowLogReg, vocab, 2, 2, 1));
  IdSeq ids(13, 5);
  CHECK_THROWS_WITH(exact_shapley(predictor, "d", ids, vocab, 1),
                    Catch::Matchers::ContainsSubstring("cost guard"));
}

TEST_CASE("integrated gradients are exact for the linear bow score") {
  const auto vocab = tiny_vocab({"good"});
  BuiltinPredictor predictor(hand_bow());
  const IdSeq ids = {kClsId, 5, kSepId};
  for (int steps : {1, 7, 100}) {
    const auto attr = integrated_gradients(predictor, "d", ids, vocab, 1, steps);
    CHECK(attr.method == "integrated-gradients");
    // score_i = e_i . W_pos / n; only "good" has a nonzero embedding
    CHECK_THAT(attr.scores[0], Catch::Matchers::WithinAbs(0.0, 1e-15));
    CHECK_THAT(attr.scores[1],
               Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-15));
    CHECK_THAT(attr.scores[2], Catch::Matchers::WithinAbs(0.0, 1e-15));
    // completeness: sum equals F(x) - F(zero baseline)
    double total = 0.0;
    for (double s : attr.scores) total += s;
    CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
  }
}

TEST_CASE("integrated gradients satisfy completeness on attn-pool") {
  const auto vocab = tiny_vocab({"p", "q", "r", "s"});
  const auto ckpt = init_model(ModelKind::kAttnPool, vocab, 2, 5, 13);
  BuiltinPredictor predictor(ckpt);
  const IdSeq ids = {kClsId, 5, 6, 7, 8, kSepId};
  const auto emb = predictor.token_embeddings(ids);
  Matrix zeros(emb.rows, emb.cols);
  const double target =
      predictor.class_score(emb, 1) - predictor.class_score(zeros, 1);

  auto completeness_gap = [&](int steps) {
    const auto attr = integrated_gradients(predictor, "d", ids, vocab, 1, steps);
    double total = 0.0;
    for (double s : attr.scores) total += s;
    return std::abs(total - target);
  };
  CHECK(completeness_gap(100) < 1e-3);
  CHECK(completeness_gap(1000) < 1e-4);
}

TEST_CASE("integrated gradients validate their inputs") {
  const auto vocab = tiny_vocab({"good"});
  BuiltinPredictor predictor(hand_bow());
  const IdSeq ids = {kClsId, 5, kSepId};
  CHECK_THROWS_AS(integrated_gradients(predictor, "d", ids, vocab, 1, 0),
                  std::invalid_argument);
  ProbaOnly proba_only;
  CHECK_THROWS_AS(integrated_gradients(proba_only, "d", ids, vocab, 1, 10),
                  CapabilityError);
  CHECK_THROWS_AS(integrated_gradients(predictor, "d", ids, vocab, 7, 10),
                  std::invalid_argument);  // class out of range
}

TEST_CASE("attention explanations surface the pooling weights") {
  const auto vocab = tiny_vocab({"p", "q", "r"});
  const auto ckpt = init_model(ModelKind::kAttnPool, vocab, 2, 4, 3);
  BuiltinPredictor predictor(ckpt);
  const IdSeq ids = {kClsId, 5, 6, 7, kSepId};
  const auto attr = attention_explanation(predictor, "d", ids, vocab);
  CHECK(attr.method == "attention");

  const auto probs = predictor.predict_proba(ids);
  const int argmax = probs[1] > probs[0] ? 1 : 0;
  CHECK(attr.explained_class == argmax);
  CHECK(attr.predicted_prob == probs[argmax]);

  const auto weights = predictor.attention_weights(ids);
  for (std::size_t j = 0; j < attr.positions.size(); ++j) {
    CHECK(attr.scores[j] ==
          weights[static_cast<std::size_t>(attr.positions[j])]);
  }

  BuiltinPredictor bow(hand_bow());
  CHECK_THROWS_AS(attention_explanation(bow, "d", ids, vocab),
                  CapabilityError);
}

TEST_CASE("random attributions are uniform noise, deterministic per seed") {
  const auto vocab = tiny_vocab({"p", "q"});
  const IdSeq ids = {kClsId, 5, 6, kSepId};
  const auto a = random_attribution("d", ids, vocab, 9, 1, 0.5);
  const auto b = random_attribution("d", ids, vocab, 9, 1, 0.5);
  const auto c = random_attribution("d", ids, vocab, 10, 1, 0.5);
  CHECK(a.method == "random");
  CHECK(a.explained_class == 1);
  CHECK(a.predicted_prob == 0.5);
  CHECK(a.scores == b.scores);
  CHECK(a.scores != c.scores);
  for (double s : a.scores) {
    CHECK(s >= 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("attribution JSONL round-trips every field") {
  const auto vocab = tiny_vocab({"good"});
  BuiltinPredictor predictor(hand_bow());
  const IdSeq ids = {kClsId, 5, kSepId};
  auto attr = occlusion(predictor, "test_in:17", ids, vocab, 1);
  attr.scores[0] = -0.125;  // exercise negatives

  std::ostringstream out;
  append_attribution_jsonl(out, attr);
  const std::string line = out.str();
  REQUIRE(line.back() == '\n');
  CHECK_THAT(line, Catch::Matchers::ContainsSubstring("\"doc_id\":\"test_in:17\""));
  CHECK_THAT(line, Catch::Matchers::ContainsSubstring("\"method\":\"occlusion\""));
  CHECK_THAT(line, Catch::Matchers::ContainsSubstring("\"class\":1"));
  CHECK_THAT(line, Catch::Matchers::ContainsSubstring("\"tokens\":"));
  CHECK_THAT(line, Catch::Matchers::ContainsSubstring("\"scores\":"));

  const auto back =
      parse_attribution_jsonl(line.substr(0, line.size() - 1), vocab);
  CHECK(back.doc_id == attr.doc_id);
  CHECK(back.method == attr.method);
  CHECK(back.explained_class == attr.explained_class);
  CHECK(back.predicted_prob == attr.predicted_prob);  // 17 digits round-trip
  CHECK(back.tokens == attr.tokens);
  CHECK(back.token_ids == attr.token_ids);
  CHECK(back.scores == attr.scores);
  CHECK(back.positions == std::vector<int>{0, 1, 2});
}

TEST_CASE("attribution JSONL parsing rejects inconsistent records") {
  const auto vocab = tiny_vocab({"good"});
  CHECK_THROWS_AS(parse_attribution_jsonl("not json", vocab),
                  std::runtime_error);
  CHECK_THROWS_WITH(
      parse_attribution_jsonl(
          R"({"doc_id":"d","method":"random","class":0,"prob":0.5,)"
          R"("tokens":["a","b"],"scores":[0.1]})",
          vocab),
      Catch::Matchers::ContainsSubstring("length mismatch"));
}
