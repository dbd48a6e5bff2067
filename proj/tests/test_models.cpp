#include <cmath>
#include <sstream>

#include "catch2/catch_amalgamated.hpp"
#include "fewlens/fewlens.hpp"

using namespace fewlens;

namespace {

Vocabulary tiny_vocab(const std::vector<std::string>& words) {
  Vocabulary vocab;
  for (const auto& w : words) vocab.add(w, 1);
  return vocab;
}

// bow-logreg, embed_dim 1: e(good)=1, everything else 0, pos head weight 1.
Checkpoint hand_bow() {
  Vocabulary vocab = tiny_vocab({"good"});
  Checkpoint ckpt;
  ckpt.kind = ModelKind::kBowLogReg;
  ckpt.vocab_size = vocab.size();
  ckpt.embed_dim = 1;
  ckpt.num_classes = 2;
  ckpt.vocab_hash = vocab.hash();
  ckpt.embeddings = Matrix(vocab.size(), 1);
  ckpt.embeddings(vocab.id_of("good"), 0) = 1.0;
  ckpt.head = Matrix(2, 1);
  ckpt.head(1, 0) = 1.0;  // pos
  ckpt.bias = {0.0, 0.0};
  return ckpt;
}

LabeledCorpus separable_corpus() {
  LabeledCorpus corpus;
  corpus.labels = {"neg", "pos"};
  for (int i = 0; i < 8; ++i) {
    Document d;
    d.id = "sep:" + std::to_string(i);
    d.segment_a = {i % 2 == 0 ? "bad" : "good"};
    d.label = i % 2;
    corpus.documents.push_back(d);
  }
  return corpus;
}

}  // namespace

TEST_CASE("model kind names round-trip") {
  CHECK(model_kind_name(ModelKind::kBowLogReg) == std::string("bow-logreg"));
  CHECK(model_kind_name(ModelKind::kAttnPool) == std::string("attn-pool"));
  CHECK(model_kind_name(ModelKind::kExternal) == std::string("external"));
  CHECK(model_kind_from_name("bow-logreg") == ModelKind::kBowLogReg);
  CHECK(model_kind_from_name("attn-pool") == ModelKind::kAttnPool);
  CHECK_THROWS_AS(model_kind_from_name("transformer"), std::invalid_argument);
}

TEST_CASE("init_model is deterministic and records its provenance") {
  const auto vocab = tiny_vocab({"a", "b", "c"});
  const auto m1 = init_model(ModelKind::kAttnPool, vocab, 3, 4, 11);
  const auto m2 = init_model(ModelKind::kAttnPool, vocab, 3, 4, 11);
  const auto m3 = init_model(ModelKind::kAttnPool, vocab, 3, 4, 12);

  CHECK(m1.embeddings.data == m2.embeddings.data);
  CHECK(m1.attn_proj.data == m2.attn_proj.data);
  CHECK(m1.attn_query == m2.attn_query);
  CHECK(m1.head.data == m2.head.data);
  CHECK(m1.bias == m2.bias);
  CHECK(m1.embeddings.data != m3.embeddings.data);

  CHECK(m1.kind == ModelKind::kAttnPool);
  CHECK(m1.vocab_size == vocab.size());
  CHECK(m1.embed_dim == 4);
  CHECK(m1.num_classes == 3);
  CHECK(m1.ratio == 0.0);
  CHECK(m1.seed == 11);
  CHECK(m1.vocab_hash == vocab.hash());
  for (double v : m1.embeddings.data) {
    CHECK(v >= -0.1);
    CHECK(v < 0.1);
  }

  const auto bow = init_model(ModelKind::kBowLogReg, vocab, 2, 4, 1);
  CHECK(bow.attn_proj.data.empty());
  CHECK(bow.attn_query.empty());

  CHECK_THROWS_AS(init_model(ModelKind::kExternal, vocab, 2, 4, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(init_model(ModelKind::kBowLogReg, vocab, 1, 4, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(init_model(ModelKind::kBowLogReg, vocab, 2, 0, 1),
                  std::invalid_argument);
}

TEST_CASE("bow hand case: [CLS] good [SEP] scores 1/3 for pos") {
  const auto ckpt = hand_bow();
  const IdSeq ids = {kClsId, 5, kSepId};
  const auto emb = token_embeddings(ckpt, ids);
  CHECK(class_score(ckpt, emb, 1) == 1.0 / 3.0);
  CHECK(class_score(ckpt, emb, 0) == 0.0);

  const auto probs = predict_proba(ckpt, ids);
  REQUIRE(probs.size() == 2);
  const double z = std::exp(0.0 - 1.0 / 3.0);  // softmax shifts by the max
  CHECK_THAT(probs[1], Catch::Matchers::WithinAbs(1.0 / (1.0 + z), 1e-15));
  CHECK_THAT(probs[0] + probs[1], Catch::Matchers::WithinAbs(1.0, 1e-15));
}

TEST_CASE("bow gradients are head_cls / n at every position") {
  const auto ckpt = hand_bow();
  const IdSeq ids = {kClsId, 5, kSepId};
  const auto emb = token_embeddings(ckpt, ids);
  const auto grad = class_score_gradients(ckpt, emb, 1);
  REQUIRE(grad.rows == 3);
  REQUIRE(grad.cols == 1);
  for (std::size_t i = 0; i < 3; ++i) CHECK(grad(i, 0) == 1.0 / 3.0);
  const auto grad0 = class_score_gradients(ckpt, emb, 0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(grad0(i, 0) == 0.0);
}

TEST_CASE("attn-pool analytic gradients match central finite differences") {
  const auto vocab = tiny_vocab({"u", "v", "w", "x", "y"});
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    const auto ckpt = init_model(ModelKind::kAttnPool, vocab, 3, 5, seed);
    const IdSeq ids = {kClsId, 5, 7, 9, kSepId};
    const auto emb = token_embeddings(ckpt, ids);
    for (int cls = 0; cls < 3; ++cls) {
      const auto grad = class_score_gradients(ckpt, emb, cls);
      const double h = 1e-4;
      for (std::size_t i = 0; i < emb.rows; ++i) {
        for (std::size_t c = 0; c < emb.cols; ++c) {
          Matrix plus = emb, minus = emb;
          plus(i, c) += h;
          minus(i, c) -= h;
          const double fd =
              (class_score(ckpt, plus, cls) - class_score(ckpt, minus, cls)) /
              (2.0 * h);
          CHECK_THAT(grad(i, c),
                     Catch::Matchers::WithinAbs(fd, 1e-4 * std::max(1e-4, std::abs(fd))));
        }
      }
    }
  }
}

TEST_CASE("probabilities form a simplex and attention weights sum to one") {
  const auto vocab = tiny_vocab({"a", "b", "c", "d"});
  const auto ckpt = init_model(ModelKind::kAttnPool, vocab, 4, 6, 77);
  const IdSeq ids = {kClsId, 5, 6, 7, 8, kSepId};
  const auto probs = predict_proba(ckpt, ids);
  double sum = 0.0;
  for (double p : probs) {
    CHECK(p >= 0.0);
    sum += p;
  }
  CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));

  const auto weights = attention_weights(ckpt, ids);
  REQUIRE(weights.size() == ids.size());
  double wsum = 0.0;
  for (double w : weights) {
    CHECK(w > 0.0);
    wsum += w;
  }
  CHECK_THAT(wsum, Catch::Matchers::WithinAbs(1.0, 1e-12));

  const auto bow = init_model(ModelKind::kBowLogReg, vocab, 2, 6, 77);
  CHECK_THROWS_AS(attention_weights(bow, ids), CapabilityError);
}

TEST_CASE("input validation rejects empty and out-of-range ids") {
  const auto ckpt = hand_bow();
  CHECK_THROWS_WITH(predict_proba(ckpt, IdSeq{}),
                    Catch::Matchers::ContainsSubstring("empty id sequence"));
  CHECK_THROWS_AS(predict_proba(ckpt, IdSeq{0, 99}), std::invalid_argument);
  CHECK_THROWS_AS(predict_proba(ckpt, IdSeq{-1}), std::invalid_argument);
}

TEST_CASE("BuiltinPredictor exposes capabilities and ties break to the lowest class") {
  BuiltinPredictor bow(hand_bow());
  CHECK(bow.num_classes() == 2);
  CHECK(bow.has_gradient());
  CHECK_FALSE(bow.has_attention());

  // zeroed model: logits identical for every class -> lowest id wins
  Checkpoint flat = hand_bow();
  flat.embeddings = Matrix(flat.vocab_size, 1);
  flat.head = Matrix(2, 1);
  BuiltinPredictor tied(flat);
  CHECK(tied.predicted_class(IdSeq{kClsId, 5, kSepId}) == 0);

  Checkpoint ext;
  ext.kind = ModelKind::kExternal;
  CHECK_THROWS_AS(BuiltinPredictor(ext), std::invalid_argument);
}

TEST_CASE("train with lr=0 is a no-op on the weights") {
  const auto corpus = separable_corpus();
  const auto vocab = build_vocabulary(corpus);
  const auto init = init_model(ModelKind::kBowLogReg, vocab, 2, 4, 5);
  TrainOptions opt;
  opt.lr = 0.0;
  opt.epochs = 3;
  const auto out = train(init, corpus, vocab, opt, 9);
  CHECK(out.embeddings.data == init.embeddings.data);
  CHECK(out.head.data == init.head.data);
  CHECK(out.bias == init.bias);
  CHECK(out.stats.epochs == 3);
  CHECK(out.stats.epoch_losses.size() == 3);
}

TEST_CASE("train is deterministic in the seed") {
  const auto corpus = separable_corpus();
  const auto vocab = build_vocabulary(corpus);
  const auto init = init_model(ModelKind::kAttnPool, vocab, 2, 4, 5);
  TrainOptions opt;
  opt.epochs = 4;
  opt.batch_size = 3;  // batch composition must depend on the shuffle
  const auto a = train(init, corpus, vocab, opt, 9);
  const auto b = train(init, corpus, vocab, opt, 9);
  const auto c = train(init, corpus, vocab, opt, 10);
  CHECK(a.embeddings.data == b.embeddings.data);
  CHECK(a.attn_proj.data == b.attn_proj.data);
  CHECK(a.head.data == b.head.data);
  CHECK(a.stats.epoch_losses == b.stats.epoch_losses);
  CHECK(a.embeddings.data != c.embeddings.data);
}

TEST_CASE("train rejects bad inputs") {
  const auto corpus = separable_corpus();
  const auto vocab = build_vocabulary(corpus);
  const auto init = init_model(ModelKind::kBowLogReg, vocab, 2, 4, 5);
  TrainOptions opt;

  LabeledCorpus empty;
  empty.labels = corpus.labels;
  CHECK_THROWS_WITH(train(init, empty, vocab, opt, 1),
                    Catch::Matchers::ContainsSubstring("init_model"));

  LabeledCorpus extra = corpus;
  extra.labels.push_back("third");
  extra.documents[0].label = 2;
  CHECK_THROWS_WITH(train(init, extra, vocab, opt, 1),
                    Catch::Matchers::ContainsSubstring("more labels"));

  const auto other_vocab = tiny_vocab({"zzz"});
  CHECK_THROWS_WITH(train(init, corpus, other_vocab, opt, 1),
                    Catch::Matchers::ContainsSubstring("vocabulary"));
}

TEST_CASE("training fits a linearly separable corpus") {
  const auto corpus = separable_corpus();
  const auto vocab = build_vocabulary(corpus);
  TrainOptions opt;
  opt.lr = 0.1;
  opt.epochs = 50;
  opt.ratio = 0.25;
  for (ModelKind kind : {ModelKind::kBowLogReg, ModelKind::kAttnPool}) {
    const auto init = init_model(kind, vocab, 2, 8, 5);
    const auto ckpt = train(init, corpus, vocab, opt, 9);
    CHECK(ckpt.ratio == 0.25);
    CHECK(ckpt.stats.final_loss < ckpt.stats.epoch_losses.front());
    BuiltinPredictor predictor(ckpt);
    const auto eval = evaluate(predictor, corpus, vocab);
    CHECK(eval.accuracy == 1.0);
    CHECK(eval.total == 8);
    CHECK(eval.confusion[0][0] == 4);
    CHECK(eval.confusion[1][1] == 4);
    CHECK(eval.confusion[0][1] == 0);
    CHECK(eval.prediction_counts == std::vector<std::int64_t>{4, 4});
  }
}

TEST_CASE("evaluate rejects corpora with labels the model lacks") {
  BuiltinPredictor bow(hand_bow());
  LabeledCorpus corpus;
  corpus.labels = {"a", "b", "c"};
  Document d;
  d.id = "x";
  d.segment_a = {"good"};
  d.label = 2;
  corpus.documents.push_back(d);
  const auto vocab = tiny_vocab({"good"});
  CHECK_THROWS_AS(evaluate(bow, corpus, vocab), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip through the binary format bit-exactly") {
  const auto corpus = separable_corpus();
  const auto vocab = build_vocabulary(corpus);
  TrainOptions opt;
  opt.epochs = 3;
  opt.ratio = 0.5;
  const auto ckpt = train(init_model(ModelKind::kAttnPool, vocab, 2, 4, 5),
                          corpus, vocab, opt, 9);

  std::stringstream buf;
  save_checkpoint(ckpt, buf);
  const std::string bytes = buf.str();
  REQUIRE(bytes.substr(0, 4) == "FLCK");

  std::stringstream in(bytes);
  const auto back = load_checkpoint(in);
  CHECK(back.kind == ckpt.kind);
  CHECK(back.vocab_size == ckpt.vocab_size);
  CHECK(back.embed_dim == ckpt.embed_dim);
  CHECK(back.num_classes == ckpt.num_classes);
  CHECK(back.ratio == ckpt.ratio);
  CHECK(back.seed == ckpt.seed);
  CHECK(back.vocab_hash == ckpt.vocab_hash);
  CHECK(back.embeddings.data == ckpt.embeddings.data);
  CHECK(back.attn_proj.data == ckpt.attn_proj.data);
  CHECK(back.attn_query == ckpt.attn_query);
  CHECK(back.head.data == ckpt.head.data);
  CHECK(back.bias == ckpt.bias);
  CHECK(back.stats.epochs == ckpt.stats.epochs);
  CHECK(back.stats.final_loss == ckpt.stats.final_loss);
  CHECK(back.stats.epoch_losses == ckpt.stats.epoch_losses);

  std::stringstream again;
  save_checkpoint(back, again);
  CHECK(again.str() == bytes);
}

TEST_CASE("checkpoint loading rejects foreign and truncated data") {
  {
    std::stringstream in("NOPE rest does not matter");
    CHECK_THROWS_WITH(load_checkpoint(in),
                      Catch::Matchers::ContainsSubstring("magic"));
  }
  {
    const auto vocab = tiny_vocab({"a"});
    const auto ckpt = init_model(ModelKind::kBowLogReg, vocab, 2, 2, 1);
    std::stringstream buf;
    save_checkpoint(ckpt, buf);
    const std::string bytes = buf.str();
    std::stringstream in(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_WITH(load_checkpoint(in),
                      Catch::Matchers::ContainsSubstring("truncated"));
  }
  CHECK_THROWS_WITH(load_checkpoint("/nonexistent/model.ckpt"),
                    Catch::Matchers::ContainsSubstring("/nonexistent/model.ckpt"));
}
