#pragma once

// Built-in trainable classifiers: a mean-pooled bag-of-words logistic
// regression and an attention-pooled linear head. Both expose probabilities,
// closed-form embedding gradients, and (for attn-pool) pooling weights, so
// every explanation method in the library can be exercised without a
// transformer in the loop.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fewlens/corpus.hpp"
#include "fewlens/predictor.hpp"
#include "fewlens/rng.hpp"

namespace fewlens {

enum class ModelKind { kBowLogReg, kAttnPool, kExternal };

inline const char* model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kBowLogReg: return "bow-logreg";
    case ModelKind::kAttnPool: return "attn-pool";
    case ModelKind::kExternal: return "external";
  }
  return "?";
}

inline ModelKind model_kind_from_name(const std::string& name) {
  if (name == "bow-logreg") return ModelKind::kBowLogReg;
  if (name == "attn-pool") return ModelKind::kAttnPool;
  if (name == "external") return ModelKind::kExternal;
  throw std::invalid_argument("unknown model kind: " + name);
}

struct TrainStats {
  int epochs = 0;
  double final_loss = 0.0;
  std::vector<double> epoch_losses;
};

struct Checkpoint {
  ModelKind kind = ModelKind::kBowLogReg;
  int vocab_size = 0;
  int embed_dim = 0;
  int num_classes = 0;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t vocab_hash = 0;

  Matrix embeddings;              // vocab_size x embed_dim
  Matrix attn_proj;               // embed_dim x embed_dim (attn-pool only)
  std::vector<double> attn_query; // embed_dim (attn-pool only)
  Matrix head;                    // num_classes x embed_dim
  std::vector<double> bias;       // num_classes

  std::string endpoint;           // external only
  TrainStats stats;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::vector<std::int64_t>> confusion;  // [truth][predicted]
  std::vector<std::int64_t> prediction_counts;
  std::int64_t total = 0;
};

namespace detail {

inline void softmax_inplace(std::vector<double>& logits) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double sum = 0.0;
  for (double& v : logits) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : logits) v /= sum;
}

inline void check_ids(std::span<const int> ids, int vocab_size) {
  if (ids.empty()) {
    throw std::invalid_argument("predict_proba: empty id sequence");
  }
  for (int id : ids) {
    if (id < 0 || id >= vocab_size) {
      throw std::invalid_argument("id " + std::to_string(id) +
                                  " outside vocabulary of size " +
                                  std::to_string(vocab_size));
    }
  }
}

// Attention forward pass pieces shared by prediction, gradients, and training.
struct AttnForward {
  Matrix tanh_act;               // n x d, tanh(M e_i)
  std::vector<double> weights;   // n, softmax over v . tanh(M e_i)
  std::vector<double> pooled;    // d
};

inline AttnForward attn_forward(const Checkpoint& ckpt, const Matrix& emb) {
  const std::size_t n = emb.rows;
  const std::size_t d = emb.cols;
  AttnForward fwd;
  fwd.tanh_act = Matrix(n, d);
  fwd.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      double z = 0.0;
      for (std::size_t c = 0; c < d; ++c) z += ckpt.attn_proj(r, c) * emb(i, c);
      const double t = std::tanh(z);
      fwd.tanh_act(i, r) = t;
      u += ckpt.attn_query[r] * t;
    }
    fwd.weights[i] = u;
  }
  softmax_inplace(fwd.weights);
  fwd.pooled.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) fwd.pooled[c] += fwd.weights[i] * emb(i, c);
  }
  return fwd;
}

inline std::vector<double> pooled_vector(const Checkpoint& ckpt, const Matrix& emb) {
  const std::size_t d = emb.cols;
  if (ckpt.kind == ModelKind::kBowLogReg) {
    std::vector<double> h(d, 0.0);
    for (std::size_t i = 0; i < emb.rows; ++i) {
      for (std::size_t c = 0; c < d; ++c) h[c] += emb(i, c);
    }
    for (double& v : h) v /= static_cast<double>(emb.rows);
    return h;
  }
  return attn_forward(ckpt, emb).pooled;
}

inline std::vector<double> logits_from_pooled(const Checkpoint& ckpt,
                                              const std::vector<double>& pooled) {
  std::vector<double> logits(ckpt.num_classes);
  for (int c = 0; c < ckpt.num_classes; ++c) {
    double s = ckpt.bias[c];
    for (int j = 0; j < ckpt.embed_dim; ++j) s += ckpt.head(c, j) * pooled[j];
    logits[c] = s;
  }
  return logits;
}

}  // namespace detail

inline Matrix token_embeddings(const Checkpoint& ckpt, std::span<const int> ids) {
  detail::check_ids(ids, ckpt.vocab_size);
  Matrix emb(ids.size(), ckpt.embed_dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (int c = 0; c < ckpt.embed_dim; ++c) {
      emb(i, c) = ckpt.embeddings(ids[i], c);
    }
  }
  return emb;
}

inline std::vector<double> predict_proba(const Checkpoint& ckpt,
                                         std::span<const int> ids) {
  if (ckpt.kind == ModelKind::kExternal) {
    throw CapabilityError("external checkpoints predict through the wire client");
  }
  auto logits =
      detail::logits_from_pooled(ckpt, detail::pooled_vector(ckpt, token_embeddings(ckpt, ids)));
  detail::softmax_inplace(logits);
  return logits;
}

inline double class_score(const Checkpoint& ckpt, const Matrix& embeddings, int cls) {
  return detail::logits_from_pooled(ckpt, detail::pooled_vector(ckpt, embeddings))[cls];
}

// d(score_cls)/d(e_i), closed form.
//   bow-logreg:  head_cls / n at every position.
//   attn-pool:   a_i * head_cls
//              + a_i * (head_cls.e_i - head_cls.pooled) * M^T (v ⊙ (1 - tanh^2))
inline Matrix class_score_gradients(const Checkpoint& ckpt, const Matrix& embeddings,
                                    int cls) {
  const std::size_t n = embeddings.rows;
  const std::size_t d = embeddings.cols;
  Matrix grad(n, d);
  if (ckpt.kind == ModelKind::kBowLogReg) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) {
        grad(i, c) = ckpt.head(cls, c) / static_cast<double>(n);
      }
    }
    return grad;
  }
  if (ckpt.kind != ModelKind::kAttnPool) {
    throw CapabilityError("gradients require a built-in checkpoint");
  }
  const auto fwd = detail::attn_forward(ckpt, embeddings);
  double head_dot_pooled = 0.0;
  for (std::size_t c = 0; c < d; ++c) head_dot_pooled += ckpt.head(cls, c) * fwd.pooled[c];
  for (std::size_t i = 0; i < n; ++i) {
    double head_dot_e = 0.0;
    for (std::size_t c = 0; c < d; ++c) head_dot_e += ckpt.head(cls, c) * embeddings(i, c);
    const double coeff = fwd.weights[i] * (head_dot_e - head_dot_pooled);
    // g_i = M^T (v ⊙ (1 - t_i^2))
    for (std::size_t c = 0; c < d; ++c) {
      double g = 0.0;
      for (std::size_t r = 0; r < d; ++r) {
        const double t = fwd.tanh_act(i, r);
        g += ckpt.attn_proj(r, c) * ckpt.attn_query[r] * (1.0 - t * t);
      }
      grad(i, c) = fwd.weights[i] * ckpt.head(cls, c) + coeff * g;
    }
  }
  return grad;
}

inline std::vector<double> attention_weights(const Checkpoint& ckpt,
                                             std::span<const int> ids) {
  if (ckpt.kind != ModelKind::kAttnPool) {
    throw CapabilityError("attention weights require an attn-pool checkpoint");
  }
  return detail::attn_forward(ckpt, token_embeddings(ckpt, ids)).weights;
}

inline Checkpoint init_model(ModelKind kind, const Vocabulary& vocab,
                             int num_classes, int embed_dim, std::uint64_t seed) {
  if (num_classes < 2) {
    throw std::invalid_argument("init_model: need at least 2 classes");
  }
  if (embed_dim < 1) {
    throw std::invalid_argument("init_model: embed_dim must be >= 1");
  }
  if (kind == ModelKind::kExternal) {
    throw std::invalid_argument("init_model: external predictors are not initialized locally");
  }
  Checkpoint ckpt;
  ckpt.kind = kind;
  ckpt.vocab_size = vocab.size();
  ckpt.embed_dim = embed_dim;
  ckpt.num_classes = num_classes;
  ckpt.ratio = 0.0;
  ckpt.seed = seed;
  ckpt.vocab_hash = vocab.hash();

  auto rng = make_rng(seed, "init");
  auto draw = [&rng](Matrix& m, std::size_t rows, std::size_t cols) {
    m = Matrix(rows, cols);
    for (double& v : m.data) v = uniform_range(rng, -0.1, 0.1);
  };
  draw(ckpt.embeddings, vocab.size(), embed_dim);
  if (kind == ModelKind::kAttnPool) {
    draw(ckpt.attn_proj, embed_dim, embed_dim);
    ckpt.attn_query.resize(embed_dim);
    for (double& v : ckpt.attn_query) v = uniform_range(rng, -0.1, 0.1);
  }
  draw(ckpt.head, num_classes, embed_dim);
  ckpt.bias.resize(num_classes);
  for (double& v : ckpt.bias) v = uniform_range(rng, -0.1, 0.1);
  return ckpt;
}

struct TrainOptions {
  double lr = 1e-2;
  int epochs = 20;
  int batch_size = 8;
  double grad_clip = 1.0;
  int max_len = kDefaultMaxLen;
  double ratio = 0.0;  // recorded in the checkpoint, not used by the optimizer
};

namespace detail {

struct Grads {
  Matrix embeddings;
  Matrix attn_proj;
  std::vector<double> attn_query;
  Matrix head;
  std::vector<double> bias;

  explicit Grads(const Checkpoint& ckpt)
      : embeddings(ckpt.embeddings.rows, ckpt.embeddings.cols),
        attn_proj(ckpt.attn_proj.rows, ckpt.attn_proj.cols),
        attn_query(ckpt.attn_query.size(), 0.0),
        head(ckpt.head.rows, ckpt.head.cols),
        bias(ckpt.bias.size(), 0.0) {}

  double squared_norm() const {
    double s = 0.0;
    for (double v : embeddings.data) s += v * v;
    for (double v : attn_proj.data) s += v * v;
    for (double v : attn_query) s += v * v;
    for (double v : head.data) s += v * v;
    for (double v : bias) s += v * v;
    return s;
  }

  void scale(double f) {
    for (double& v : embeddings.data) v *= f;
    for (double& v : attn_proj.data) v *= f;
    for (double& v : attn_query) v *= f;
    for (double& v : head.data) v *= f;
    for (double& v : bias) v *= f;
  }
};

// Accumulates dL/dparams for one example; returns the cross-entropy loss.
inline double backprop_example(const Checkpoint& ckpt, std::span<const int> ids,
                               int label, double weight, Grads& grads) {
  const auto emb = token_embeddings(ckpt, ids);
  const std::size_t n = emb.rows;
  const std::size_t d = emb.cols;
  const int C = ckpt.num_classes;

  AttnForward fwd;
  std::vector<double> pooled;
  if (ckpt.kind == ModelKind::kAttnPool) {
    fwd = attn_forward(ckpt, emb);
    pooled = fwd.pooled;
  } else {
    pooled = pooled_vector(ckpt, emb);
  }
  auto probs = logits_from_pooled(ckpt, pooled);
  softmax_inplace(probs);
  const double loss = -std::log(std::max(probs[label], 1e-300));

  // dL/dlogits = p - onehot(y)
  std::vector<double> dlogits = probs;
  dlogits[label] -= 1.0;
  for (double& v : dlogits) v *= weight;

  std::vector<double> dpooled(d, 0.0);
  for (int c = 0; c < C; ++c) {
    grads.bias[c] += dlogits[c];
    for (std::size_t j = 0; j < d; ++j) {
      grads.head(c, j) += dlogits[c] * pooled[j];
      dpooled[j] += ckpt.head(c, j) * dlogits[c];
    }
  }

  if (ckpt.kind == ModelKind::kBowLogReg) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        grads.embeddings(ids[i], j) += dpooled[j] / static_cast<double>(n);
      }
    }
    return loss;
  }

  // attn-pool: pooled = sum_i a_i e_i with a = softmax(v . tanh(M e))
  std::vector<double> dweight(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) dweight[i] += dpooled[j] * emb(i, j);
  }
  double mix = 0.0;
  for (std::size_t i = 0; i < n; ++i) mix += fwd.weights[i] * dweight[i];
  for (std::size_t i = 0; i < n; ++i) {
    const double du = fwd.weights[i] * (dweight[i] - mix);
    std::vector<double> dz(d);
    for (std::size_t r = 0; r < d; ++r) {
      const double t = fwd.tanh_act(i, r);
      grads.attn_query[r] += du * t;
      dz[r] = du * ckpt.attn_query[r] * (1.0 - t * t);
    }
    for (std::size_t j = 0; j < d; ++j) {
      double de = fwd.weights[i] * dpooled[j];
      for (std::size_t r = 0; r < d; ++r) {
        grads.attn_proj(r, j) += dz[r] * emb(i, j);
        de += ckpt.attn_proj(r, j) * dz[r];
      }
      grads.embeddings(ids[i], j) += de;
    }
  }
  return loss;
}

}  // namespace detail

// Mini-batch cross-entropy SGD with per-batch gradient-norm clipping.
// Deterministic given the seed; the returned checkpoint records the ratio and
// per-epoch mean losses.
inline Checkpoint train(const Checkpoint& init, const LabeledCorpus& corpus,
                        const Vocabulary& vocab, const TrainOptions& opt,
                        std::uint64_t seed) {
  if (corpus.documents.empty()) {
    throw std::invalid_argument(
        "train: corpus is empty; use init_model for the r=0 checkpoint");
  }
  if (init.kind == ModelKind::kExternal) {
    throw CapabilityError("train: external checkpoints cannot be trained");
  }
  if (corpus.num_classes() > init.num_classes) {
    throw std::invalid_argument("train: corpus has more labels than the model");
  }
  if (vocab.hash() != init.vocab_hash) {
    throw std::invalid_argument("train: vocabulary does not match the checkpoint");
  }

  Checkpoint ckpt = init;
  ckpt.ratio = opt.ratio;
  ckpt.seed = seed;
  ckpt.stats = TrainStats{};

  std::vector<IdSeq> encoded;
  encoded.reserve(corpus.size());
  for (const auto& doc : corpus.documents) {
    encoded.push_back(encode(doc, vocab, opt.max_len));
  }

  auto rng = make_rng(seed, "train");
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    shuffle_vec(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      detail::Grads grads(ckpt);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        epoch_loss += detail::backprop_example(
            ckpt, encoded[idx], corpus.documents[idx].label, inv_batch, grads);
      }
      const double norm = std::sqrt(grads.squared_norm());
      if (opt.grad_clip > 0.0 && norm > opt.grad_clip) {
        grads.scale(opt.grad_clip / norm);
      }
      const double step = opt.lr;
      for (std::size_t i = 0; i < ckpt.embeddings.data.size(); ++i) {
        ckpt.embeddings.data[i] -= step * grads.embeddings.data[i];
      }
      for (std::size_t i = 0; i < ckpt.attn_proj.data.size(); ++i) {
        ckpt.attn_proj.data[i] -= step * grads.attn_proj.data[i];
      }
      for (std::size_t i = 0; i < ckpt.attn_query.size(); ++i) {
        ckpt.attn_query[i] -= step * grads.attn_query[i];
      }
      for (std::size_t i = 0; i < ckpt.head.data.size(); ++i) {
        ckpt.head.data[i] -= step * grads.head.data[i];
      }
      for (std::size_t i = 0; i < ckpt.bias.size(); ++i) {
        ckpt.bias[i] -= step * grads.bias[i];
      }
    }
    ckpt.stats.epoch_losses.push_back(epoch_loss / static_cast<double>(corpus.size()));
  }
  ckpt.stats.epochs = opt.epochs;
  ckpt.stats.final_loss =
      ckpt.stats.epoch_losses.empty() ? 0.0 : ckpt.stats.epoch_losses.back();
  return ckpt;
}

// Adapter exposing a built-in checkpoint through the Predictor interface.
class BuiltinPredictor : public Predictor {
 public:
  explicit BuiltinPredictor(Checkpoint ckpt) : ckpt_(std::move(ckpt)) {
    if (ckpt_.kind == ModelKind::kExternal) {
      throw std::invalid_argument("BuiltinPredictor: checkpoint is external");
    }
  }

  const Checkpoint& checkpoint() const { return ckpt_; }

  int num_classes() const override { return ckpt_.num_classes; }
  int embed_dim() const override { return ckpt_.embed_dim; }
  bool has_gradient() const override { return true; }
  bool has_attention() const override { return ckpt_.kind == ModelKind::kAttnPool; }

  std::vector<double> predict_proba(std::span<const int> ids) const override {
    return fewlens::predict_proba(ckpt_, ids);
  }
  Matrix token_embeddings(std::span<const int> ids) const override {
    return fewlens::token_embeddings(ckpt_, ids);
  }
  double class_score(const Matrix& embeddings, int cls) const override {
    return fewlens::class_score(ckpt_, embeddings, cls);
  }
  Matrix class_score_gradients(const Matrix& embeddings, int cls) const override {
    return fewlens::class_score_gradients(ckpt_, embeddings, cls);
  }
  std::vector<double> attention_weights(std::span<const int> ids) const override {
    return fewlens::attention_weights(ckpt_, ids);
  }

 private:
  Checkpoint ckpt_;
};

inline EvalResult evaluate(const Predictor& predictor, const LabeledCorpus& corpus,
                           const Vocabulary& vocab, int max_len = kDefaultMaxLen) {
  const int C = predictor.num_classes();
  if (corpus.num_classes() > C) {
    throw std::invalid_argument("evaluate: corpus has more labels than the model");
  }
  EvalResult result;
  result.confusion.assign(C, std::vector<std::int64_t>(C, 0));
  result.prediction_counts.assign(C, 0);
  std::int64_t correct = 0;
  for (const auto& doc : corpus.documents) {
    const auto ids = encode(doc, vocab, max_len);
    const int pred = predictor.predicted_class(ids);
    result.confusion[doc.label][pred] += 1;
    result.prediction_counts[pred] += 1;
    if (pred == doc.label) ++correct;
    ++result.total;
  }
  result.accuracy =
      result.total == 0 ? 0.0
                        : static_cast<double>(correct) / static_cast<double>(result.total);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint container: versioned binary, little-endian 64-bit floats.

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes little-endian storage");

inline constexpr char kCheckpointMagic[4] = {'F', 'L', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

inline void write_doubles(std::ostream& out, const std::vector<double>& v) {
  write_pod<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> read_doubles(std::istream& in) {
  const auto n = read_pod<std::uint64_t>(in);
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

inline void write_matrix(std::ostream& out, const Matrix& m) {
  write_pod<std::uint64_t>(out, m.rows);
  write_pod<std::uint64_t>(out, m.cols);
  out.write(reinterpret_cast<const char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
}

inline Matrix read_matrix(std::istream& in) {
  const auto rows = read_pod<std::uint64_t>(in);
  const auto cols = read_pod<std::uint64_t>(in);
  Matrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data.data()),
          static_cast<std::streamsize>(m.data.size() * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return m;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const auto n = read_pod<std::uint64_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  using namespace detail;
  out.write(kCheckpointMagic, 4);
  write_pod<std::uint32_t>(out, kCheckpointVersion);
  write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(ckpt.kind));
  write_pod<std::int32_t>(out, ckpt.vocab_size);
  write_pod<std::int32_t>(out, ckpt.embed_dim);
  write_pod<std::int32_t>(out, ckpt.num_classes);
  write_pod<double>(out, ckpt.ratio);
  write_pod<std::uint64_t>(out, ckpt.seed);
  write_pod<std::uint64_t>(out, ckpt.vocab_hash);
  write_pod<std::int32_t>(out, ckpt.stats.epochs);
  write_pod<double>(out, ckpt.stats.final_loss);
  write_doubles(out, ckpt.stats.epoch_losses);
  write_matrix(out, ckpt.embeddings);
  write_matrix(out, ckpt.attn_proj);
  write_doubles(out, ckpt.attn_query);
  write_matrix(out, ckpt.head);
  write_doubles(out, ckpt.bias);
  write_string(out, ckpt.endpoint);
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

inline Checkpoint load_checkpoint(std::istream& in) {
  using namespace detail;
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.kind = static_cast<ModelKind>(read_pod<std::uint8_t>(in));
  ckpt.vocab_size = read_pod<std::int32_t>(in);
  ckpt.embed_dim = read_pod<std::int32_t>(in);
  ckpt.num_classes = read_pod<std::int32_t>(in);
  ckpt.ratio = read_pod<double>(in);
  ckpt.seed = read_pod<std::uint64_t>(in);
  ckpt.vocab_hash = read_pod<std::uint64_t>(in);
  ckpt.stats.epochs = read_pod<std::int32_t>(in);
  ckpt.stats.final_loss = read_pod<double>(in);
  ckpt.stats.epoch_losses = read_doubles(in);
  ckpt.embeddings = read_matrix(in);
  ckpt.attn_proj = read_matrix(in);
  ckpt.attn_query = read_doubles(in);
  ckpt.head = read_matrix(in);
  ckpt.bias = read_doubles(in);
  ckpt.endpoint = read_string(in);
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  save_checkpoint(ckpt, out);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  return load_checkpoint(in);
}

}  // namespace fewlens
