#pragma once

// Predictor capability surface the diagnostics run against. Built-in trainable
// models and the wire-protocol client both implement it; explanation methods
// only see this interface.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace fewlens {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
};

struct CapabilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Predictor {
 public:
  virtual ~Predictor() = default;

  virtual int num_classes() const = 0;

  // Probability vector over classes; entries >= 0, summing to 1.
  virtual std::vector<double> predict_proba(std::span<const int> ids) const = 0;

  virtual bool has_gradient() const { return false; }
  virtual bool has_attention() const { return false; }

  virtual int embed_dim() const {
    throw CapabilityError("predictor does not expose embeddings");
  }

  // One embedding row per input position.
  virtual Matrix token_embeddings(std::span<const int> ids) const {
    throw CapabilityError("predictor does not expose embeddings");
  }

  // Pre-softmax class score at arbitrary embedding rows. Path-integration
  // methods evaluate this off the token embedding lattice.
  virtual double class_score(const Matrix& embeddings, int cls) const {
    (void)embeddings, (void)cls;
    throw CapabilityError("predictor does not support gradients");
  }

  // Gradient of the pre-softmax class score w.r.t. each position's embedding.
  virtual Matrix class_score_gradients(const Matrix& embeddings, int cls) const {
    (void)embeddings, (void)cls;
    throw CapabilityError("predictor does not support gradients");
  }

  // Softmax pooling weights, one per position; non-negative, summing to 1.
  virtual std::vector<double> attention_weights(std::span<const int> ids) const {
    (void)ids;
    throw CapabilityError("predictor does not support attention weights");
  }

  int predicted_class(std::span<const int> ids) const {
    const auto probs = predict_proba(ids);
    int best = 0;
    for (int c = 1; c < static_cast<int>(probs.size()); ++c) {
      if (probs[c] > probs[best]) best = c;  // tie keeps the lowest label id
    }
    return best;
  }
};

struct EmbeddingGradients {
  Matrix gradients;
  Matrix embeddings;
};

// Per-position gradient of the pre-softmax class score, with the embeddings
// it was evaluated at.
inline EmbeddingGradients embedding_gradients(const Predictor& predictor,
                                              std::span<const int> ids, int cls) {
  if (cls < 0 || cls >= predictor.num_classes()) {
    throw std::invalid_argument("embedding_gradients: class out of range");
  }
  EmbeddingGradients out;
  out.embeddings = predictor.token_embeddings(ids);
  out.gradients = predictor.class_score_gradients(out.embeddings, cls);
  return out;
}

}  // namespace fewlens
