#pragma once

// Quantitative machinery: prediction bias, AOPC faithfulness, LMI feature
// statistics with per-label normalized distributions, and KL divergence
// between those distributions. Natural logarithm throughout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fewlens/corpus.hpp"
#include "fewlens/explain.hpp"
#include "fewlens/predictor.hpp"

namespace fewlens {

// Multiset of (token, label) occurrences: top-k explanation tokens for model
// pools, every token occurrence for training-data pools.
struct FeaturePool {
  std::string source;  // "model-explanations" | "training-data"
  int num_labels = 0;
  std::map<int, std::vector<std::int64_t>> token_label_counts;
  std::vector<std::int64_t> label_totals;
  std::int64_t total = 0;

  explicit FeaturePool(int labels = 0, std::string src = "model-explanations")
      : source(std::move(src)), num_labels(labels), label_totals(labels, 0) {}

  void add(int token_id, int label, std::int64_t count = 1) {
    auto it = token_label_counts.find(token_id);
    if (it == token_label_counts.end()) {
      it = token_label_counts
               .emplace(token_id, std::vector<std::int64_t>(num_labels, 0))
               .first;
    }
    it->second.at(label) += count;
    label_totals.at(label) += count;
    total += count;
  }

  std::int64_t count_token(int token_id) const {
    auto it = token_label_counts.find(token_id);
    if (it == token_label_counts.end()) return 0;
    std::int64_t s = 0;
    for (auto v : it->second) s += v;
    return s;
  }

  std::int64_t count_token_label(int token_id, int label) const {
    auto it = token_label_counts.find(token_id);
    return it == token_label_counts.end() ? 0 : it->second.at(label);
  }

  std::int64_t count_label(int label) const { return label_totals.at(label); }
};

// Pools each attribution's top-k tokens under its explained class.
inline FeaturePool pool_model_features(const std::vector<Attribution>& attrs,
                                       std::size_t k, int num_labels) {
  if (k < 1) throw std::invalid_argument("pool_model_features: k must be >= 1");
  FeaturePool pool(num_labels, "model-explanations");
  for (const auto& attr : attrs) {
    const auto order = ranked_order(attr);
    for (std::size_t i = 0; i < order.size() && i < k; ++i) {
      pool.add(attr.token_ids[order[i]], attr.explained_class);
    }
  }
  return pool;
}

// Pools every token occurrence of every document under its gold label.
// Special tokens are excluded (raw text never contains them) and
// out-of-vocabulary tokens are dropped so the pool stays within the
// vocabulary the model-side distribution is defined over.
inline FeaturePool pool_data_features(const LabeledCorpus& corpus,
                                      const Vocabulary& vocab) {
  if (corpus.documents.empty()) {
    throw std::invalid_argument(
        "pool_data_features: corpus is empty (no data reference exists)");
  }
  FeaturePool pool(corpus.num_classes(), "training-data");
  auto add_tokens = [&](const TokenSeq& tokens, int label) {
    for (const auto& t : tokens) {
      if (!vocab.contains(t)) continue;
      const int id = vocab.id_of(t);
      if (Vocabulary::is_special(id)) continue;
      pool.add(id, label);
    }
  };
  for (const auto& doc : corpus.documents) {
    add_tokens(doc.segment_a, doc.label);
    if (doc.segment_b) add_tokens(*doc.segment_b, doc.label);
  }
  return pool;
}

// LMI(e,y) = p(e,y) * ln(p(y|e) / p(y)), with p(y|e) = count(e,y)/count(e),
// p(y) = count(y)/|E|, p(e,y) = count(e,y)/|E|. count(e,y)=0 contributes 0.
inline double lmi(const FeaturePool& pool, int token_id, int label) {
  if (pool.total <= 0) throw std::invalid_argument("lmi: empty pool");
  const auto count_e = pool.count_token(token_id);
  if (count_e == 0) {
    throw std::invalid_argument("lmi: token " + std::to_string(token_id) +
                                " absent from the pool");
  }
  const auto count_ey = pool.count_token_label(token_id, label);
  if (count_ey == 0) return 0.0;
  const double total = static_cast<double>(pool.total);
  const double p_y_given_e =
      static_cast<double>(count_ey) / static_cast<double>(count_e);
  const double p_y = static_cast<double>(pool.count_label(label)) / total;
  const double p_ey = static_cast<double>(count_ey) / total;
  return p_ey * std::log(p_y_given_e / p_y);
}

struct LmiDistribution {
  int label = 0;
  std::vector<double> values;  // one per vocabulary token
  bool normalized = false;
  bool degenerate = false;  // clamped mass was zero; not usable as a distribution
};

// Raw LMI per vocabulary token (0 outside the pool), negatives clamped to 0,
// then normalized to sum 1. A zero clamped sum yields a degenerate-flagged
// distribution instead of a division by zero.
inline LmiDistribution lmi_distribution(const FeaturePool& pool,
                                        const Vocabulary& vocab, int label) {
  if (pool.total <= 0) {
    throw std::invalid_argument("lmi_distribution: empty pool");
  }
  LmiDistribution dist;
  dist.label = label;
  dist.values.assign(static_cast<std::size_t>(vocab.size()), 0.0);
  double sum = 0.0;
  for (const auto& [token_id, _] : pool.token_label_counts) {
    const double v = std::max(lmi(pool, token_id, label), 0.0);
    dist.values.at(static_cast<std::size_t>(token_id)) = v;
    sum += v;
  }
  if (sum <= 0.0) {
    dist.degenerate = true;
    return dist;
  }
  for (double& v : dist.values) v /= sum;
  dist.normalized = true;
  return dist;
}

// KL(P || Q) after additive-epsilon smoothing and renormalization of both
// sides. P is the subject, Q the reference.
inline double kld(const LmiDistribution& p, const LmiDistribution& q,
                  double epsilon = 1e-9) {
  if (p.values.size() != q.values.size()) {
    throw std::invalid_argument("kld: vocabulary size mismatch");
  }
  if (p.label != q.label) {
    throw std::invalid_argument("kld: label mismatch");
  }
  if (p.degenerate || q.degenerate) {
    throw std::invalid_argument("kld: degenerate distribution");
  }
  if (epsilon <= 0.0) {
    throw std::invalid_argument("kld: epsilon must be positive");
  }
  const std::size_t n = p.values.size();
  double p_sum = 0.0, q_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p_sum += p.values[i] + epsilon;
    q_sum += q.values[i] + epsilon;
  }
  double out = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pi = (p.values[i] + epsilon) / p_sum;
    const double qi = (q.values[i] + epsilon) / q_sum;
    out += pi * std::log(pi / qi);
  }
  return out;
}

struct BiasReading {
  double pb = 0.0;
  int majority = 0;   // i1 = argmax T (ties -> lowest id)
  int minority = 0;   // i2 = argmin T (ties -> lowest id)
  std::vector<std::int64_t> predictions;  // T
  std::vector<std::int64_t> data;         // D
};

inline int majority_label(const std::vector<std::int64_t>& predictions) {
  int best = 0;
  for (std::size_t i = 1; i < predictions.size(); ++i) {
    if (predictions[i] > predictions[best]) best = static_cast<int>(i);
  }
  return best;
}

// PB = | (T_i1 - T_i2)/(T_i1 + T_i2) - (D_i1 - D_i2)/(D_i1 + D_i2) | where i1
// and i2 are the most- and least-predicted labels. Range [0, 2].
inline BiasReading prediction_bias(const std::vector<std::int64_t>& predictions,
                                   const std::vector<std::int64_t>& data) {
  if (predictions.size() != data.size() || predictions.size() < 2) {
    throw std::invalid_argument(
        "prediction_bias: T and D must cover the same >= 2 labels");
  }
  std::int64_t t_sum = 0, d_sum = 0;
  for (auto v : predictions) t_sum += v;
  for (auto v : data) d_sum += v;
  if (t_sum == 0 || d_sum == 0) {
    throw std::invalid_argument("prediction_bias: zero examples");
  }
  if (t_sum != d_sum) {
    throw std::invalid_argument(
        "prediction_bias: T and D must count the same examples");
  }
  BiasReading out;
  out.predictions = predictions;
  out.data = data;
  out.majority = majority_label(predictions);
  out.minority = 0;
  for (std::size_t i = 1; i < predictions.size(); ++i) {
    if (predictions[i] < predictions[out.minority]) {
      out.minority = static_cast<int>(i);
    }
  }
  const double t1 = static_cast<double>(predictions[out.majority]);
  const double t2 = static_cast<double>(predictions[out.minority]);
  const double d1 = static_cast<double>(data[out.majority]);
  const double d2 = static_cast<double>(data[out.minority]);
  if (d1 + d2 == 0.0) {
    throw std::invalid_argument(
        "prediction_bias: no test examples carry either extreme label");
  }
  out.pb = std::abs((t1 - t2) / (t1 + t2) - (d1 - d2) / (d1 + d2));
  return out;
}

struct AopcExample {
  IdSeq ids;
  int label = 0;  // the predicted label whose probability is tracked
  Attribution attribution;
};

// AOPC = (1/(U+1)) * mean over examples of sum_{u=1..U} [p(y|x) - p(y|x\1..u)]
// where x\1..u MASK-replaces the u highest-attribution positions. Examples
// shorter than U contribute their fully-masked delta for the missing terms.
inline double aopc(const Predictor& predictor,
                   const std::vector<AopcExample>& examples, int U) {
  if (U < 1) throw std::invalid_argument("aopc: U must be >= 1");
  if (examples.empty()) {
    throw std::invalid_argument("aopc: empty example list");
  }
  double total = 0.0;
  for (const auto& ex : examples) {
    const double p0 = predictor.predict_proba(ex.ids)[ex.label];
    const auto order = ranked_order(ex.attribution);
    std::vector<int> work = ex.ids;
    double sum = 0.0;
    double delta = 0.0;
    for (int u = 1; u <= U; ++u) {
      if (static_cast<std::size_t>(u) <= order.size()) {
        work[ex.attribution.positions[order[u - 1]]] = kMaskId;
        delta = p0 - predictor.predict_proba(work)[ex.label];
      }
      sum += delta;
    }
    total += sum;
  }
  return total / (static_cast<double>(U + 1) *
                  static_cast<double>(examples.size()));
}

}  // namespace fewlens
