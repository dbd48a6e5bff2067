#pragma once

// Post-hoc attribution methods: sampling Shapley with an exact small-n oracle,
// integrated gradients, attention weights, occlusion, and a random baseline.
// All methods score every attributable position (PAD is skipped, [CLS]/[SEP]
// are not); absent features are MASK-replaced, never deleted, so sequence
// length stays fixed.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fewlens/corpus.hpp"
#include "fewlens/predictor.hpp"
#include "fewlens/rng.hpp"

namespace fewlens {

struct Attribution {
  std::string doc_id;
  std::vector<int> positions;       // attributable positions within the input
  std::vector<std::string> tokens;  // token string per attributable position
  std::vector<int> token_ids;      // token id per attributable position
  std::vector<double> scores;
  int explained_class = 0;
  std::string method;
  double predicted_prob = 0.0;
};

namespace detail {

inline std::vector<int> attributable_positions(std::span<const int> ids) {
  std::vector<int> out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] != kPadId) out.push_back(static_cast<int>(i));
  }
  return out;
}

inline Attribution attribution_shell(const std::string& doc_id,
                                     std::span<const int> ids,
                                     const Vocabulary& vocab, int cls,
                                     std::string method) {
  Attribution attr;
  attr.doc_id = doc_id;
  attr.positions = attributable_positions(ids);
  attr.tokens.reserve(attr.positions.size());
  attr.token_ids.reserve(attr.positions.size());
  for (int pos : attr.positions) {
    attr.token_ids.push_back(ids[pos]);
    attr.tokens.push_back(vocab.token(ids[pos]));
  }
  attr.scores.assign(attr.positions.size(), 0.0);
  attr.explained_class = cls;
  attr.method = std::move(method);
  return attr;
}

inline void check_class(const Predictor& predictor, int cls) {
  if (cls < 0 || cls >= predictor.num_classes()) {
    throw std::invalid_argument("explained class out of range");
  }
}

}  // namespace detail

// Positions of an attribution ranked for "top-k" use: score descending, ties
// by ascending token id, then ascending position. Indices into attr.positions.
inline std::vector<std::size_t> ranked_order(const Attribution& attr) {
  std::vector<std::size_t> order(attr.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&attr](std::size_t a, std::size_t b) {
    if (attr.scores[a] != attr.scores[b]) return attr.scores[a] > attr.scores[b];
    if (attr.token_ids[a] != attr.token_ids[b]) {
      return attr.token_ids[a] < attr.token_ids[b];
    }
    return attr.positions[a] < attr.positions[b];
  });
  return order;
}

inline std::vector<std::string> top_k_features(const Attribution& attr,
                                               std::size_t k) {
  if (k < 1) throw std::invalid_argument("top_k_features: k must be >= 1");
  const auto order = ranked_order(attr);
  std::vector<std::string> out;
  out.reserve(std::min(k, order.size()));
  for (std::size_t i = 0; i < order.size() && i < k; ++i) {
    out.push_back(attr.tokens[order[i]]);
  }
  return out;
}

// Monte-Carlo Shapley values over feature permutations. Each permutation
// starts from the all-masked input and unmasks features in permutation order,
// crediting each feature with its marginal probability gain; m permutations
// cost m*n + 2 predictor calls.
inline Attribution sampling_shapley(const Predictor& predictor,
                                    const std::string& doc_id,
                                    std::span<const int> ids,
                                    const Vocabulary& vocab, int cls,
                                    int num_samples, std::uint64_t seed) {
  if (num_samples < 1) {
    throw std::invalid_argument("sampling_shapley: num_samples must be >= 1");
  }
  if (ids.empty()) {
    throw std::invalid_argument("sampling_shapley: empty input");
  }
  detail::check_class(predictor, cls);
  auto attr =
      detail::attribution_shell(doc_id, ids, vocab, cls, "shapley-sampled");
  const std::size_t n = attr.positions.size();
  attr.predicted_prob = predictor.predict_proba(ids)[cls];
  if (n == 0) return attr;

  std::vector<int> masked(ids.begin(), ids.end());
  for (int pos : attr.positions) masked[pos] = kMaskId;
  const double f_empty = predictor.predict_proba(masked)[cls];

  auto rng = make_rng(seed, "shapley");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> work = masked;
  for (int s = 0; s < num_samples; ++s) {
    shuffle_vec(perm, rng);
    double prev = f_empty;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t feat = perm[j];
      work[attr.positions[feat]] = ids[attr.positions[feat]];
      const double cur = predictor.predict_proba(work)[cls];
      attr.scores[feat] += cur - prev;
      prev = cur;
    }
    work = masked;
  }
  for (double& v : attr.scores) v /= static_cast<double>(num_samples);
  return attr;
}

// Like sampling_shapley but also reports the per-position standard error of
// the mean marginal contribution (Welford accumulation over permutations).
struct SampledShapleyDetail {
  Attribution attribution;
  std::vector<double> standard_errors;
};

inline SampledShapleyDetail sampling_shapley_detailed(
    const Predictor& predictor, const std::string& doc_id,
    std::span<const int> ids, const Vocabulary& vocab, int cls,
    int num_samples, std::uint64_t seed) {
  if (num_samples < 2) {
    throw std::invalid_argument(
        "sampling_shapley_detailed: need >= 2 samples for standard errors");
  }
  detail::check_class(predictor, cls);
  SampledShapleyDetail out;
  out.attribution =
      detail::attribution_shell(doc_id, ids, vocab, cls, "shapley-sampled");
  auto& attr = out.attribution;
  const std::size_t n = attr.positions.size();
  attr.predicted_prob = predictor.predict_proba(ids)[cls];
  out.standard_errors.assign(n, 0.0);
  if (n == 0) return out;

  std::vector<int> masked(ids.begin(), ids.end());
  for (int pos : attr.positions) masked[pos] = kMaskId;
  const double f_empty = predictor.predict_proba(masked)[cls];

  auto rng = make_rng(seed, "shapley");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> work = masked;
  std::vector<double> mean(n, 0.0), m2(n, 0.0);
  for (int s = 0; s < num_samples; ++s) {
    shuffle_vec(perm, rng);
    double prev = f_empty;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t feat = perm[j];
      work[attr.positions[feat]] = ids[attr.positions[feat]];
      const double cur = predictor.predict_proba(work)[cls];
      const double marginal = cur - prev;
      prev = cur;
      const double delta = marginal - mean[feat];
      mean[feat] += delta / static_cast<double>(s + 1);
      m2[feat] += delta * (marginal - mean[feat]);
    }
    work = masked;
  }
  for (std::size_t i = 0; i < n; ++i) {
    attr.scores[i] = mean[i];
    const double variance = m2[i] / static_cast<double>(num_samples - 1);
    out.standard_errors[i] =
        std::sqrt(std::max(variance, 0.0) / static_cast<double>(num_samples));
  }
  return out;
}

// Exact Shapley values by coalition enumeration:
//   score_i = sum over S not containing i of |S|!(n-|S|-1)!/n! * [f(S+i)-f(S)]
// Guarded at n <= 12 (2^n predictor calls).
inline Attribution exact_shapley(const Predictor& predictor,
                                 const std::string& doc_id,
                                 std::span<const int> ids,
                                 const Vocabulary& vocab, int cls) {
  if (ids.empty()) {
    throw std::invalid_argument("exact_shapley: empty input");
  }
  detail::check_class(predictor, cls);
  auto attr =
      detail::attribution_shell(doc_id, ids, vocab, cls, "shapley-exact");
  const std::size_t n = attr.positions.size();
  if (n > 12) {
    throw std::invalid_argument(
        "exact_shapley: refusing " + std::to_string(n) +
        " attributable positions (cost guard, max 12)");
  }
  attr.predicted_prob = predictor.predict_proba(ids)[cls];
  if (n == 0) return attr;

  const std::size_t num_subsets = std::size_t{1} << n;
  std::vector<double> value(num_subsets);
  std::vector<int> work(ids.begin(), ids.end());
  for (std::size_t mask = 0; mask < num_subsets; ++mask) {
    for (std::size_t j = 0; j < n; ++j) {
      const int pos = attr.positions[j];
      work[pos] = (mask >> j) & 1 ? ids[pos] : kMaskId;
    }
    value[mask] = predictor.predict_proba(work)[cls];
  }

  // weight[s] = s! (n-s-1)! / n!; exact in double for n <= 12.
  std::vector<double> weight(n);
  auto factorial = [](std::size_t k) {
    double f = 1.0;
    for (std::size_t i = 2; i <= k; ++i) f *= static_cast<double>(i);
    return f;
  };
  const double n_fact = factorial(n);
  for (std::size_t s = 0; s < n; ++s) {
    weight[s] = factorial(s) * factorial(n - s - 1) / n_fact;
  }

  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t bit = std::size_t{1} << j;
    double score = 0.0;
    for (std::size_t mask = 0; mask < num_subsets; ++mask) {
      if (mask & bit) continue;
      const auto size = static_cast<std::size_t>(std::popcount(mask));
      score += weight[size] * (value[mask | bit] - value[mask]);
    }
    attr.scores[j] = score;
  }
  return attr;
}

// Integrated gradients along the straight path from the zero-embedding
// baseline to the input, integrating the pre-softmax class score with a
// right-Riemann sum. Exact for linear scores at any step count.
inline Attribution integrated_gradients(const Predictor& predictor,
                                        const std::string& doc_id,
                                        std::span<const int> ids,
                                        const Vocabulary& vocab, int cls,
                                        int steps) {
  if (steps < 1) {
    throw std::invalid_argument("integrated_gradients: steps must be >= 1");
  }
  if (!predictor.has_gradient()) {
    throw CapabilityError("integrated_gradients: predictor has no gradients");
  }
  if (ids.empty()) {
    throw std::invalid_argument("integrated_gradients: empty input");
  }
  detail::check_class(predictor, cls);
  auto attr = detail::attribution_shell(doc_id, ids, vocab, cls,
                                        "integrated-gradients");
  attr.predicted_prob = predictor.predict_proba(ids)[cls];

  const Matrix emb = predictor.token_embeddings(ids);
  Matrix avg_grad(emb.rows, emb.cols);
  Matrix point(emb.rows, emb.cols);
  for (int s = 1; s <= steps; ++s) {
    const double alpha = static_cast<double>(s) / static_cast<double>(steps);
    for (std::size_t i = 0; i < emb.data.size(); ++i) {
      point.data[i] = alpha * emb.data[i];
    }
    const Matrix grad = predictor.class_score_gradients(point, cls);
    for (std::size_t i = 0; i < emb.data.size(); ++i) {
      avg_grad.data[i] += grad.data[i];
    }
  }
  const double inv_steps = 1.0 / static_cast<double>(steps);
  for (std::size_t j = 0; j < attr.positions.size(); ++j) {
    const auto pos = static_cast<std::size_t>(attr.positions[j]);
    double s = 0.0;
    for (std::size_t c = 0; c < emb.cols; ++c) {
      s += emb(pos, c) * avg_grad(pos, c);
    }
    attr.scores[j] = s * inv_steps;
  }
  return attr;
}

// Attention pooling weights as attributions; the explained class is the
// predicted one.
inline Attribution attention_explanation(const Predictor& predictor,
                                         const std::string& doc_id,
                                         std::span<const int> ids,
                                         const Vocabulary& vocab) {
  if (!predictor.has_attention()) {
    throw CapabilityError("attention_explanation: predictor has no attention");
  }
  if (ids.empty()) {
    throw std::invalid_argument("attention_explanation: empty input");
  }
  const auto probs = predictor.predict_proba(ids);
  int cls = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[cls]) cls = static_cast<int>(i);
  }
  auto attr = detail::attribution_shell(doc_id, ids, vocab, cls, "attention");
  attr.predicted_prob = probs[cls];
  const auto weights = predictor.attention_weights(ids);
  for (std::size_t j = 0; j < attr.positions.size(); ++j) {
    attr.scores[j] = weights[attr.positions[j]];
  }
  return attr;
}

// Leave-one-out: score_i = f(x) - f(x with position i MASK-replaced).
inline Attribution occlusion(const Predictor& predictor,
                             const std::string& doc_id,
                             std::span<const int> ids, const Vocabulary& vocab,
                             int cls) {
  if (ids.empty()) {
    throw std::invalid_argument("occlusion: empty input");
  }
  detail::check_class(predictor, cls);
  auto attr = detail::attribution_shell(doc_id, ids, vocab, cls, "occlusion");
  attr.predicted_prob = predictor.predict_proba(ids)[cls];
  std::vector<int> work(ids.begin(), ids.end());
  for (std::size_t j = 0; j < attr.positions.size(); ++j) {
    const int pos = attr.positions[j];
    work[pos] = kMaskId;
    attr.scores[j] = attr.predicted_prob - predictor.predict_proba(work)[cls];
    work[pos] = ids[pos];
  }
  return attr;
}

// Seeded uniform(0,1) scores; the faithfulness sanity floor. The class and
// probability fields are bookkeeping supplied by the caller.
inline Attribution random_attribution(const std::string& doc_id,
                                      std::span<const int> ids,
                                      const Vocabulary& vocab,
                                      std::uint64_t seed, int cls = 0,
                                      double predicted_prob = 0.0) {
  auto attr = detail::attribution_shell(doc_id, ids, vocab, cls, "random");
  attr.predicted_prob = predicted_prob;
  auto rng = make_rng(seed, "random");
  for (double& v : attr.scores) v = uniform01(rng);
  return attr;
}

namespace detail {

// 17 significant digits: enough to round-trip any double exactly.
inline std::string format_double17(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v,
                           std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

}  // namespace detail

// One JSON line per attribution: doc_id, method, class, prob, tokens, scores.
inline void append_attribution_jsonl(std::ostream& out,
                                     const Attribution& attr) {
  out << "{\"doc_id\":" << nlohmann::json(attr.doc_id).dump()
      << ",\"method\":" << nlohmann::json(attr.method).dump()
      << ",\"class\":" << attr.explained_class
      << ",\"prob\":" << detail::format_double17(attr.predicted_prob)
      << ",\"tokens\":[";
  for (std::size_t i = 0; i < attr.tokens.size(); ++i) {
    if (i > 0) out << ',';
    out << nlohmann::json(attr.tokens[i]).dump();
  }
  out << "],\"scores\":[";
  for (std::size_t i = 0; i < attr.scores.size(); ++i) {
    if (i > 0) out << ',';
    out << detail::format_double17(attr.scores[i]);
  }
  out << "]}\n";
}

inline Attribution parse_attribution_jsonl(const std::string& line,
                                           const Vocabulary& vocab) {
  nlohmann::json j;
  Attribution attr;
  try {
    j = nlohmann::json::parse(line);
    attr.doc_id = j.at("doc_id").get<std::string>();
    attr.method = j.at("method").get<std::string>();
    attr.explained_class = j.at("class").get<int>();
    attr.predicted_prob = j.at("prob").get<double>();
    attr.tokens = j.at("tokens").get<std::vector<std::string>>();
    attr.scores = j.at("scores").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("attribution line: ") + e.what());
  }
  if (attr.tokens.size() != attr.scores.size()) {
    throw std::runtime_error("attribution line: tokens/scores length mismatch");
  }
  attr.positions.resize(attr.tokens.size());
  std::iota(attr.positions.begin(), attr.positions.end(), 0);
  attr.token_ids.reserve(attr.tokens.size());
  for (const auto& t : attr.tokens) attr.token_ids.push_back(vocab.id_of(t));
  return attr;
}

}  // namespace fewlens
