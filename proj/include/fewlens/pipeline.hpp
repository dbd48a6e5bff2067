#pragma once

// Experiment orchestration: load config and datasets, sweep (ratio x seed)
// checkpoints from a shared per-seed init, explain a fixed test subset per
// seed, compute all metrics, and emit a deterministic report tree
// (report.json, CSV tables, top-feature table, SVG plots, checkpoints,
// attribution dumps).
//
// Environment: FEWLENS_OUT overrides the configured output directory,
// FEWLENS_WORKERS caps the explanation worker count. Output bytes are a pure
// function of (config, dataset bytes) — the report timestamp is the only
// exception.

#include <atomic>
#include <charconv>
#include <chrono>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fewlens/corpus.hpp"
#include "fewlens/explain.hpp"
#include "fewlens/external.hpp"
#include "fewlens/metrics.hpp"
#include "fewlens/model.hpp"
#include "fewlens/plot.hpp"

namespace fewlens {

struct ExplanationSettings {
  std::string method = "shapley-sampled";
  int samples = 200;  // shapley-sampled permutation count
  int steps = 50;     // integrated-gradients path resolution
};

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> methods = {
      "shapley-sampled", "shapley-exact", "integrated-gradients",
      "attention",       "occlusion",     "random"};
  return methods;
}

struct ExperimentConfig {
  int version = 1;
  ModelKind model = ModelKind::kBowLogReg;
  std::string train_path;
  std::string test_in_path;
  std::string test_out_path;
  SchemaMapping schema;
  std::vector<double> ratios = {0.0, 0.01, 0.05, 0.1, 0.5, 1.0};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  ExplanationSettings explanation;
  int k = 0;  // 0 = auto: 10 when the train split's mean encoded length >= 100, else 6
  int sample_size = 1000;
  int U = 10;
  double epsilon = 1e-9;
  int embed_dim = 32;
  TrainOptions train_options;
  std::string out_dir = "out";
  nlohmann::ordered_json raw;  // echoed into the report
};

inline void validate_config(const ExperimentConfig& cfg) {
  if (cfg.model == ModelKind::kExternal) {
    throw std::invalid_argument(
        "config: the experiment sweep trains checkpoints and requires a "
        "built-in model kind");
  }
  if (cfg.train_path.empty() || cfg.test_in_path.empty() ||
      cfg.test_out_path.empty()) {
    throw std::invalid_argument(
        "config: datasets.train, datasets.test_in, datasets.test_out are "
        "required");
  }
  if (cfg.ratios.empty()) {
    throw std::invalid_argument("config: ratios list is empty");
  }
  for (double r : cfg.ratios) {
    if (r < 0.0 || r > 1.0) {
      throw std::invalid_argument("config: ratios must lie in [0, 1]");
    }
  }
  if (cfg.seeds.empty()) {
    throw std::invalid_argument("config: seeds list is empty");
  }
  if (cfg.sample_size < 1) {
    throw std::invalid_argument("config: sample_size must be >= 1");
  }
  if (cfg.U < 1) throw std::invalid_argument("config: U must be >= 1");
  if (cfg.epsilon <= 0.0) {
    throw std::invalid_argument("config: epsilon must be positive");
  }
  if (cfg.embed_dim < 1) {
    throw std::invalid_argument("config: embed_dim must be >= 1");
  }
  if (cfg.k < 0) throw std::invalid_argument("config: k must be >= 0");
  const auto& methods = known_methods();
  if (std::find(methods.begin(), methods.end(), cfg.explanation.method) ==
      methods.end()) {
    throw std::invalid_argument("config: unknown explanation method `" +
                                cfg.explanation.method + "`");
  }
  if (cfg.explanation.method == "attention" &&
      cfg.model != ModelKind::kAttnPool) {
    throw std::invalid_argument(
        "config: the attention method requires the attn-pool model");
  }
  if (cfg.explanation.samples < 1 || cfg.explanation.steps < 1) {
    throw std::invalid_argument(
        "config: explanation samples/steps must be >= 1");
  }
  if (cfg.train_options.epochs < 0 || cfg.train_options.batch_size < 1 ||
      cfg.train_options.lr < 0.0 || cfg.train_options.grad_clip < 0.0 ||
      cfg.train_options.max_len < 3) {
    throw std::invalid_argument("config: invalid training options");
  }
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open config file: " + path);
  }
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("config file " + path +
                             " is not valid JSON: " + e.what());
  }
  const auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&base](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };

  ExperimentConfig cfg;
  cfg.raw = j;
  cfg.version = j.value("version", 1);
  if (cfg.version != 1) {
    throw std::runtime_error("config: unsupported version " +
                             std::to_string(cfg.version));
  }
  cfg.model = model_kind_from_name(j.value("model", "bow-logreg"));
  if (j.contains("datasets")) {
    const auto& d = j.at("datasets");
    if (d.contains("train")) cfg.train_path = resolve(d.at("train"));
    if (d.contains("test_in")) cfg.test_in_path = resolve(d.at("test_in"));
    if (d.contains("test_out")) cfg.test_out_path = resolve(d.at("test_out"));
  }
  if (j.contains("schema")) {
    const auto& s = j.at("schema");
    if (s.contains("text")) cfg.schema.text = s.at("text").get<std::string>();
    if (s.contains("text_a")) cfg.schema.text_a = s.at("text_a").get<std::string>();
    if (s.contains("text_b")) cfg.schema.text_b = s.at("text_b").get<std::string>();
    if (s.contains("label")) cfg.schema.label = s.at("label").get<std::string>();
    if (s.contains("id")) cfg.schema.id = s.at("id").get<std::string>();
    if (s.contains("labels")) {
      cfg.schema.labels = s.at("labels").get<std::vector<std::string>>();
    }
  } else {
    cfg.schema.text = "text";
  }
  if (j.contains("ratios")) cfg.ratios = j.at("ratios").get<std::vector<double>>();
  if (j.contains("seeds")) {
    cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  }
  if (j.contains("explanation")) {
    const auto& e = j.at("explanation");
    cfg.explanation.method = e.value("method", cfg.explanation.method);
    cfg.explanation.samples = e.value("samples", cfg.explanation.samples);
    cfg.explanation.steps = e.value("steps", cfg.explanation.steps);
  }
  cfg.k = j.value("k", 0);
  cfg.sample_size = j.value("sample_size", 1000);
  cfg.U = j.value("U", 10);
  cfg.epsilon = j.value("epsilon", 1e-9);
  cfg.embed_dim = j.value("embed_dim", 32);
  if (j.contains("train")) {
    const auto& t = j.at("train");
    cfg.train_options.lr = t.value("lr", cfg.train_options.lr);
    cfg.train_options.epochs = t.value("epochs", cfg.train_options.epochs);
    cfg.train_options.batch_size =
        t.value("batch_size", cfg.train_options.batch_size);
    cfg.train_options.grad_clip =
        t.value("grad_clip", cfg.train_options.grad_clip);
    cfg.train_options.max_len = t.value("max_len", cfg.train_options.max_len);
  }
  if (j.contains("out_dir")) {
    cfg.out_dir = resolve(j.at("out_dir").get<std::string>());
  } else {
    cfg.out_dir = resolve("out");
  }
  cfg.schema.validate();
  validate_config(cfg);
  return cfg;
}

// --out flag > FEWLENS_OUT > config out_dir.
inline std::string resolve_out_dir(const ExperimentConfig& cfg,
                                   const std::string& cli_out = "") {
  if (!cli_out.empty()) return cli_out;
  if (const char* env = std::getenv("FEWLENS_OUT"); env && *env) return env;
  return cfg.out_dir;
}

namespace detail {

inline std::size_t worker_count() {
  if (const char* env = std::getenv("FEWLENS_WORKERS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<std::size_t>(v);
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 4 : hc;
}

// Static partitioning; result slots are indexed by i so output order is
// schedule-independent. First worker exception is rethrown after join.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(workers);
  std::mutex error_mutex;
  std::exception_ptr first_error;
  std::atomic<bool> failed{false};
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = n * w / workers;
    const std::size_t hi = n * (w + 1) / workers;
    threads.emplace_back([&, lo, hi] {
      for (std::size_t i = lo; i < hi && !failed.load(); ++i) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          failed.store(true);
          return;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline std::string ratio_key(double r) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), r);
  return std::string(buf, res.ptr);
}

inline std::string sanitize_filename(const std::string& s) {
  std::string out;
  for (char c : s) {
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' ||
            c == '_' || c == '.')
               ? c
               : '_';
  }
  return out.empty() ? "_" : out;
}

inline std::string utc_now_iso8601() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[80];  // roomy enough that worst-case %d expansions cannot truncate
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec);
  return buf;
}

inline std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

inline Attribution explain_one(const Predictor& predictor,
                               const ExplanationSettings& settings,
                               const std::string& doc_id,
                               std::span<const int> ids,
                               const Vocabulary& vocab, int cls, double prob,
                               std::uint64_t seed) {
  if (settings.method == "shapley-sampled") {
    return sampling_shapley(predictor, doc_id, ids, vocab, cls,
                            settings.samples, seed);
  }
  if (settings.method == "shapley-exact") {
    return exact_shapley(predictor, doc_id, ids, vocab, cls);
  }
  if (settings.method == "integrated-gradients") {
    return integrated_gradients(predictor, doc_id, ids, vocab, cls,
                                settings.steps);
  }
  if (settings.method == "attention") {
    return attention_explanation(predictor, doc_id, ids, vocab);
  }
  if (settings.method == "occlusion") {
    return occlusion(predictor, doc_id, ids, vocab, cls);
  }
  if (settings.method == "random") {
    return random_attribution(doc_id, ids, vocab, seed, cls, prob);
  }
  throw std::invalid_argument("unknown explanation method: " + settings.method);
}

}  // namespace detail

// k auto rule: long-document corpora get k=10, short ones k=6.
inline int auto_k(const LabeledCorpus& train, const Vocabulary& vocab,
                  int max_len) {
  if (train.documents.empty()) return 6;
  std::size_t total = 0;
  for (const auto& doc : train.documents) {
    total += encode(doc, vocab, max_len).size();
  }
  const double avg =
      static_cast<double>(total) / static_cast<double>(train.size());
  return avg >= 100.0 ? 10 : 6;
}

struct DatasetCellResult {
  std::string dataset;
  EvalResult eval;     // full test split
  BiasReading bias;    // prediction counts vs data counts
  double aopc = 0.0;   // explanation subset, configured method
  std::vector<LmiDistribution> lmi;             // per label, explanation pool
  std::vector<std::optional<double>> kld_ori;   // per label
  std::vector<std::optional<double>> kld_data;  // per label
};

struct CellResult {
  double ratio = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::size_t subsample_docs = 0;
  TrainStats train_stats;                  // zeroed for r=0
  std::vector<DatasetCellResult> datasets;
  std::vector<LmiDistribution> data_lmi;   // per label, subsample token pool (r>0)
};

struct DiagnosticsReport {
  std::string model_name;
  std::vector<std::string> labels;
  std::vector<std::string> dataset_names;
  std::vector<std::vector<std::int64_t>> data_counts;  // per dataset
  std::vector<std::size_t> explanation_examples;       // per dataset
  std::vector<double> ratios;
  std::vector<std::uint64_t> seeds;
  int k = 0;
  double epsilon = 1e-9;
  Vocabulary vocab;
  std::vector<CellResult> cells;  // ratio-major, seed-minor
  nlohmann::ordered_json config_echo;
  std::string config_hash;

  const CellResult* cell(double ratio, std::uint64_t seed) const {
    for (const auto& c : cells) {
      if (c.ratio == ratio && c.seed == seed) return &c;
    }
    return nullptr;
  }
};

namespace detail {

struct PreparedDataset {
  std::string name;
  LabeledCorpus corpus;
  std::vector<IdSeq> encoded;               // full split
  std::vector<std::int64_t> data_counts;    // full split gold labels
};

// Everything about one (ratio, seed) checkpoint evaluated against one test
// split. `subset` indexes into the prepared dataset.
inline DatasetCellResult compute_dataset_cell(
    const Predictor& predictor, const PreparedDataset& data,
    const std::vector<std::size_t>& subset, const Vocabulary& vocab,
    const ExperimentConfig& cfg, int k, std::uint64_t attr_seed,
    std::vector<Attribution>* attributions_out) {
  DatasetCellResult out;
  out.dataset = data.name;
  out.eval = evaluate(predictor, data.corpus, vocab, cfg.train_options.max_len);
  out.bias = prediction_bias(out.eval.prediction_counts, data.data_counts);

  const int C = predictor.num_classes();
  std::vector<Attribution> attrs(subset.size());
  parallel_for(subset.size(), [&](std::size_t i) {
    const auto& doc = data.corpus.documents[subset[i]];
    const IdSeq& ids = data.encoded[subset[i]];
    const auto probs = predictor.predict_proba(ids);
    int pred = 0;
    for (int c = 1; c < C; ++c) {
      if (probs[c] > probs[pred]) pred = c;
    }
    attrs[i] = explain_one(predictor, cfg.explanation, doc.id, ids, vocab,
                           pred, probs[pred], derive_seed(attr_seed, doc.id));
  });

  std::vector<AopcExample> examples;
  examples.reserve(subset.size());
  for (std::size_t i = 0; i < subset.size(); ++i) {
    examples.push_back(AopcExample{data.encoded[subset[i]],
                                   attrs[i].explained_class, attrs[i]});
  }
  out.aopc = aopc(predictor, examples, cfg.U);

  const auto pool =
      pool_model_features(attrs, static_cast<std::size_t>(k),
                          static_cast<int>(data.corpus.labels.size()));
  out.lmi.reserve(data.corpus.labels.size());
  for (int label = 0; label < static_cast<int>(data.corpus.labels.size());
       ++label) {
    out.lmi.push_back(lmi_distribution(pool, vocab, label));
  }
  out.kld_ori.assign(data.corpus.labels.size(), std::nullopt);
  out.kld_data.assign(data.corpus.labels.size(), std::nullopt);
  if (attributions_out) *attributions_out = std::move(attrs);
  return out;
}

}  // namespace detail

// Runs the full sweep. When out_dir is non-empty, intermediates (vocab,
// checkpoints, attribution dumps) are persisted as the sweep progresses;
// pass "" to compute without touching the filesystem.
inline DiagnosticsReport run_experiment(const ExperimentConfig& cfg,
                                        const std::string& out_dir = "") {
  validate_config(cfg);

  LabeledCorpus train_corpus = load_jsonl(cfg.train_path, cfg.schema);
  train_corpus.split_name = "train";
  if (train_corpus.num_classes() < 2) {
    throw std::runtime_error(
        "train split defines fewer than 2 labels; cannot fit a classifier");
  }
  SchemaMapping test_schema = cfg.schema;
  test_schema.labels = train_corpus.labels;  // test splits may not invent labels
  LabeledCorpus test_in = load_jsonl(cfg.test_in_path, test_schema);
  test_in.split_name = "test_in";
  LabeledCorpus test_out = load_jsonl(cfg.test_out_path, test_schema);
  test_out.split_name = "test_out";
  if (test_in.documents.empty() || test_out.documents.empty()) {
    throw std::runtime_error("test splits must contain at least one document");
  }

  const Vocabulary vocab = build_vocabulary(train_corpus);
  const int C = train_corpus.num_classes();
  const int k =
      cfg.k > 0 ? cfg.k : auto_k(train_corpus, vocab, cfg.train_options.max_len);

  std::vector<detail::PreparedDataset> datasets(2);
  datasets[0].name = "test_in";
  datasets[0].corpus = std::move(test_in);
  datasets[1].name = "test_out";
  datasets[1].corpus = std::move(test_out);
  for (auto& d : datasets) {
    d.encoded.reserve(d.corpus.size());
    for (const auto& doc : d.corpus.documents) {
      d.encoded.push_back(encode(doc, vocab, cfg.train_options.max_len));
    }
    d.data_counts = label_counts(d.corpus);
  }

  DiagnosticsReport report;
  report.model_name = model_kind_name(cfg.model);
  report.labels = train_corpus.labels;
  for (const auto& d : datasets) {
    report.dataset_names.push_back(d.name);
    report.data_counts.push_back(d.data_counts);
  }
  report.ratios = cfg.ratios;
  report.seeds = cfg.seeds;
  report.k = k;
  report.epsilon = cfg.epsilon;
  report.vocab = vocab;
  report.config_echo = cfg.raw;
  report.config_hash = detail::hex64(fnv1a64(cfg.raw.dump()));

  const bool persist = !out_dir.empty();
  std::filesystem::path out_path(out_dir);
  if (persist) {
    std::filesystem::create_directories(out_path / "checkpoints");
    std::filesystem::create_directories(out_path / "attributions");
    save_vocabulary(vocab, (out_path / "vocab.json").string());
  }

  const bool zero_in_ratios =
      std::find(cfg.ratios.begin(), cfg.ratios.end(), 0.0) != cfg.ratios.end();

  // Explanation subsets: one per (seed, dataset), shared across ratios.
  std::vector<std::vector<std::vector<std::size_t>>> subsets(cfg.seeds.size());
  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    subsets[si].resize(datasets.size());
    for (std::size_t di = 0; di < datasets.size(); ++di) {
      auto rng = make_rng(cfg.seeds[si], "explain:" + datasets[di].name);
      const std::size_t want =
          std::min(static_cast<std::size_t>(cfg.sample_size),
                   datasets[di].corpus.size());
      subsets[si][di] = sample_indices(rng, datasets[di].corpus.size(), want);
    }
  }
  report.explanation_examples.resize(datasets.size());
  for (std::size_t di = 0; di < datasets.size(); ++di) {
    report.explanation_examples[di] = subsets[0][di].size();
  }

  // Per-seed computation; cells keyed by (ratio index, seed index).
  std::vector<std::vector<CellResult>> grid(
      cfg.ratios.size(), std::vector<CellResult>(cfg.seeds.size()));
  std::vector<CellResult> zero_cells(cfg.seeds.size());  // r=0 references

  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    const std::uint64_t seed = cfg.seeds[si];
    Checkpoint init;
    bool init_ok = true;
    std::string init_error;
    try {
      init = init_model(cfg.model, vocab, C, cfg.embed_dim,
                        derive_seed(seed, "init"));
    } catch (const std::exception& e) {
      init_ok = false;
      init_error = e.what();
    }

    auto compute_cell = [&](double ratio) {
      CellResult cell;
      cell.ratio = ratio;
      cell.seed = seed;
      if (!init_ok) {
        cell.error = init_error;
        return cell;
      }
      const std::string key = detail::ratio_key(ratio);
      try {
        Checkpoint ckpt;
        LabeledCorpus sub;
        if (ratio == 0.0) {
          ckpt = init;
        } else {
          sub = subsample(train_corpus, ratio,
                          derive_seed(seed, "subsample:r=" + key));
          cell.subsample_docs = sub.size();
          TrainOptions opts = cfg.train_options;
          opts.ratio = ratio;
          ckpt = fewlens::train(init, sub, vocab, opts,
                                derive_seed(seed, "train:r=" + key));
          cell.train_stats = ckpt.stats;
        }
        BuiltinPredictor predictor(ckpt);
        for (std::size_t di = 0; di < datasets.size(); ++di) {
          const std::uint64_t attr_seed = derive_seed(
              seed, "attr:" + datasets[di].name + ":r=" + key);
          std::vector<Attribution> attrs;
          cell.datasets.push_back(detail::compute_dataset_cell(
              predictor, datasets[di], subsets[si][di], vocab, cfg, k,
              attr_seed, persist ? &attrs : nullptr));
          const bool in_config_ratios =
              ratio != 0.0 ||
              zero_in_ratios;  // reference-only r=0 cells are not persisted
          if (persist && in_config_ratios) {
            const auto file =
                out_path / "attributions" /
                (datasets[di].name + "_r" + key + "_seed" +
                 std::to_string(seed) + ".jsonl");
            std::ofstream jout(file, std::ios::binary);
            if (!jout) {
              throw std::runtime_error("cannot write " + file.string());
            }
            for (const auto& attr : attrs) {
              append_attribution_jsonl(jout, attr);
            }
          }
        }
        if (ratio != 0.0) {
          cell.data_lmi.reserve(static_cast<std::size_t>(C));
          const auto data_pool = pool_data_features(sub, vocab);
          for (int label = 0; label < C; ++label) {
            cell.data_lmi.push_back(lmi_distribution(data_pool, vocab, label));
          }
        }
        if (persist && (ratio != 0.0 || zero_in_ratios)) {
          const auto file = out_path / "checkpoints" /
                            (report.model_name + "_r" + key + "_seed" +
                             std::to_string(seed) + ".ckpt");
          save_checkpoint(ckpt, file.string());
        }
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
        cell.datasets.clear();
        cell.data_lmi.clear();
      }
      return cell;
    };

    zero_cells[si] = compute_cell(0.0);
    for (std::size_t ri = 0; ri < cfg.ratios.size(); ++ri) {
      if (cfg.ratios[ri] == 0.0) {
        grid[ri][si] = zero_cells[si];
      } else {
        grid[ri][si] = compute_cell(cfg.ratios[ri]);
      }
    }

    // Drift bookkeeping: subject = the cell's explanation distribution,
    // Ori reference = this seed's r=0 distribution, Data reference = the
    // cell's training-subsample distribution. The reference is the first KLD
    // argument (divergence FROM the reference TO the checkpoint). Labels with
    // a degenerate subject or reference are skipped (undefined there).
    for (std::size_t ri = 0; ri < cfg.ratios.size(); ++ri) {
      CellResult& cell = grid[ri][si];
      if (!cell.ok || cell.ratio == 0.0) continue;
      for (std::size_t di = 0; di < cell.datasets.size(); ++di) {
        auto& dcell = cell.datasets[di];
        for (int label = 0; label < C; ++label) {
          const auto& subject = dcell.lmi[static_cast<std::size_t>(label)];
          if (subject.degenerate) continue;
          if (zero_cells[si].ok) {
            const auto& ref =
                zero_cells[si].datasets[di].lmi[static_cast<std::size_t>(label)];
            if (!ref.degenerate) {
              dcell.kld_ori[static_cast<std::size_t>(label)] =
                  kld(ref, subject, cfg.epsilon);
            }
          }
          const auto& data_ref = cell.data_lmi[static_cast<std::size_t>(label)];
          if (!data_ref.degenerate) {
            dcell.kld_data[static_cast<std::size_t>(label)] =
                kld(data_ref, subject, cfg.epsilon);
          }
        }
      }
    }
  }

  report.cells.reserve(cfg.ratios.size() * cfg.seeds.size());
  for (std::size_t ri = 0; ri < cfg.ratios.size(); ++ri) {
    for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
      report.cells.push_back(std::move(grid[ri][si]));
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Aggregation and emission.

namespace detail {

struct RatioAggregate {
  double ratio = 0.0;
  std::size_t cells_ok = 0;
  double accuracy = 0.0;
  double pb = 0.0;
  double aopc = 0.0;
  std::vector<std::optional<double>> kld_ori;   // per label, mean of present
  std::vector<std::optional<double>> kld_data;  // per label
  std::vector<LmiDistribution> mean_lmi;        // per label
  std::vector<std::vector<std::int64_t>> confusion_sum;
};

inline LmiDistribution mean_distribution(
    const std::vector<const LmiDistribution*>& dists, int label,
    std::size_t vocab_size) {
  LmiDistribution out;
  out.label = label;
  out.values.assign(vocab_size, 0.0);
  std::size_t count = 0;
  for (const auto* d : dists) {
    if (d->degenerate) continue;
    for (std::size_t i = 0; i < vocab_size; ++i) out.values[i] += d->values[i];
    ++count;
  }
  if (count == 0) {
    out.degenerate = true;
    return out;
  }
  for (double& v : out.values) v /= static_cast<double>(count);
  out.normalized = true;
  return out;
}

inline std::vector<std::string> top_tokens(const LmiDistribution& dist,
                                           const Vocabulary& vocab,
                                           std::size_t k) {
  if (dist.degenerate) return {};
  std::vector<std::size_t> order(dist.values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&dist](std::size_t a, std::size_t b) {
    if (dist.values[a] != dist.values[b]) return dist.values[a] > dist.values[b];
    return a < b;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < order.size() && out.size() < k; ++i) {
    if (dist.values[order[i]] <= 0.0) break;
    out.push_back(vocab.token(static_cast<int>(order[i])));
  }
  return out;
}

// Mean over the OK cells of one ratio for one dataset.
inline RatioAggregate aggregate_ratio(const DiagnosticsReport& report,
                                      double ratio, std::size_t dataset_index) {
  const int C = static_cast<int>(report.labels.size());
  RatioAggregate agg;
  agg.ratio = ratio;
  agg.kld_ori.assign(static_cast<std::size_t>(C), std::nullopt);
  agg.kld_data.assign(static_cast<std::size_t>(C), std::nullopt);
  agg.confusion_sum.assign(static_cast<std::size_t>(C),
                           std::vector<std::int64_t>(C, 0));

  std::vector<double> ori_sum(static_cast<std::size_t>(C), 0.0);
  std::vector<std::size_t> ori_n(static_cast<std::size_t>(C), 0);
  std::vector<double> data_sum(static_cast<std::size_t>(C), 0.0);
  std::vector<std::size_t> data_n(static_cast<std::size_t>(C), 0);
  std::vector<std::vector<const LmiDistribution*>> dists(
      static_cast<std::size_t>(C));

  for (const auto& cell : report.cells) {
    if (cell.ratio != ratio || !cell.ok) continue;
    const auto& dcell = cell.datasets[dataset_index];
    agg.accuracy += dcell.eval.accuracy;
    agg.pb += dcell.bias.pb;
    agg.aopc += dcell.aopc;
    for (int t = 0; t < C; ++t) {
      for (int p = 0; p < C; ++p) {
        agg.confusion_sum[t][p] += dcell.eval.confusion[t][p];
      }
    }
    for (int label = 0; label < C; ++label) {
      const auto li = static_cast<std::size_t>(label);
      dists[li].push_back(&dcell.lmi[li]);
      if (dcell.kld_ori[li]) {
        ori_sum[li] += *dcell.kld_ori[li];
        ++ori_n[li];
      }
      if (dcell.kld_data[li]) {
        data_sum[li] += *dcell.kld_data[li];
        ++data_n[li];
      }
    }
    ++agg.cells_ok;
  }
  if (agg.cells_ok > 0) {
    agg.accuracy /= static_cast<double>(agg.cells_ok);
    agg.pb /= static_cast<double>(agg.cells_ok);
    agg.aopc /= static_cast<double>(agg.cells_ok);
  }
  for (int label = 0; label < C; ++label) {
    const auto li = static_cast<std::size_t>(label);
    if (ori_n[li] > 0) agg.kld_ori[li] = ori_sum[li] / static_cast<double>(ori_n[li]);
    if (data_n[li] > 0) {
      agg.kld_data[li] = data_sum[li] / static_cast<double>(data_n[li]);
    }
    agg.mean_lmi.push_back(mean_distribution(
        dists[li], label, static_cast<std::size_t>(report.vocab.size())));
  }
  return agg;
}

}  // namespace detail

// Writes report.json, preds.csv, kld.csv, top_features.txt, failures.json,
// and the SVG plots. Output bytes are deterministic except the generated_at
// timestamp inside report.json.
inline void emit_report(const DiagnosticsReport& report,
                        const std::string& out_dir) {
  if (report.ratios.empty() || report.cells.empty()) {
    throw std::invalid_argument("emit_report: report has no ratio cells");
  }
  const std::filesystem::path out_path(out_dir);
  std::filesystem::create_directories(out_path / "plots");
  const int C = static_cast<int>(report.labels.size());

  // Aggregates per (dataset, ratio).
  std::vector<std::vector<detail::RatioAggregate>> aggregates(
      report.dataset_names.size());
  for (std::size_t di = 0; di < report.dataset_names.size(); ++di) {
    for (double ratio : report.ratios) {
      aggregates[di].push_back(detail::aggregate_ratio(report, ratio, di));
    }
  }

  // report.json
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["generated_at"] = detail::utc_now_iso8601();
  j["model"] = report.model_name;
  j["config_hash"] = report.config_hash;
  j["config"] = report.config_echo;
  j["labels"] = report.labels;
  j["datasets"] = report.dataset_names;
  j["data_counts"] = nlohmann::ordered_json::object();
  for (std::size_t di = 0; di < report.dataset_names.size(); ++di) {
    j["data_counts"][report.dataset_names[di]] = report.data_counts[di];
  }
  j["ratios"] = report.ratios;
  j["seeds"] = report.seeds;
  j["k"] = report.k;
  j["epsilon"] = report.epsilon;
  j["explanation_examples"] = nlohmann::ordered_json::object();
  for (std::size_t di = 0; di < report.dataset_names.size(); ++di) {
    j["explanation_examples"][report.dataset_names[di]] =
        report.explanation_examples[di];
  }

  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& cell : report.cells) {
    nlohmann::ordered_json cj;
    cj["ratio"] = cell.ratio;
    cj["seed"] = cell.seed;
    cj["status"] = cell.ok ? "ok" : "failed";
    if (!cell.ok) cj["error"] = cell.error;
    cj["subsample_docs"] = cell.subsample_docs;
    if (cell.ratio != 0.0 && cell.ok) {
      cj["train"] = {{"epochs", cell.train_stats.epochs},
                     {"final_loss", cell.train_stats.final_loss}};
    } else {
      cj["train"] = nullptr;
    }
    cj["datasets"] = nlohmann::ordered_json::object();
    if (cell.ok) {
      for (const auto& dcell : cell.datasets) {
        nlohmann::ordered_json dj;
        dj["accuracy"] = dcell.eval.accuracy;
        dj["pb"] = dcell.bias.pb;
        dj["majority_label"] = report.labels[dcell.bias.majority];
        dj["minority_label"] = report.labels[dcell.bias.minority];
        dj["prediction_counts"] = dcell.eval.prediction_counts;
        dj["confusion"] = dcell.eval.confusion;
        dj["aopc"] = dcell.aopc;
        if (cell.ratio != 0.0) {
          nlohmann::ordered_json kj = nlohmann::ordered_json::object();
          for (int label = 0; label < C; ++label) {
            const auto li = static_cast<std::size_t>(label);
            nlohmann::ordered_json lj;
            lj["ori"] = dcell.kld_ori[li] ? nlohmann::ordered_json(*dcell.kld_ori[li])
                                          : nlohmann::ordered_json(nullptr);
            lj["data"] = dcell.kld_data[li]
                             ? nlohmann::ordered_json(*dcell.kld_data[li])
                             : nlohmann::ordered_json(nullptr);
            kj[report.labels[li]] = lj;
          }
          dj["kld"] = kj;
        } else {
          dj["kld"] = nullptr;
        }
        cj["datasets"][dcell.dataset] = dj;
      }
    }
    j["cells"].push_back(cj);
  }

  j["aggregates"] = nlohmann::ordered_json::object();
  for (std::size_t di = 0; di < report.dataset_names.size(); ++di) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& agg : aggregates[di]) {
      nlohmann::ordered_json rj;
      rj["ratio"] = agg.ratio;
      rj["cells_ok"] = agg.cells_ok;
      rj["accuracy"] = agg.accuracy;
      rj["pb"] = agg.pb;
      rj["aopc"] = agg.aopc;
      nlohmann::ordered_json kj = nlohmann::ordered_json::object();
      nlohmann::ordered_json tj = nlohmann::ordered_json::object();
      for (int label = 0; label < C; ++label) {
        const auto li = static_cast<std::size_t>(label);
        nlohmann::ordered_json lj;
        lj["ori"] = agg.kld_ori[li] ? nlohmann::ordered_json(*agg.kld_ori[li])
                                    : nlohmann::ordered_json(nullptr);
        lj["data"] = agg.kld_data[li]
                         ? nlohmann::ordered_json(*agg.kld_data[li])
                         : nlohmann::ordered_json(nullptr);
        kj[report.labels[li]] = lj;
        tj[report.labels[li]] = detail::top_tokens(agg.mean_lmi[li],
                                                   report.vocab, 5);
      }
      rj["kld"] = kj;
      rj["top_features"] = tj;
      rows.push_back(rj);
    }
    j["aggregates"][report.dataset_names[di]] = rows;
  }

  write_text_file((out_path / "report.json").string(), j.dump(2) + "\n");

  // preds.csv
  {
    std::string csv = "model,r,dataset,acc,pb\n";
    for (std::size_t ri = 0; ri < report.ratios.size(); ++ri) {
      for (std::size_t di = 0; di < report.dataset_names.size(); ++di) {
        const auto& agg = aggregates[di][ri];
        csv += report.model_name + "," + detail::ratio_key(agg.ratio) + "," +
               report.dataset_names[di] + ",";
        if (agg.cells_ok > 0) {
          csv += detail::fmt_fixed(agg.accuracy, 6) + "," +
                 detail::fmt_fixed(agg.pb, 6);
        } else {
          csv += "-,-";
        }
        csv += "\n";
      }
    }
    write_text_file((out_path / "preds.csv").string(), csv);
  }

  // kld.csv
  {
    std::string csv = "model,r,dataset,label,kld_ori,kld_data\n";
    for (std::size_t ri = 0; ri < report.ratios.size(); ++ri) {
      for (std::size_t di = 0; di < report.dataset_names.size(); ++di) {
        const auto& agg = aggregates[di][ri];
        for (int label = 0; label < C; ++label) {
          const auto li = static_cast<std::size_t>(label);
          csv += report.model_name + "," + detail::ratio_key(agg.ratio) + "," +
                 report.dataset_names[di] + "," + report.labels[li] + ",";
          csv += agg.kld_ori[li] ? detail::fmt_fixed(*agg.kld_ori[li], 6) : "-";
          csv += ",";
          csv += agg.kld_data[li] ? detail::fmt_fixed(*agg.kld_data[li], 6) : "-";
          csv += "\n";
        }
      }
    }
    write_text_file((out_path / "kld.csv").string(), csv);
  }

  // top_features.txt: top-10 tokens per label per ratio.
  {
    std::string txt;
    for (std::size_t di = 0; di < report.dataset_names.size(); ++di) {
      txt += "dataset: " + report.dataset_names[di] + "\n";
      for (std::size_t ri = 0; ri < report.ratios.size(); ++ri) {
        const auto& agg = aggregates[di][ri];
        txt += "  r=" + detail::ratio_key(agg.ratio) + "\n";
        for (int label = 0; label < C; ++label) {
          const auto li = static_cast<std::size_t>(label);
          txt += "    " + report.labels[li] + ":";
          const auto tokens =
              detail::top_tokens(agg.mean_lmi[li], report.vocab, 10);
          if (tokens.empty()) {
            txt += " (no features)";
          } else {
            for (const auto& t : tokens) txt += " " + t;
          }
          txt += "\n";
        }
      }
      txt += "\n";
    }
    write_text_file((out_path / "top_features.txt").string(), txt);
  }

  // failures.json (always written; empty list when the sweep was clean).
  {
    nlohmann::ordered_json fj;
    fj["failures"] = nlohmann::ordered_json::array();
    for (const auto& cell : report.cells) {
      if (cell.ok) continue;
      fj["failures"].push_back({{"ratio", cell.ratio},
                                {"seed", cell.seed},
                                {"error", cell.error}});
    }
    write_text_file((out_path / "failures.json").string(), fj.dump(2) + "\n");
  }

  // Plots: per (dataset, ratio) one confusion grid and one LMI scatter per
  // label (degenerate distributions are skipped).
  for (std::size_t di = 0; di < report.dataset_names.size(); ++di) {
    const auto& name = report.dataset_names[di];
    for (std::size_t ri = 0; ri < report.ratios.size(); ++ri) {
      const auto& agg = aggregates[di][ri];
      const std::string key = detail::ratio_key(agg.ratio);
      if (agg.cells_ok > 0) {
        plot_confusion(agg.confusion_sum, report.labels,
                       (out_path / "plots" /
                        ("confusion_" + detail::sanitize_filename(name) + "_r" +
                         detail::sanitize_filename(key) + ".svg"))
                           .string(),
                       name + " confusion, r=" + key);
      }
      for (int label = 0; label < C; ++label) {
        const auto li = static_cast<std::size_t>(label);
        if (agg.mean_lmi[li].degenerate) continue;
        plot_lmi(agg.mean_lmi[li], report.vocab, 5,
                 (out_path / "plots" /
                  ("lmi_" + detail::sanitize_filename(name) + "_r" +
                   detail::sanitize_filename(key) + "_" +
                   detail::sanitize_filename(report.labels[li]) + ".svg"))
                     .string(),
                 name + " " + report.labels[li] + " LMI, r=" + key);
      }
    }
  }
}

}  // namespace fewlens
