// fewlens command-line front end.
//
//   run         full ratio-sweep experiment from a config file
//   train       train a single (ratio, seed) checkpoint
//   explain     attribute a dataset against a checkpoint
//   metrics     accuracy / PB / AOPC / top-LMI for a checkpoint
//   plot        render a confusion grid or LMI scatter to SVG
//   serve-check validate an external predictor endpoint
//   gen-fixture emit the synthetic spurious-token corpus + config
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fewlens/fewlens.hpp"

namespace {

fewlens::ExperimentConfig load_config_or_die(const std::string& path) {
  return fewlens::load_experiment_config(path);  // throws with the path inside
}

std::vector<fewlens::Attribution> read_attribution_file(
    const std::string& path, const fewlens::Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open attribution file: " + path);
  }
  std::vector<fewlens::Attribution> attrs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    attrs.push_back(fewlens::parse_attribution_jsonl(line, vocab));
  }
  return attrs;
}

int run_command(const std::string& config_path, const std::string& cli_out,
                const std::vector<std::uint64_t>& seed_override) {
  fewlens::ExperimentConfig cfg = load_config_or_die(config_path);
  if (!seed_override.empty()) cfg.seeds = seed_override;
  fewlens::validate_config(cfg);
  const std::string out = fewlens::resolve_out_dir(cfg, cli_out);
  const auto report = fewlens::run_experiment(cfg, out);
  fewlens::emit_report(report, out);
  std::size_t failed = 0;
  for (const auto& cell : report.cells) failed += cell.ok ? 0 : 1;
  std::cout << "wrote " << out << " (" << report.cells.size() << " cells, "
            << failed << " failed)\n";
  return 0;
}

int train_command(const std::string& config_path, double ratio,
                  std::uint64_t seed, const std::string& out,
                  const std::string& vocab_out) {
  fewlens::ExperimentConfig cfg = load_config_or_die(config_path);
  fewlens::LabeledCorpus corpus = fewlens::load_jsonl(cfg.train_path, cfg.schema);
  corpus.split_name = "train";
  const auto vocab = fewlens::build_vocabulary(corpus);
  const auto init =
      fewlens::init_model(cfg.model, vocab, corpus.num_classes(),
                          cfg.embed_dim, fewlens::derive_seed(seed, "init"));
  fewlens::Checkpoint ckpt;
  if (ratio == 0.0) {
    ckpt = init;
  } else {
    const std::string key = fewlens::detail::ratio_key(ratio);
    const auto sub = fewlens::subsample(
        corpus, ratio, fewlens::derive_seed(seed, "subsample:r=" + key));
    fewlens::TrainOptions opts = cfg.train_options;
    opts.ratio = ratio;
    ckpt = fewlens::train(init, sub, vocab, opts,
                          fewlens::derive_seed(seed, "train:r=" + key));
  }
  fewlens::save_checkpoint(ckpt, out);
  if (!vocab_out.empty()) fewlens::save_vocabulary(vocab, vocab_out);
  std::cout << "wrote " << out;
  if (ckpt.stats.epochs > 0) {
    std::cout << " (final loss " << ckpt.stats.final_loss << ")";
  }
  std::cout << "\n";
  return 0;
}

int explain_command(const std::string& ckpt_path, const std::string& vocab_path,
                    const std::string& input_path, const std::string& method,
                    int samples, int steps, std::uint64_t seed,
                    const std::string& out) {
  const auto vocab = fewlens::load_vocabulary(vocab_path);
  fewlens::BuiltinPredictor predictor(fewlens::load_checkpoint(ckpt_path));
  fewlens::SchemaMapping schema;
  schema.text = "text";
  const auto corpus = fewlens::load_jsonl(input_path, schema);
  fewlens::ExplanationSettings settings{method, samples, steps};

  std::ofstream jout(out, std::ios::binary);
  if (!jout) throw std::runtime_error("cannot write " + out);
  for (const auto& doc : corpus.documents) {
    const auto ids = fewlens::encode(doc, vocab);
    const auto probs = predictor.predict_proba(ids);
    int pred = 0;
    for (int c = 1; c < predictor.num_classes(); ++c) {
      if (probs[c] > probs[pred]) pred = c;
    }
    const auto attr = fewlens::detail::explain_one(
        predictor, settings, doc.id, ids, vocab, pred, probs[pred],
        fewlens::derive_seed(seed, doc.id));
    fewlens::append_attribution_jsonl(jout, attr);
  }
  std::cout << "wrote " << out << " (" << corpus.size() << " attributions)\n";
  return 0;
}

int metrics_command(const std::string& ckpt_path, const std::string& vocab_path,
                    const std::string& input_path,
                    const std::string& attr_path, int k, int U) {
  const auto vocab = fewlens::load_vocabulary(vocab_path);
  fewlens::BuiltinPredictor predictor(fewlens::load_checkpoint(ckpt_path));
  fewlens::SchemaMapping schema;
  schema.text = "text";
  const auto corpus = fewlens::load_jsonl(input_path, schema);
  const auto eval = fewlens::evaluate(predictor, corpus, vocab);
  const auto bias =
      fewlens::prediction_bias(eval.prediction_counts, fewlens::label_counts(corpus));

  nlohmann::ordered_json j;
  j["accuracy"] = eval.accuracy;
  j["pb"] = bias.pb;
  j["majority_label"] = corpus.labels[static_cast<std::size_t>(bias.majority)];
  j["prediction_counts"] = eval.prediction_counts;
  j["confusion"] = eval.confusion;

  if (!attr_path.empty()) {
    const auto attrs = read_attribution_file(attr_path, vocab);
    std::vector<fewlens::AopcExample> examples;
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
      by_id[corpus.documents[i].id] = i;
    }
    for (const auto& attr : attrs) {
      auto it = by_id.find(attr.doc_id);
      if (it == by_id.end()) {
        throw std::runtime_error("attribution doc_id `" + attr.doc_id +
                                 "` not present in the dataset");
      }
      examples.push_back(
          fewlens::AopcExample{fewlens::encode(corpus.documents[it->second], vocab),
                               attr.explained_class, attr});
    }
    j["aopc"] = fewlens::aopc(predictor, examples, U);
    const auto pool = fewlens::pool_model_features(
        attrs, static_cast<std::size_t>(k), corpus.num_classes());
    nlohmann::ordered_json tops = nlohmann::ordered_json::object();
    for (int label = 0; label < corpus.num_classes(); ++label) {
      const auto dist = fewlens::lmi_distribution(pool, vocab, label);
      tops[corpus.labels[static_cast<std::size_t>(label)]] =
          fewlens::detail::top_tokens(dist, vocab, 10);
    }
    j["top_features"] = tops;
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int plot_command(const std::string& kind, const std::string& ckpt_path,
                 const std::string& vocab_path, const std::string& input_path,
                 const std::string& attr_path, const std::string& label,
                 int k, const std::string& out) {
  const auto vocab = fewlens::load_vocabulary(vocab_path);
  if (kind == "confusion") {
    fewlens::BuiltinPredictor predictor(fewlens::load_checkpoint(ckpt_path));
    fewlens::SchemaMapping schema;
    schema.text = "text";
    const auto corpus = fewlens::load_jsonl(input_path, schema);
    const auto eval = fewlens::evaluate(predictor, corpus, vocab);
    fewlens::plot_confusion(eval.confusion, corpus.labels, out);
  } else if (kind == "lmi") {
    if (attr_path.empty() || label.empty()) {
      throw std::runtime_error(
          "plot lmi requires --attributions and --label");
    }
    fewlens::SchemaMapping schema;
    schema.text = "text";
    const auto corpus = fewlens::load_jsonl(input_path, schema);
    const int label_id = corpus.label_index(label);
    const auto attrs = read_attribution_file(attr_path, vocab);
    const auto pool = fewlens::pool_model_features(
        attrs, static_cast<std::size_t>(k), corpus.num_classes());
    const auto dist = fewlens::lmi_distribution(pool, vocab, label_id);
    fewlens::plot_lmi(dist, vocab, 5, out, label + " LMI");
  } else {
    throw std::runtime_error("plot kind must be `confusion` or `lmi`");
  }
  std::cout << "wrote " << out << "\n";
  return 0;
}

int serve_check_command(const std::string& endpoint) {
  const auto result = fewlens::serve_check(endpoint);
  nlohmann::ordered_json j;
  j["classes"] = result.classes;
  j["capabilities"] = result.capabilities;
  j["probe_probs"] = result.probe_probs;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int gen_fixture_command(const std::string& dir, std::uint64_t seed,
                        int train_docs, int test_docs) {
  fewlens::FixtureOptions opt;
  opt.seed = seed;
  opt.train_docs = train_docs;
  opt.test_docs = test_docs;
  fewlens::write_fixture(dir, opt);
  std::cout << "wrote " << dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot fine-tuning prediction-behavior diagnostics"};
  app.require_subcommand(1);

  // run
  std::string run_config, run_out;
  std::vector<std::uint64_t> run_seeds;
  auto* run = app.add_subcommand("run", "run the full experiment sweep");
  run->add_option("--config", run_config, "experiment config JSON")->required();
  run->add_option("--out", run_out, "output directory (overrides config/env)");
  run->add_option("--seed", run_seeds, "override the config seed list");

  // train
  std::string train_config, train_out, train_vocab_out;
  double train_ratio = 0.0;
  std::uint64_t train_seed = 1;
  auto* tr = app.add_subcommand("train", "train one checkpoint");
  tr->add_option("--config", train_config, "experiment config JSON")->required();
  tr->add_option("--ratio", train_ratio, "subsample ratio in [0,1]")->required();
  tr->add_option("--seed", train_seed, "seed")->required();
  tr->add_option("--out", train_out, "checkpoint output path")->required();
  tr->add_option("--vocab-out", train_vocab_out, "also save the vocabulary here");

  // explain
  std::string ex_ckpt, ex_vocab, ex_input, ex_method = "shapley-sampled", ex_out;
  int ex_samples = 200, ex_steps = 50;
  std::uint64_t ex_seed = 1;
  auto* ex = app.add_subcommand("explain", "attribute a dataset");
  ex->add_option("--checkpoint", ex_ckpt, "checkpoint file")->required();
  ex->add_option("--vocab", ex_vocab, "vocabulary JSON")->required();
  ex->add_option("--input", ex_input, "dataset JSONL ({\"text\",\"label\"})")->required();
  ex->add_option("--method", ex_method, "attribution method");
  ex->add_option("--samples", ex_samples, "sampled-Shapley permutations");
  ex->add_option("--steps", ex_steps, "integrated-gradients steps");
  ex->add_option("--seed", ex_seed, "seed");
  ex->add_option("--out", ex_out, "attribution JSONL output")->required();

  // metrics
  std::string me_ckpt, me_vocab, me_input, me_attrs;
  int me_k = 6, me_U = 10;
  auto* me = app.add_subcommand("metrics", "accuracy / PB / AOPC / top-LMI");
  me->add_option("--checkpoint", me_ckpt, "checkpoint file")->required();
  me->add_option("--vocab", me_vocab, "vocabulary JSON")->required();
  me->add_option("--input", me_input, "dataset JSONL")->required();
  me->add_option("--attributions", me_attrs, "attribution JSONL (enables AOPC/LMI)");
  me->add_option("--k", me_k, "top-k features pooled per explanation");
  me->add_option("--U", me_U, "AOPC masking depth");

  // plot
  std::string pl_kind, pl_ckpt, pl_vocab, pl_input, pl_attrs, pl_label, pl_out;
  int pl_k = 6;
  auto* pl = app.add_subcommand("plot", "render an SVG plot");
  pl->add_option("--kind", pl_kind, "confusion | lmi")->required();
  pl->add_option("--checkpoint", pl_ckpt, "checkpoint file (confusion)");
  pl->add_option("--vocab", pl_vocab, "vocabulary JSON")->required();
  pl->add_option("--input", pl_input, "dataset JSONL")->required();
  pl->add_option("--attributions", pl_attrs, "attribution JSONL (lmi)");
  pl->add_option("--label", pl_label, "label name (lmi)");
  pl->add_option("--k", pl_k, "top-k features pooled per explanation (lmi)");
  pl->add_option("--out", pl_out, "SVG output path")->required();

  // serve-check
  std::string sc_endpoint;
  auto* sc = app.add_subcommand("serve-check", "validate an external endpoint");
  sc->add_option("--endpoint", sc_endpoint,
                 "shell command or tcp:host:port")->required();

  // gen-fixture
  std::string gf_dir;
  std::uint64_t gf_seed = 7;
  int gf_train = 2000, gf_test = 1000;
  auto* gf = app.add_subcommand("gen-fixture", "emit the synthetic corpus");
  gf->add_option("--out", gf_dir, "output directory")->required();
  gf->add_option("--seed", gf_seed, "fixture seed");
  gf->add_option("--train-docs", gf_train, "train split size");
  gf->add_option("--test-docs", gf_test, "test split sizes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the usage message to stderr
    return 1;
  }

  try {
    if (run->parsed()) return run_command(run_config, run_out, run_seeds);
    if (tr->parsed()) {
      return train_command(train_config, train_ratio, train_seed, train_out,
                           train_vocab_out);
    }
    if (ex->parsed()) {
      return explain_command(ex_ckpt, ex_vocab, ex_input, ex_method, ex_samples,
                             ex_steps, ex_seed, ex_out);
    }
    if (me->parsed()) {
      return metrics_command(me_ckpt, me_vocab, me_input, me_attrs, me_k, me_U);
    }
    if (pl->parsed()) {
      return plot_command(pl_kind, pl_ckpt, pl_vocab, pl_input, pl_attrs,
                          pl_label, pl_k, pl_out);
    }
    if (sc->parsed()) return serve_check_command(sc_endpoint);
    if (gf->parsed()) {
      return gen_fixture_command(gf_dir, gf_seed, gf_train, gf_test);
    }
  } catch (const fewlens::ProtocolError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
