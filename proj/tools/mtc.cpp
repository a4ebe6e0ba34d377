// Command-line front end: stage-by-stage or end-to-end runs over a corpus.

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtc/mtc.hpp"

namespace fs = std::filesystem;
using namespace mtc;

namespace {

struct Settings {
  std::string config_file;
  std::map<std::string, std::string> overrides;
};

// --config plus one flag per config key.
void add_settings(CLI::App* cmd, Settings& s) {
  cmd->add_option("--config", s.config_file, "Flat key = value config file")->check(CLI::ExistingFile);
  for (const auto& key : config_keys())
    cmd->add_option_function<std::string>("--" + key, [&s, key](const std::string& v) { s.overrides[key] = v; },
                                          "Override config key '" + key + "'");
}

RunConfig resolve(const Settings& s) {
  RunConfig c = s.config_file.empty() ? RunConfig{} : load_config(s.config_file);
  for (const auto& [k, v] : s.overrides) apply_setting(c, k, v);
  c.validate();
  return c;
}

fs::path need_output_dir(const RunConfig& c) {
  if (c.output_dir.empty()) throw std::invalid_argument("output_dir is required for this command");
  fs::create_directories(c.output_dir);
  return c.output_dir;
}

template <typename F>
auto staged(const std::string& stage, F&& f) {
  try {
    return f();
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(stage, e.what());
  }
}

// Corpus and split exactly as a full run would build them.
struct Prepared {
  RunConfig cfg;
  LoadedCorpus corpus;
  CorpusSplit split;
};

Prepared prepare(const RunConfig& base) {
  Prepared p;
  p.cfg = base.with_stage_seeds();
  p.corpus = load_for_run(base);
  p.split = staged("split", [&] {
    if (p.corpus.vocab.labels.size() == 0) throw std::invalid_argument("corpus has no labels");
    return take_k_per_class(p.corpus.documents, p.corpus.vocab.labels.size(), p.cfg.k_per_class, p.cfg.split_seed());
  });
  return p;
}

EmbeddingSpace load_space(const fs::path& dir) {
  return staged("load", [&] { return load_embeddings((dir / "embeddings.bin").string()); });
}

std::vector<std::size_t> parse_values(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& v : detail::split_list(s)) out.push_back(detail::parse_number<std::size_t>("values", v));
  if (out.empty()) throw std::invalid_argument("--values needs at least one value");
  return out;
}

int cmd_ingest(const RunConfig& c) {
  const auto dir = need_output_dir(c);
  const auto p = prepare(c);
  write_text(dir / "vocab.jsonl", vocab_jsonl(p.corpus.vocab, c.schema));
  write_text(dir / "split.json", split_json(p.split, p.corpus.documents));
  std::cout << "documents " << p.corpus.documents.size() << "\nwords " << p.corpus.vocab.words.size() << "\nlabels "
            << p.corpus.vocab.labels.size() << "\nlabeled " << p.split.num_labeled() << "\ntest " << p.split.test.size()
            << "\nunlabeled " << p.split.unlabeled.size() << '\n';
  return 0;
}

int cmd_embed(const RunConfig& c) {
  const auto dir = need_output_dir(c);
  const auto p = prepare(c);
  const auto space = staged("embed", [&] {
    return train_embeddings(p.corpus.documents, p.split, p.corpus.vocab, p.cfg.schema, p.cfg.embed,
                            [](std::size_t epoch, const EmbeddingSpace&) { std::cerr << "epoch " << epoch + 1 << '\n'; });
  });
  save_embeddings(space, (dir / "embeddings.bin").string());
  save_index(space, make_index(p.corpus.vocab, p.corpus.documents), (dir / "embeddings.index.jsonl").string());
  write_text(dir / "nearest.txt", nearest_report(space, p.corpus.vocab.labels.names(), p.corpus.vocab.words.names(), c.nearest_k));
  return 0;
}

int cmd_generate(const RunConfig& c) {
  const auto dir = need_output_dir(c);
  const auto p = prepare(c);
  const auto space = load_space(dir);
  const auto synthetic = staged("generate", [&] {
    const auto lengths = LengthModel::from_corpus(p.corpus.documents, p.split);
    return generate_all(space, p.corpus.vocab.labels.size(), p.cfg.gen, lengths, p.cfg.schema);
  });
  write_text(dir / "synthetic.jsonl", synthetic_jsonl(synthetic, c.schema, p.corpus.vocab));
  return 0;
}

int cmd_train(const RunConfig& c) {
  const auto dir = need_output_dir(c);
  const auto p = prepare(c);
  const auto space = load_space(dir);
  const auto model = staged("train", [&] {
    const auto synth_path = dir / "synthetic.jsonl";
    const auto synthetic = fs::exists(synth_path) ? read_synthetic(synth_path.string(), c.schema, p.corpus.vocab)
                                                  : std::vector<std::vector<SyntheticDocument>>{};
    std::vector<std::size_t> real;
    for (const auto& l : p.split.labeled) real.insert(real.end(), l.begin(), l.end());
    return train_classifier(space, p.corpus.documents, real, synthetic, p.corpus.vocab.labels.size(),
                            c.schema.global_fields.size(), p.cfg.train);
  });
  save_model(model, (dir / "model.bin").string());
  return 0;
}

int cmd_evaluate(const RunConfig& c) {
  const auto dir = need_output_dir(c);
  const auto p = prepare(c);
  const auto space = load_space(dir);
  const auto model = staged("load", [&] { return load_model((dir / "model.bin").string()); });
  const std::size_t nglobal = c.schema.global_fields.size();
  const auto preds = staged("predict", [&] { return predict(model, space, p.corpus.documents, p.split.test, nglobal); });
  auto report = staged("evaluate", [&] {
    std::vector<std::size_t> pred, gold;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      pred.push_back(preds[i].label);
      gold.push_back(*p.corpus.documents[p.split.test[i]].label);
    }
    return evaluate(pred, gold, p.corpus.vocab.labels.size());
  });
  report.metadata = run_metadata(c, p.corpus.documents.size(), p.split, p.corpus.vocab.labels.size());
  const auto& names = p.corpus.vocab.labels.names();
  write_text(dir / "predictions.jsonl", predictions_jsonl(preds, p.split.test, p.corpus.documents, p.corpus.vocab));
  write_text(dir / "report.txt", report_text(report, names));
  write_text(dir / "report.jsonl", report_jsonl(report, names));
  std::cout << report_text(report, names);
  return 0;
}

int cmd_run(const RunConfig& c) {
  const auto report = run_pipeline(c);
  std::cout << report_text(report, load_for_run(c).vocab.labels.names());
  return 0;
}

int cmd_sweep(const RunConfig& c, const std::string& axis, const std::string& values) {
  const auto table = sweep(c, parse_axis(axis), parse_values(values));
  if (!c.output_dir.empty()) {
    fs::create_directories(c.output_dir);
    write_text(fs::path(c.output_dir) / "sweep.jsonl", sweep_jsonl(table));
    write_text(fs::path(c.output_dir) / "sweep.txt", sweep_text(table));
  }
  std::cout << sweep_text(table);
  return 0;
}

int cmd_nearest(const RunConfig& c) {
  if (c.output_dir.empty()) throw std::invalid_argument("output_dir is required for this command");
  const auto space = load_space(c.output_dir);
  const auto corpus = load_for_run(c);
  std::cout << nearest_report(space, corpus.vocab.labels.names(), corpus.vocab.words.names(), c.nearest_k);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metadata-aware text classification with embedding-driven training data generation"};
  app.require_subcommand(1);

  Settings settings;
  std::map<std::string, CLI::App*> stages;
  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"ingest", "Load and validate a corpus; write the vocabulary and the split"},
           {"embed", "Learn the joint embedding space"},
           {"generate", "Generate synthetic training documents from saved embeddings"},
           {"train", "Train the classifier on real and synthetic documents"},
           {"evaluate", "Predict the test documents and write the report"},
           {"run", "Run every stage end to end"},
           {"nearest", "Print the words closest to each label"}}) {
    stages[name] = app.add_subcommand(name, help);
    add_settings(stages[name], settings);
  }

  auto* sweep_cmd = app.add_subcommand("sweep", "Repeat runs over one axis and report mean +- std");
  add_settings(sweep_cmd, settings);
  std::string axis = "samples_per_class", values;
  sweep_cmd->add_option("--axis", axis, "samples_per_class, k_real or embedding_dim");
  sweep_cmd->add_option("--values", values, "Comma-separated values")->required();

  auto* corpus_cmd = app.add_subcommand("make-corpus", "Write a synthetic corpus with planted class structure");
  PlantedConfig pc;
  std::string out;
  corpus_cmd->add_option("--out", out, "Output JSONL path")->required();
  corpus_cmd->add_option("--num_classes", pc.num_classes);
  corpus_cmd->add_option("--docs_per_class", pc.docs_per_class);
  corpus_cmd->add_option("--vocab_per_class", pc.vocab_per_class);
  corpus_cmd->add_option("--shared_vocab", pc.shared_vocab);
  corpus_cmd->add_option("--users_per_class", pc.users_per_class);
  corpus_cmd->add_option("--tags_per_class", pc.tags_per_class);
  corpus_cmd->add_option("--topics_per_class", pc.topics_per_class);
  corpus_cmd->add_option("--noise_rate", pc.noise_rate);
  corpus_cmd->add_option("--min_length", pc.min_length);
  corpus_cmd->add_option("--max_length", pc.max_length);
  corpus_cmd->add_option("--tag_rate", pc.tag_rate);
  corpus_cmd->add_option("--user_noise", pc.user_noise);
  corpus_cmd->add_option("--seed", pc.seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (corpus_cmd->parsed()) {
      write_planted_corpus(pc, out);
      return 0;
    }
    const RunConfig cfg = staged("config", [&] { return resolve(settings); });
    if (sweep_cmd->parsed()) return cmd_sweep(cfg, axis, values);
    if (stages["ingest"]->parsed()) return cmd_ingest(cfg);
    if (stages["embed"]->parsed()) return cmd_embed(cfg);
    if (stages["generate"]->parsed()) return cmd_generate(cfg);
    if (stages["train"]->parsed()) return cmd_train(cfg);
    if (stages["evaluate"]->parsed()) return cmd_evaluate(cfg);
    if (stages["run"]->parsed()) return cmd_run(cfg);
    if (stages["nearest"]->parsed()) return cmd_nearest(cfg);
  } catch (const std::exception& e) {
    std::cerr << "mtc: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
