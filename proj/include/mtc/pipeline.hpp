#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtc/classifier.hpp"
#include "mtc/corpus.hpp"
#include "mtc/embedding.hpp"
#include "mtc/evaluate.hpp"
#include "mtc/generator.hpp"
#include "mtc/random.hpp"

namespace mtc {

class PipelineError : public std::runtime_error {
 public:
  PipelineError(const std::string& stage, const std::string& what)
      : std::runtime_error("[" + stage + "] " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct RunConfig {
  std::string corpus;
  std::string output_dir;
  MetadataSchema schema;
  std::uint64_t min_count = 2;
  std::size_t k_per_class = 10;
  std::uint64_t seed = 1;
  std::size_t repetitions = 5;
  std::size_t nearest_k = 5;
  EmbedConfig embed;
  GenConfig gen;
  TrainConfig train;

  void validate() const {
    schema.validate();
    embed.validate();
    gen.validate();
    train.validate();
    if (repetitions == 0) throw std::invalid_argument("repetitions must be >= 1");
  }

  // Stage seeds all derive from the root seed.
  RunConfig with_stage_seeds() const {
    RunConfig c = *this;
    c.embed.seed = derive_seed(seed, "embed");
    c.gen.seed = derive_seed(seed, "generate");
    c.train.seed = derive_seed(seed, "classifier");
    return c;
  }
  std::uint64_t split_seed() const { return derive_seed(seed, "split"); }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
  }
  return out;
}

inline std::string join_list(const std::vector<std::string>& xs) {
  std::string out;
  for (const auto& x : xs) out += (out.empty() ? "" : ",") + x;
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config key '" + key + "': expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !in.eof()) throw std::invalid_argument("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

}  // namespace detail

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "corpus",        "output_dir",     "global_fields", "local_fields",    "min_count",       "seed",
      "k_per_class",   "repetitions",    "nearest_k",     "dim",             "window",          "negatives",
      "embed_lr",      "embed_lr_floor", "embed_epochs",  "noise_power",     "threads",         "use_context",
      "disabled_fields", "samples_per_class", "kappa",    "tau",             "batch_size",      "cnn_lr",
      "cnn_epochs",    "cnn_init_scale", "filter_widths", "feature_maps"};
  return keys;
}

inline void apply_setting(RunConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_number;
  if (key == "corpus") c.corpus = v;
  else if (key == "output_dir") c.output_dir = v;
  else if (key == "global_fields") c.schema.global_fields = detail::split_list(v);
  else if (key == "local_fields") c.schema.local_fields = detail::split_list(v);
  else if (key == "min_count") c.min_count = parse_number<std::uint64_t>(key, v);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "k_per_class") c.k_per_class = parse_number<std::size_t>(key, v);
  else if (key == "repetitions") c.repetitions = parse_number<std::size_t>(key, v);
  else if (key == "nearest_k") c.nearest_k = parse_number<std::size_t>(key, v);
  else if (key == "dim") c.embed.dim = parse_number<std::size_t>(key, v);
  else if (key == "window") c.embed.window = parse_number<std::size_t>(key, v);
  else if (key == "negatives") c.embed.negatives = parse_number<std::size_t>(key, v);
  else if (key == "embed_lr") c.embed.learning_rate = parse_number<double>(key, v);
  else if (key == "embed_lr_floor") c.embed.learning_rate_floor = parse_number<double>(key, v);
  else if (key == "embed_epochs") c.embed.epochs = parse_number<std::size_t>(key, v);
  else if (key == "noise_power") c.embed.noise_power = parse_number<double>(key, v);
  else if (key == "threads") c.embed.threads = parse_number<std::size_t>(key, v);
  else if (key == "use_context") c.embed.use_context = detail::parse_bool(key, v);
  else if (key == "disabled_fields") c.embed.disabled_fields = detail::split_list(v);
  else if (key == "samples_per_class") c.gen.samples_per_class = parse_number<std::size_t>(key, v);
  else if (key == "kappa") c.gen.kappa = parse_number<double>(key, v);
  else if (key == "tau") c.gen.tau = parse_number<std::size_t>(key, v);
  else if (key == "batch_size") c.train.batch_size = parse_number<std::size_t>(key, v);
  else if (key == "cnn_lr") c.train.learning_rate = parse_number<double>(key, v);
  else if (key == "cnn_epochs") c.train.epochs = parse_number<std::size_t>(key, v);
  else if (key == "cnn_init_scale") c.train.init_scale = parse_number<double>(key, v);
  else if (key == "filter_widths") {
    c.train.arch.widths.clear();
    for (const auto& w : detail::split_list(v)) c.train.arch.widths.push_back(parse_number<std::size_t>(key, w));
  } else if (key == "feature_maps") c.train.arch.maps_per_width = parse_number<std::size_t>(key, v);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

/// Flat `key = value` lines; `#` starts a comment.
inline void apply_config_text(RunConfig& c, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    auto trim = [](std::string s) {
      const auto l = s.find_first_not_of(" \t\r");
      const auto r = s.find_last_not_of(" \t\r");
      return l == std::string::npos ? std::string() : s.substr(l, r - l + 1);
    };
    apply_setting(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig c;
  apply_config_text(c, buf.str());
  return c;
}

inline std::map<std::string, std::string> config_summary(const RunConfig& c) {
  std::ostringstream widths;
  for (std::size_t i = 0; i < c.train.arch.widths.size(); ++i) widths << (i ? "," : "") << c.train.arch.widths[i];
  return {
      {"global_fields", detail::join_list(c.schema.global_fields)},
      {"local_fields", detail::join_list(c.schema.local_fields)},
      {"min_count", std::to_string(c.min_count)},
      {"seed", std::to_string(c.seed)},
      {"k_per_class", std::to_string(c.k_per_class)},
      {"dim", std::to_string(c.embed.dim)},
      {"window", std::to_string(c.embed.window)},
      {"negatives", std::to_string(c.embed.negatives)},
      {"embed_lr", fixed(c.embed.learning_rate, 6)},
      {"embed_lr_floor", fixed(c.embed.learning_rate_floor, 6)},
      {"embed_epochs", std::to_string(c.embed.epochs)},
      {"noise_power", fixed(c.embed.noise_power, 4)},
      {"use_context", c.embed.use_context ? "true" : "false"},
      {"disabled_fields", detail::join_list(c.embed.disabled_fields)},
      {"samples_per_class", std::to_string(c.gen.samples_per_class)},
      {"kappa", fixed(c.gen.kappa, 4)},
      {"tau", std::to_string(c.gen.tau)},
      {"batch_size", std::to_string(c.train.batch_size)},
      {"cnn_lr", fixed(c.train.learning_rate, 6)},
      {"cnn_epochs", std::to_string(c.train.epochs)},
      {"filter_widths", widths.str()},
      {"feature_maps", std::to_string(c.train.arch.maps_per_width)},
  };
}

/// Top-k words by cosine to each label vector, one line per label.
inline std::string nearest_report(const EmbeddingSpace& space, const std::vector<std::string>& label_names,
                                  const std::vector<std::string>& word_names, std::size_t k) {
  std::ostringstream out;
  for (std::size_t l = 0; l < space.table(kLabelTable).rows(); ++l) {
    out << (l < label_names.size() ? label_names[l] : std::to_string(l));
    for (const auto& n : top_similar(space, Element{static_cast<std::uint32_t>(kLabelTable), static_cast<std::uint32_t>(l)}, k, kWordTable))
      out << '\t' << word_names.at(n.row) << ' ' << fixed(n.cosine, 4);
    out << '\n';
  }
  return out.str();
}

/// Config summary plus the derived stage seeds and document counts.
inline std::map<std::string, std::string> run_metadata(const RunConfig& base, std::size_t num_documents,
                                                       const CorpusSplit& split, std::size_t num_labels) {
  const RunConfig cfg = base.with_stage_seeds();
  auto m = config_summary(base);
  m["seed.embed"] = std::to_string(cfg.embed.seed);
  m["seed.generate"] = std::to_string(cfg.gen.seed);
  m["seed.classifier"] = std::to_string(cfg.train.seed);
  m["seed.split"] = std::to_string(cfg.split_seed());
  m["documents.total"] = std::to_string(num_documents);
  m["documents.train"] = std::to_string(split.num_labeled());
  m["documents.synthetic"] = std::to_string(num_labels * cfg.gen.samples_per_class);
  return m;
}

/// Everything one pipeline run produces.
struct RunResult {
  CorpusSplit split;
  EmbeddingSpace space;
  std::vector<std::vector<SyntheticDocument>> synthetic;
  CnnModel model;
  std::vector<Prediction> predictions;
  EvalReport report;
  std::map<std::string, double> seconds;
};

template <typename F>
auto run_stage(const std::string& stage, std::map<std::string, double>& seconds, F&& f) {
  const auto start = std::chrono::steady_clock::now();
  try {
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      seconds[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    } else {
      auto r = f();
      seconds[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      return r;
    }
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(stage, e.what());
  }
}

/// split -> embed -> generate -> train -> predict -> evaluate on a loaded
/// corpus. A precomputed space may be passed when only later stages vary.
inline RunResult run_loaded(const RunConfig& base, const LoadedCorpus& corpus,
                            const EmbeddingSpace* precomputed_space = nullptr) {
  const RunConfig cfg = base.with_stage_seeds();
  RunResult r;
  const auto& docs = corpus.documents;
  const auto& vocab = corpus.vocab;
  const std::size_t num_labels = vocab.labels.size();
  const std::size_t nglobal = cfg.schema.global_fields.size();

  r.split = run_stage("split", r.seconds, [&] {
    if (num_labels == 0) throw std::invalid_argument("corpus has no labels");
    return take_k_per_class(docs, num_labels, cfg.k_per_class, cfg.split_seed());
  });
  r.space = run_stage("embed", r.seconds, [&] {
    return precomputed_space ? *precomputed_space : train_embeddings(docs, r.split, vocab, cfg.schema, cfg.embed);
  });
  r.synthetic = run_stage("generate", r.seconds, [&] {
    const auto lengths = LengthModel::from_corpus(docs, r.split);
    return generate_all(r.space, num_labels, cfg.gen, lengths, cfg.schema);
  });
  r.model = run_stage("train", r.seconds, [&] {
    std::vector<std::size_t> real;
    for (const auto& l : r.split.labeled) real.insert(real.end(), l.begin(), l.end());
    return train_classifier(r.space, docs, real, r.synthetic, num_labels, nglobal, cfg.train);
  });
  r.predictions = run_stage("predict", r.seconds, [&] {
    return predict(r.model, r.space, docs, r.split.test, nglobal);
  });
  r.report = run_stage("evaluate", r.seconds, [&] {
    std::vector<std::size_t> pred, gold;
    for (std::size_t i = 0; i < r.split.test.size(); ++i) {
      pred.push_back(r.predictions[i].label);
      gold.push_back(*docs[r.split.test[i]].label);
    }
    auto rep = evaluate(pred, gold, num_labels);
    rep.metadata = run_metadata(base, docs.size(), r.split, num_labels);
    return rep;
  });
  return r;
}

inline LoadedCorpus load_for_run(const RunConfig& cfg) {
  try {
    cfg.validate();
    return load_corpus(cfg.corpus, cfg.schema, cfg.min_count);
  } catch (const std::exception& e) {
    throw PipelineError("ingest", e.what());
  }
}

// ---------------------------------------------------------------------------
// Artifact writers. Every file except timings.txt is a pure function of the
// inputs and seeds.

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

inline std::string split_json(const CorpusSplit& split, const std::vector<Document>& docs) {
  auto ids = [&](const std::vector<std::size_t>& xs) {
    auto arr = nlohmann::json::array();
    for (auto i : xs) arr.push_back(docs.at(i).id);
    return arr;
  };
  nlohmann::json j;
  j["labeled"] = nlohmann::json::array();
  for (const auto& l : split.labeled) j["labeled"].push_back(ids(l));
  j["unlabeled"] = ids(split.unlabeled);
  j["test"] = ids(split.test);
  return j.dump() + "\n";
}

inline std::string synthetic_jsonl(const std::vector<std::vector<SyntheticDocument>>& synthetic,
                                   const MetadataSchema& schema, const Vocabulary& vocab) {
  std::ostringstream out;
  for (const auto& cls : synthetic)
    for (std::size_t i = 0; i < cls.size(); ++i) out << to_record(cls[i], i, schema, vocab).dump() << '\n';
  return out.str();
}

inline std::string predictions_jsonl(const std::vector<Prediction>& preds, std::span<const std::size_t> ids,
                                     const std::vector<Document>& docs, const Vocabulary& vocab) {
  std::ostringstream out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    nlohmann::json probs = nlohmann::json::object();
    for (std::size_t l = 0; l < preds[i].probs.size(); ++l) probs[vocab.labels.name(l)] = preds[i].probs[l];
    out << nlohmann::json{{"id", docs.at(ids[i]).id},
                          {"predicted_label", vocab.labels.name(preds[i].label)},
                          {"probs", probs}}
               .dump()
        << '\n';
  }
  return out.str();
}

inline std::string vocab_jsonl(const Vocabulary& vocab, const MetadataSchema& schema) {
  std::ostringstream out;
  auto dump = [&](const std::string& ns, const Namespace& n) {
    for (std::size_t i = 0; i < n.size(); ++i)
      out << nlohmann::json{{"namespace", ns}, {"index", i}, {"name", n.name(i)}, {"count", n.count(i)}}.dump() << '\n';
  };
  dump("word", vocab.words);
  dump("label", vocab.labels);
  for (std::size_t f = 0; f < vocab.fields.size(); ++f) dump(schema.field_name(f), vocab.fields[f]);
  return out.str();
}

/// Reads synthetic records written by synthetic_jsonl, keeping repeated local
/// instances. Document vectors are not persisted.
inline std::vector<std::vector<SyntheticDocument>> read_synthetic(const std::string& path, const MetadataSchema& schema,
                                                                  const Vocabulary& vocab) {
  std::vector<std::vector<SyntheticDocument>> out(vocab.labels.size());
  for (const auto& rec : read_records(path, schema)) {
    if (!rec.label) throw CorpusError("line " + std::to_string(rec.line) + ": synthetic record without label");
    auto l = vocab.labels.find(*rec.label);
    if (!l) throw CorpusError("line " + std::to_string(rec.line) + ": unknown label '" + *rec.label + "'");
    SyntheticDocument d;
    d.label = *l;
    for (const auto& t : rec.tokens)
      if (auto w = vocab.words.find(t)) d.tokens.push_back(*w);
    d.local_meta.resize(schema.local_fields.size());
    for (std::size_t lf = 0; lf < rec.local_meta.size(); ++lf)
      for (const auto& v : rec.local_meta[lf])
        if (auto i = vocab.fields.at(schema.global_fields.size() + lf).find(v)) d.local_meta[lf].push_back(*i);
    out[*l].push_back(std::move(d));
  }
  return out;
}

inline void write_run_artifacts(const RunConfig& cfg, const LoadedCorpus& corpus, const RunResult& r,
                                const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& vocab = corpus.vocab;
  write_text(dir / "vocab.jsonl", vocab_jsonl(vocab, cfg.schema));
  write_text(dir / "split.json", split_json(r.split, corpus.documents));
  save_embeddings(r.space, (dir / "embeddings.bin").string());
  save_index(r.space, make_index(vocab, corpus.documents), (dir / "embeddings.index.jsonl").string());
  write_text(dir / "synthetic.jsonl", synthetic_jsonl(r.synthetic, cfg.schema, vocab));
  save_model(r.model, (dir / "model.bin").string());
  write_text(dir / "predictions.jsonl", predictions_jsonl(r.predictions, r.split.test, corpus.documents, vocab));
  write_text(dir / "report.txt", report_text(r.report, vocab.labels.names()));
  write_text(dir / "report.jsonl", report_jsonl(r.report, vocab.labels.names()));
  write_text(dir / "nearest.txt", nearest_report(r.space, vocab.labels.names(), vocab.words.names(), cfg.nearest_k));
  std::ostringstream t;
  for (const auto& [stage, s] : r.seconds) t << stage << ' ' << fixed(s, 3) << '\n';
  write_text(dir / "timings.txt", t.str());
}

/// ingest -> split -> embed -> generate -> train -> predict -> evaluate.
/// Artifacts go to cfg.output_dir when it is set.
inline EvalReport run_pipeline(const RunConfig& cfg) {
  const auto corpus = load_for_run(cfg);
  auto result = run_loaded(cfg, corpus);
  if (!cfg.output_dir.empty()) {
    try {
      write_run_artifacts(cfg, corpus, result, cfg.output_dir);
    } catch (const std::exception& e) {
      throw PipelineError("persist", e.what());
    }
  }
  return result.report;
}

// ---------------------------------------------------------------------------

enum class SweepAxis { samples_per_class, k_real, embedding_dim };

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "samples_per_class") return SweepAxis::samples_per_class;
  if (s == "k_real") return SweepAxis::k_real;
  if (s == "embedding_dim") return SweepAxis::embedding_dim;
  throw std::invalid_argument("unknown sweep axis '" + s + "'");
}

inline std::string axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::samples_per_class: return "samples_per_class";
    case SweepAxis::k_real: return "k_real";
    case SweepAxis::embedding_dim: return "embedding_dim";
  }
  return "?";
}

struct SweepRow {
  std::size_t value = 0;
  std::size_t repetition = 0;
  std::uint64_t seed = 0;
  EvalReport report;
};

struct SweepTable {
  SweepAxis axis = SweepAxis::samples_per_class;
  std::vector<std::size_t> values;
  std::vector<SweepRow> rows;

  MeanStd micro(std::size_t value) const { return collect(value, &EvalReport::micro_f1); }
  MeanStd macro(std::size_t value) const { return collect(value, &EvalReport::macro_f1); }

 private:
  MeanStd collect(std::size_t value, double EvalReport::*field) const {
    std::vector<double> xs;
    for (const auto& r : rows)
      if (r.value == value) xs.push_back(r.report.*field);
    return mean_std(xs);
  }
};

inline std::uint64_t repetition_seed(std::uint64_t root, std::size_t rep) { return rep == 0 ? root : derive_seed(root, rep); }

inline RunConfig with_axis_value(RunConfig c, SweepAxis axis, std::size_t v) {
  switch (axis) {
    case SweepAxis::samples_per_class: c.gen.samples_per_class = v; break;
    case SweepAxis::k_real: c.k_per_class = v; break;
    case SweepAxis::embedding_dim: c.embed.dim = v; break;
  }
  return c;
}

/// One run per (repetition, value). Repetition r uses the same root seed for
/// every value; along the synthetic-count axis the embedding is shared.
inline SweepTable sweep_loaded(const RunConfig& cfg, const LoadedCorpus& corpus, SweepAxis axis,
                               const std::vector<std::size_t>& values) {
  SweepTable table;
  table.axis = axis;
  table.values = values;
  for (std::size_t rep = 0; rep < cfg.repetitions; ++rep) {
    std::optional<EmbeddingSpace> shared;
    for (std::size_t v : values) {
      RunConfig c = with_axis_value(cfg, axis, v);
      c.seed = repetition_seed(cfg.seed, rep);
      auto r = run_loaded(c, corpus, shared ? &*shared : nullptr);
      if (axis == SweepAxis::samples_per_class && !shared) shared = std::move(r.space);
      table.rows.push_back({v, rep, c.seed, std::move(r.report)});
    }
  }
  return table;
}

inline SweepTable sweep(const RunConfig& cfg, SweepAxis axis, const std::vector<std::size_t>& values) {
  return sweep_loaded(cfg, load_for_run(cfg), axis, values);
}

inline std::string sweep_jsonl(const SweepTable& t) {
  std::ostringstream out;
  for (const auto& r : t.rows)
    out << nlohmann::json{{"record", "run"}, {"axis", axis_name(t.axis)}, {"value", r.value},
                          {"repetition", r.repetition}, {"seed", r.seed}, {"micro_f1", r.report.micro_f1},
                          {"macro_f1", r.report.macro_f1}}
               .dump()
        << '\n';
  for (std::size_t v : t.values) {
    const auto mi = t.micro(v);
    const auto ma = t.macro(v);
    out << nlohmann::json{{"record", "summary"}, {"axis", axis_name(t.axis)}, {"value", v},
                          {"micro_f1_mean", mi.mean}, {"micro_f1_std", mi.std},
                          {"macro_f1_mean", ma.mean}, {"macro_f1_std", ma.std}}
               .dump()
        << '\n';
  }
  return out.str();
}

inline std::string sweep_text(const SweepTable& t) {
  std::ostringstream out;
  out << axis_name(t.axis) << "\tmicro_f1 (mean +- std)\tmacro_f1 (mean +- std)\n";
  for (std::size_t v : t.values) {
    const auto mi = t.micro(v);
    const auto ma = t.macro(v);
    out << v << '\t' << fixed(mi.mean, 4) << " +- " << fixed(mi.std, 4) << '\t' << fixed(ma.mean, 4) << " +- "
        << fixed(ma.std, 4) << '\n';
  }
  return out.str();
}

}  // namespace mtc
