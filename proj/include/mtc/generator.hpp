#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtc/corpus.hpp"
#include "mtc/embedding.hpp"
#include "mtc/random.hpp"
#include "mtc/vmf.hpp"

namespace mtc {

struct GenConfig {
  std::size_t samples_per_class = 100;
  double kappa = 50.0;
  std::size_t tau = 50;
  std::uint64_t seed = 1;

  void validate() const {
    if (tau < 1) throw std::invalid_argument("tau must be >= 1");
    if (!(kappa > 0.0)) throw std::invalid_argument("generation kappa must be > 0");
  }
};

struct SyntheticDocument {
  std::size_t label = 0;
  std::vector<double> doc_vector;
  std::vector<std::size_t> tokens;
  std::vector<std::vector<std::size_t>> local_meta;  // per local field, draw order
};

/// Top-tau rows of a table around a document vector and their softmax
/// weights restricted to that pool.
struct SoftmaxPool {
  std::vector<std::size_t> rows;
  std::vector<double> probs;
};

inline SoftmaxPool restricted_softmax_pool(const EmbeddingSpace& space, std::span<const double> doc_vector,
                                           std::size_t table, std::size_t tau) {
  if (space.table(table).empty()) throw std::invalid_argument("restricted_softmax_pool: empty table");
  const auto top = top_similar(space, doc_vector, tau, table);
  SoftmaxPool pool;
  const double hi = top.front().cosine;
  double z = 0.0;
  for (const auto& n : top) {
    pool.rows.push_back(n.row);
    pool.probs.push_back(std::exp(n.cosine - hi));
    z += pool.probs.back();
  }
  for (double& p : pool.probs) p /= z;
  return pool;
}

/// Empirical (token count, per-local-field instance count) tuples of the
/// real labeled documents, grouped by class.
class LengthModel {
 public:
  struct Shape {
    std::size_t tokens = 0;
    std::vector<std::size_t> local_counts;

    friend bool operator==(const Shape&, const Shape&) = default;
  };

  LengthModel() = default;

  // Classes with no labeled document carrying tokens fall back to the shape
  // distribution of the whole corpus.
  static LengthModel from_corpus(const std::vector<Document>& docs, const CorpusSplit& split) {
    LengthModel m;
    for (const auto& d : docs) m.fallback_.push_back(shape_of(d));
    m.per_class_.resize(split.labeled.size());
    for (std::size_t l = 0; l < split.labeled.size(); ++l) {
      bool has_tokens = false;
      for (std::size_t i : split.labeled[l]) {
        m.per_class_[l].push_back(shape_of(docs.at(i)));
        has_tokens = has_tokens || !docs[i].tokens.empty();
      }
      if (!has_tokens) m.per_class_[l].clear();
    }
    return m;
  }

  static LengthModel fixed(std::size_t num_labels, Shape shape) {
    LengthModel m;
    m.per_class_.assign(num_labels, std::vector<Shape>{shape});
    m.fallback_ = {shape};
    return m;
  }

  const Shape& draw(std::size_t label, Rng& rng) const {
    const auto& pool = label < per_class_.size() && !per_class_[label].empty() ? per_class_[label] : fallback_;
    if (pool.empty()) throw std::invalid_argument("length model has no shapes");
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    return pool[pick(rng)];
  }

 private:
  static Shape shape_of(const Document& d) {
    Shape s;
    s.tokens = d.tokens.size();
    for (const auto& f : d.local_meta) s.local_counts.push_back(f.size());
    return s;
  }

  std::vector<std::vector<Shape>> per_class_;
  std::vector<Shape> fallback_;
};

/// Synthesizes documents for one label: e_d ~ vMF(e_l, kappa), then words and
/// local instances drawn i.i.d. from their top-tau restricted softmax.
/// The generator seed is derived from (config.seed, label).
inline std::vector<SyntheticDocument> generate_for_class(const EmbeddingSpace& space, std::size_t label,
                                                         const GenConfig& config, const LengthModel& lengths,
                                                         const MetadataSchema& schema) {
  config.validate();
  std::vector<SyntheticDocument> out;
  if (config.samples_per_class == 0) return out;
  const auto mu = space.table(kLabelTable).row(label);
  vmf::Sampler sampler({{mu.begin(), mu.end()}, config.kappa}, derive_seed(config.seed, 2 * label));
  Rng rng(derive_seed(config.seed, 2 * label + 1));
  const std::size_t nglobal = schema.global_fields.size();

  out.reserve(config.samples_per_class);
  for (std::size_t s = 0; s < config.samples_per_class; ++s) {
    SyntheticDocument doc;
    doc.label = label;
    doc.doc_vector = sampler.sample();
    const auto& shape = lengths.draw(label, rng);
    if (shape.tokens > 0 && !space.table(kWordTable).empty()) {
      const auto pool = restricted_softmax_pool(space, doc.doc_vector, kWordTable, config.tau);
      std::discrete_distribution<std::size_t> pick(pool.probs.begin(), pool.probs.end());
      for (std::size_t i = 0; i < shape.tokens; ++i) doc.tokens.push_back(pool.rows[pick(rng)]);
    }
    doc.local_meta.resize(schema.local_fields.size());
    for (std::size_t lf = 0; lf < schema.local_fields.size(); ++lf) {
      const std::size_t m = lf < shape.local_counts.size() ? shape.local_counts[lf] : 0;
      const std::size_t table = field_table(nglobal + lf);
      if (m == 0 || space.table(table).empty()) continue;
      const auto pool = restricted_softmax_pool(space, doc.doc_vector, table, config.tau);
      std::discrete_distribution<std::size_t> pick(pool.probs.begin(), pool.probs.end());
      for (std::size_t i = 0; i < m; ++i) doc.local_meta[lf].push_back(pool.rows[pick(rng)]);
    }
    out.push_back(std::move(doc));
  }
  return out;
}

/// One list per label, in label order. Global metadata is never generated.
inline std::vector<std::vector<SyntheticDocument>> generate_all(const EmbeddingSpace& space, std::size_t num_labels,
                                                                const GenConfig& config, const LengthModel& lengths,
                                                                const MetadataSchema& schema) {
  std::vector<std::vector<SyntheticDocument>> out;
  for (std::size_t l = 0; l < num_labels; ++l) out.push_back(generate_for_class(space, l, config, lengths, schema));
  return out;
}

inline nlohmann::json to_record(const SyntheticDocument& d, std::size_t ordinal, const MetadataSchema& schema,
                                const Vocabulary& vocab) {
  nlohmann::json j;
  j["id"] = "synthetic-" + vocab.labels.name(d.label) + "-" + std::to_string(ordinal);
  std::string text;
  for (std::size_t t : d.tokens) {
    if (!text.empty()) text.push_back(' ');
    text += vocab.words.name(t);
  }
  j["text"] = text;
  j["label"] = vocab.labels.name(d.label);
  const std::size_t nglobal = schema.global_fields.size();
  for (std::size_t lf = 0; lf < schema.local_fields.size(); ++lf) {
    auto arr = nlohmann::json::array();
    for (std::size_t i : d.local_meta.at(lf)) arr.push_back(vocab.fields.at(nglobal + lf).name(i));
    j[schema.local_fields[lf]] = arr;
  }
  j["synthetic"] = true;
  return j;
}

}  // namespace mtc
