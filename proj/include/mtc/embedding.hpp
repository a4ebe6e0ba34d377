#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtc/corpus.hpp"
#include "mtc/matrix.hpp"
#include "mtc/random.hpp"

namespace mtc {

// Fixed table slots; metadata fields follow in schema order (globals first).
inline constexpr std::size_t kWordTable = 0;     // e_w, center role
inline constexpr std::size_t kContextTable = 1;  // e'_w, context role
inline constexpr std::size_t kDocTable = 2;
inline constexpr std::size_t kLabelTable = 3;
inline constexpr std::size_t kFirstFieldTable = 4;

inline constexpr std::size_t field_table(std::size_t field) { return kFirstFieldTable + field; }

struct Element {
  std::uint32_t table = 0;
  std::uint32_t row = 0;

  friend bool operator==(const Element&, const Element&) = default;
};

/// (context element, target element): the target is generated from the
/// context element. Negatives are drawn from the target's table.
struct Pair {
  Element source;
  Element target;

  friend bool operator==(const Pair&, const Pair&) = default;
};

struct EmbedConfig {
  std::size_t dim = 100;
  std::size_t window = 5;
  std::size_t negatives = 1;
  double learning_rate = 0.1;
  double learning_rate_floor = 1e-4;
  std::size_t epochs = 30;
  double noise_power = 0.75;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  bool use_context = true;
  std::vector<std::string> disabled_fields;  // ablations: fields ignored while embedding

  void validate() const {
    if (dim < 2) throw std::invalid_argument("embedding dim must be >= 2");
    if (window < 1) throw std::invalid_argument("context window must be >= 1");
    if (negatives < 1) throw std::invalid_argument("negatives per positive must be >= 1");
    if (threads < 1) throw std::invalid_argument("threads must be >= 1");
    if (!(learning_rate >= 0.0) || !(learning_rate_floor >= 0.0))
      throw std::invalid_argument("learning rates must be >= 0");
  }
};

/// Unit vectors for every element kind, all of dimension `dim`.
struct EmbeddingSpace {
  std::size_t dim = 0;
  std::vector<std::string> table_names;
  std::vector<Matrix> tables;

  Matrix& table(std::size_t t) { return tables.at(t); }
  const Matrix& table(std::size_t t) const { return tables.at(t); }

  std::span<double> vec(Element e) { return tables.at(e.table).row(e.row); }
  std::span<const double> vec(Element e) const { return tables.at(e.table).row(e.row); }

  std::optional<std::size_t> find_table(std::string_view name) const {
    for (std::size_t i = 0; i < table_names.size(); ++i)
      if (table_names[i] == name) return i;
    return std::nullopt;
  }

  double max_norm_deviation() const {
    double worst = 0.0;
    for (const auto& t : tables)
      for (std::size_t r = 0; r < t.rows(); ++r) worst = std::max(worst, std::abs(norm(t.row(r)) - 1.0));
    return worst;
  }

  void renormalize() {
    for (auto& t : tables)
      for (std::size_t r = 0; r < t.rows(); ++r) normalize(t.row(r));
  }

  friend bool operator==(const EmbeddingSpace&, const EmbeddingSpace&) = default;
};

inline std::vector<std::string> table_names_for(const MetadataSchema& schema) {
  std::vector<std::string> names{"word", "context", "doc", "label"};
  for (std::size_t f = 0; f < schema.num_fields(); ++f) names.push_back(schema.field_name(f));
  return names;
}

inline EmbeddingSpace init_embeddings(const Vocabulary& vocab, const MetadataSchema& schema, std::size_t num_docs,
                                      const EmbedConfig& config) {
  config.validate();
  EmbeddingSpace space;
  space.dim = config.dim;
  space.table_names = table_names_for(schema);
  std::vector<std::size_t> sizes{vocab.words.size(), vocab.words.size(), num_docs, vocab.labels.size()};
  for (const auto& f : vocab.fields) sizes.push_back(f.size());
  if (sizes.size() != space.table_names.size())
    throw std::invalid_argument("vocabulary does not match schema field count");

  Rng rng(derive_seed(config.seed, "embedding-init"));
  std::normal_distribution<double> gauss;
  for (std::size_t n : sizes) {
    Matrix m(n, config.dim);
    for (std::size_t r = 0; r < n; ++r) {
      auto row = m.row(r);
      do {
        for (double& v : row) v = gauss(rng);
      } while (norm(row) < 1e-12);
      normalize(row);
    }
    space.tables.push_back(std::move(m));
  }
  return space;
}

/// What the pair stream includes. Field mask is indexed by combined field
/// position.
struct PairOptions {
  std::size_t window = 5;
  std::size_t num_global_fields = 0;
  std::vector<bool> field_enabled;
  bool use_context = true;

  static PairOptions from(const MetadataSchema& schema, const EmbedConfig& config) {
    PairOptions o;
    o.window = config.window;
    o.num_global_fields = schema.global_fields.size();
    o.use_context = config.use_context;
    o.field_enabled.assign(schema.num_fields(), true);
    for (const auto& name : config.disabled_fields) {
      auto idx = schema.field_index(name);
      if (!idx) throw std::invalid_argument("unknown field to disable: '" + name + "'");
      o.field_enabled[*idx] = false;
    }
    return o;
  }
};

/// Positive pairs contributed by one document, in this order: (z, d) per
/// global instance, (l, d) if the label is visible, (d, t) per local
/// instance, (d, w_i) per token, then (w_i, w_j) for w_j in the window.
template <typename Sink>
void for_each_pair(const Document& doc, std::size_t doc_index, std::optional<std::size_t> visible_label,
                   const PairOptions& opts, Sink&& sink) {
  const Element d{static_cast<std::uint32_t>(kDocTable), static_cast<std::uint32_t>(doc_index)};
  for (std::size_t f = 0; f < doc.global_meta.size(); ++f) {
    if (!doc.global_meta[f] || !opts.field_enabled.at(f)) continue;
    sink(Pair{{static_cast<std::uint32_t>(field_table(f)), static_cast<std::uint32_t>(*doc.global_meta[f])}, d});
  }
  if (visible_label) sink(Pair{{static_cast<std::uint32_t>(kLabelTable), static_cast<std::uint32_t>(*visible_label)}, d});
  for (std::size_t lf = 0; lf < doc.local_meta.size(); ++lf) {
    const std::size_t f = opts.num_global_fields + lf;
    if (!opts.field_enabled.at(f)) continue;
    for (std::size_t inst : doc.local_meta[lf])
      sink(Pair{d, {static_cast<std::uint32_t>(field_table(f)), static_cast<std::uint32_t>(inst)}});
  }
  for (std::size_t w : doc.tokens) sink(Pair{d, {static_cast<std::uint32_t>(kWordTable), static_cast<std::uint32_t>(w)}});
  if (!opts.use_context) return;
  const std::size_t n = doc.tokens.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= opts.window ? i - opts.window : 0;
    const std::size_t hi = std::min(n - 1, i + opts.window);
    for (std::size_t j = lo; j <= hi; ++j) {
      if (j == i) continue;
      sink(Pair{{static_cast<std::uint32_t>(kWordTable), static_cast<std::uint32_t>(doc.tokens[i])},
                {static_cast<std::uint32_t>(kContextTable), static_cast<std::uint32_t>(doc.tokens[j])}});
    }
  }
}

inline std::vector<Pair> positive_pairs(const Document& doc, std::size_t doc_index,
                                        std::optional<std::size_t> visible_label, const PairOptions& opts) {
  std::vector<Pair> out;
  for_each_pair(doc, doc_index, visible_label, opts, [&](const Pair& p) { out.push_back(p); });
  return out;
}

inline std::vector<Pair> corpus_pairs(const std::vector<Document>& docs, const CorpusSplit& split,
                                      const PairOptions& opts) {
  const auto visible = split.visible_labels(docs.size());
  std::vector<Pair> out;
  for (std::size_t i = 0; i < docs.size(); ++i)
    for_each_pair(docs[i], i, visible[i], opts, [&](const Pair& p) { out.push_back(p); });
  return out;
}

/// Sampled objective for one positive pair:
///   log s(x_a . x_b) + sum_n log s(-x_a . x_n)
inline double pair_objective(const EmbeddingSpace& space, const Pair& pair, std::span<const Element> negatives) {
  const auto a = space.vec(pair.source);
  double obj = log_sigmoid(dot(a, space.vec(pair.target)));
  for (const auto& n : negatives) obj += log_sigmoid(-dot(a, space.vec(n)));
  return obj;
}

struct PairGradient {
  std::vector<double> source;
  std::vector<double> target;
  std::vector<std::vector<double>> negatives;  // one per entry of the negative list
};

inline PairGradient pair_gradient(const EmbeddingSpace& space, const Pair& pair, std::span<const Element> negatives) {
  const auto a = space.vec(pair.source);
  const auto b = space.vec(pair.target);
  PairGradient g;
  const double gpos = 1.0 - sigmoid(dot(a, b));
  g.source.assign(b.begin(), b.end());
  for (double& v : g.source) v *= gpos;
  g.target.assign(a.begin(), a.end());
  for (double& v : g.target) v *= gpos;
  for (const auto& n : negatives) {
    const auto x = space.vec(n);
    const double s = sigmoid(dot(a, x));
    axpy(-s, x, g.source);
    std::vector<double> gn(a.begin(), a.end());
    for (double& v : gn) v *= -s;
    g.negatives.push_back(std::move(gn));
  }
  return g;
}

namespace detail {

// Gradient ascent on pair_objective. Every gradient is evaluated at the
// pre-update point; touched rows go back to the sphere afterwards.
inline void sgd_step_impl(EmbeddingSpace& space, const Pair& pair, std::span<const Element> negatives, double lr,
                          std::vector<double>& src_grad, std::vector<double>& src_old, bool project) {
  if (lr == 0.0) return;
  auto a = space.vec(pair.source);
  src_old.assign(a.begin(), a.end());
  auto b = space.vec(pair.target);
  const double gpos = 1.0 - sigmoid(dot(a, b));
  src_grad.assign(b.begin(), b.end());
  for (double& v : src_grad) v *= gpos;
  // coefficients first: all dot products use pre-update rows
  double coef[64];
  std::vector<double> coef_heap;
  double* c = coef;
  if (negatives.size() > 64) {
    coef_heap.resize(negatives.size());
    c = coef_heap.data();
  }
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    const auto x = space.vec(negatives[i]);
    c[i] = sigmoid(dot(src_old, x));
    axpy(-c[i], x, src_grad);
  }
  axpy(lr * gpos, src_old, b);
  for (std::size_t i = 0; i < negatives.size(); ++i) axpy(-lr * c[i], src_old, space.vec(negatives[i]));
  axpy(lr, src_grad, a);
  if (!project) return;
  normalize(a);
  normalize(b);
  for (const auto& n : negatives) normalize(space.vec(n));
}

}  // namespace detail

inline void sgd_step(EmbeddingSpace& space, const Pair& pair, std::span<const Element> negatives, double lr) {
  std::vector<double> g, old;
  detail::sgd_step_impl(space, pair, negatives, lr, g, old, true);
}

/// Negative sampler per table: unigram counts (target-role occurrences in
/// the pair stream) raised to a power.
class NoiseSampler {
 public:
  NoiseSampler() = default;
  NoiseSampler(const EmbeddingSpace& space, std::span<const Pair> pairs, double power) {
    std::vector<std::vector<double>> counts(space.tables.size());
    for (std::size_t t = 0; t < space.tables.size(); ++t) counts[t].assign(space.table(t).rows(), 0.0);
    for (const auto& p : pairs) counts[p.target.table][p.target.row] += 1.0;
    dists_.resize(counts.size());
    for (std::size_t t = 0; t < counts.size(); ++t) {
      bool any = false;
      for (double& c : counts[t]) {
        if (c > 0.0) any = true;
        c = std::pow(c, power);
      }
      if (any) dists_[t] = std::discrete_distribution<std::uint32_t>(counts[t].begin(), counts[t].end());
    }
  }

  // Fills `out` with k draws from the target's table, avoiding the target
  // row itself where the table has other support.
  void draw(const Element& target, std::size_t k, Rng& rng, std::vector<Element>& out) {
    out.clear();
    auto& dist = dists_.at(target.table);
    if (!dist) return;
    for (std::size_t i = 0; i < k; ++i) {
      std::uint32_t r = (*dist)(rng);
      for (int tries = 0; r == target.row && tries < 8; ++tries) r = (*dist)(rng);
      if (r == target.row) continue;
      out.push_back({target.table, r});
    }
  }

 private:
  std::vector<std::optional<std::discrete_distribution<std::uint32_t>>> dists_;
};

using EpochObserver = std::function<void(std::size_t epoch, const EmbeddingSpace&)>;

/// Negative-sampling SGD over seeded shuffles of the positive pair stream.
/// Single-threaded runs are bit-reproducible; with threads > 1 workers update
/// shared rows without locks and rows are re-projected at each epoch end.
inline EmbeddingSpace train_embeddings(const std::vector<Document>& docs, const CorpusSplit& split,
                                       const Vocabulary& vocab, const MetadataSchema& schema,
                                       const EmbedConfig& config, const EpochObserver& observer = {}) {
  auto space = init_embeddings(vocab, schema, docs.size(), config);
  if (config.epochs == 0) return space;
  auto pairs = corpus_pairs(docs, split, PairOptions::from(schema, config));
  if (pairs.empty()) return space;
  NoiseSampler noise(space, pairs, config.noise_power);

  const double total = static_cast<double>(pairs.size()) * static_cast<double>(config.epochs);
  const double lr0 = config.learning_rate;
  const double floor = std::min(config.learning_rate_floor, lr0);
  auto rate_at = [&](double done) { return std::max(floor, lr0 - (lr0 - floor) * done / total); };

  Rng shuffle_rng(derive_seed(config.seed, "embedding-shuffle"));
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(pairs.begin(), pairs.end(), shuffle_rng);
    const double base = static_cast<double>(epoch) * static_cast<double>(pairs.size());
    const std::size_t nthreads = std::min(config.threads, pairs.size());
    auto work = [&](std::size_t worker, std::size_t begin, std::size_t end, bool project) {
      Rng rng(derive_seed(derive_seed(config.seed, "embedding-negatives"), epoch * 1024 + worker));
      NoiseSampler local = noise;
      std::vector<Element> negs;
      std::vector<double> g, old;
      for (std::size_t i = begin; i < end; ++i) {
        local.draw(pairs[i].target, config.negatives, rng, negs);
        const double done = base + static_cast<double>(i - begin) * static_cast<double>(nthreads);
        detail::sgd_step_impl(space, pairs[i], negs, rate_at(done), g, old, project);
      }
    };
    if (nthreads <= 1) {
      work(0, 0, pairs.size(), true);
    } else {
      std::vector<std::thread> pool;
      const std::size_t chunk = (pairs.size() + nthreads - 1) / nthreads;
      for (std::size_t t = 0; t < nthreads; ++t) {
        const std::size_t b = std::min(pairs.size(), t * chunk);
        const std::size_t e = std::min(pairs.size(), b + chunk);
        pool.emplace_back(work, t, b, e, true);
      }
      for (auto& th : pool) th.join();
      space.renormalize();
    }
    if (observer) observer(epoch + 1, space);
  }
  return space;
}

/// Negative-sampling surrogate of the log-likelihood over all positive pairs.
/// Negatives come from `seed` alone, so repeated calls use the same set.
inline double estimate_log_likelihood(const EmbeddingSpace& space, const std::vector<Document>& docs,
                                      const CorpusSplit& split, const MetadataSchema& schema,
                                      const EmbedConfig& config, std::size_t negatives_per_pair,
                                      std::uint64_t seed) {
  const auto pairs = corpus_pairs(docs, split, PairOptions::from(schema, config));
  if (pairs.empty()) return 0.0;
  NoiseSampler noise(space, pairs, config.noise_power);
  Rng rng(seed);
  std::vector<Element> negs;
  double total = 0.0;
  for (const auto& p : pairs) {
    noise.draw(p.target, negatives_per_pair, rng, negs);
    total += pair_objective(space, p, negs);
  }
  return total;
}

struct Neighbor {
  std::size_t row = 0;
  double cosine = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// k rows of `table` with the highest cosine to `query` (ties: lower row
/// first). Returns the whole table, ranked, if k exceeds its size.
inline std::vector<Neighbor> top_similar(const EmbeddingSpace& space, std::span<const double> query, std::size_t k,
                                         std::size_t table) {
  const auto& m = space.table(table);
  std::vector<Neighbor> all(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) all[r] = {r, dot(query, m.row(r))};
  const auto cmp = [](const Neighbor& x, const Neighbor& y) {
    return x.cosine != y.cosine ? x.cosine > y.cosine : x.row < y.row;
  };
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), cmp);
  all.resize(k);
  return all;
}

inline std::vector<Neighbor> top_similar(const EmbeddingSpace& space, Element query, std::size_t k,
                                         std::size_t table) {
  return top_similar(space, space.vec(query), k, table);
}

// ---------------------------------------------------------------------------
// Persistence: binary matrix file plus a JSON-lines sidecar naming each row.

inline constexpr char kEmbeddingMagic[8] = {'M', 'T', 'C', 'E', 'M', 'B', '\0', '\0'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

namespace io {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("unexpected end of file");
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const auto n = read_pod<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("unexpected end of file");
  return s;
}

}  // namespace io

inline void save_embeddings(const EmbeddingSpace& space, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(kEmbeddingMagic, sizeof(kEmbeddingMagic));
  io::write_pod(out, kEmbeddingVersion);
  io::write_pod<std::uint64_t>(out, space.dim);
  io::write_pod<std::uint64_t>(out, space.tables.size());
  for (std::size_t t = 0; t < space.tables.size(); ++t) {
    io::write_string(out, space.table_names.at(t));
    io::write_pod<std::uint64_t>(out, space.tables[t].rows());
  }
  for (const auto& m : space.tables)
    out.write(reinterpret_cast<const char*>(m.data().data()), static_cast<std::streamsize>(m.data().size() * sizeof(double)));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline EmbeddingSpace load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kEmbeddingMagic, sizeof(magic)) != 0)
    throw std::runtime_error("'" + path + "' is not an embedding file");
  if (io::read_pod<std::uint32_t>(in) != kEmbeddingVersion)
    throw std::runtime_error("'" + path + "': unsupported embedding file version");
  EmbeddingSpace space;
  space.dim = io::read_pod<std::uint64_t>(in);
  const auto ntables = io::read_pod<std::uint64_t>(in);
  std::vector<std::uint64_t> rows;
  for (std::uint64_t t = 0; t < ntables; ++t) {
    space.table_names.push_back(io::read_string(in));
    rows.push_back(io::read_pod<std::uint64_t>(in));
  }
  for (auto r : rows) {
    Matrix m(r, space.dim);
    in.read(reinterpret_cast<char*>(m.data().data()), static_cast<std::streamsize>(m.data().size() * sizeof(double)));
    if (!in) throw std::runtime_error("'" + path + "': truncated embedding data");
    space.tables.push_back(std::move(m));
  }
  return space;
}

/// Row names per table, in the same order as the space's tables.
using EmbeddingIndex = std::vector<std::vector<std::string>>;

inline EmbeddingIndex make_index(const Vocabulary& vocab, const std::vector<Document>& docs) {
  EmbeddingIndex idx;
  idx.push_back(vocab.words.names());
  idx.push_back(vocab.words.names());
  std::vector<std::string> ids;
  for (const auto& d : docs) ids.push_back(d.id);
  idx.push_back(std::move(ids));
  idx.push_back(vocab.labels.names());
  for (const auto& f : vocab.fields) idx.push_back(f.names());
  return idx;
}

inline void save_index(const EmbeddingSpace& space, const EmbeddingIndex& index, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  for (std::size_t t = 0; t < index.size(); ++t)
    for (std::size_t r = 0; r < index[t].size(); ++r)
      out << nlohmann::json{{"table", space.table_names.at(t)}, {"row", r}, {"name", index[t][r]}}.dump() << '\n';
}

inline EmbeddingIndex load_index(const EmbeddingSpace& space, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  EmbeddingIndex idx(space.tables.size());
  for (std::size_t t = 0; t < idx.size(); ++t) idx[t].resize(space.table(t).rows());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    auto t = space.find_table(j.at("table").get<std::string>());
    if (!t) throw std::runtime_error("index names unknown table");
    idx[*t].at(j.at("row").get<std::size_t>()) = j.at("name").get<std::string>();
  }
  return idx;
}

}  // namespace mtc
