#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "mtc/mtc.hpp"

namespace mtc::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("mtc-" + tag + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct Planted {
  RunConfig config;
  LoadedCorpus corpus;
};

// Writes a planted corpus under `dir` and loads it with the default run
// configuration (seed set to `seed`).
inline Planted make_planted(const PlantedConfig& pc, const TempDir& dir, std::uint64_t seed = 1) {
  const std::string path = dir.file("planted-" + std::to_string(pc.seed) + ".jsonl");
  write_planted_corpus(pc, path);
  Planted p;
  p.config.corpus = path;
  p.config.schema = planted_schema();
  p.config.seed = seed;
  p.corpus = load_for_run(p.config);
  return p;
}

// Class owning a planted word ("c<k>w<i>"); nullopt for shared words.
inline std::optional<std::size_t> planted_class_of(const std::string& word) {
  if (word.size() < 4 || word[0] != 'c') return std::nullopt;
  const auto w = word.find('w');
  if (w == std::string::npos || w == 1) return std::nullopt;
  return static_cast<std::size_t>(std::stoul(word.substr(1, w - 1)));
}

struct WordCosines {
  double intra = 0.0;
  double inter = 0.0;
};

// Mean cosine over pairs of planted class words, split by class agreement.
inline WordCosines planted_word_cosines(const EmbeddingSpace& space, const Vocabulary& vocab) {
  std::vector<std::pair<std::size_t, std::size_t>> words;  // (row, class)
  for (std::size_t r = 0; r < vocab.words.size(); ++r)
    if (auto c = planted_class_of(vocab.words.name(r))) words.push_back({r, *c});
  double intra = 0.0, inter = 0.0;
  std::size_t ni = 0, nx = 0;
  for (std::size_t i = 0; i < words.size(); ++i)
    for (std::size_t j = i + 1; j < words.size(); ++j) {
      const double c = dot(space.table(kWordTable).row(words[i].first), space.table(kWordTable).row(words[j].first));
      if (words[i].second == words[j].second) {
        intra += c;
        ++ni;
      } else {
        inter += c;
        ++nx;
      }
    }
  return {ni ? intra / static_cast<double>(ni) : 0.0, nx ? inter / static_cast<double>(nx) : 0.0};
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

inline std::vector<double> random_unit(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(dim);
  do {
    for (double& x : v) x = g(rng);
  } while (norm(v) < 1e-9);
  normalize(v);
  return v;
}

// ---------------------------------------------------------------------------
// Finite-difference checks shared by the unit tests and the acceptance run.

struct CnnCase {
  CnnModel model;
  Matrix input;
  std::size_t gold = 0;
};

// Smallest gap between the winning window and any other window, over every
// feature map. Finite differences are meaningless when this is tiny.
inline double min_pool_margin(const CnnModel& model, const Matrix& input) {
  const auto& arch = model.arch();
  const std::size_t p = model.input_dim();
  double margin = 1e300;
  for (std::size_t bank = 0; bank < arch.widths.size(); ++bank) {
    const std::size_t h = arch.widths[bank];
    for (std::size_t m = 0; m < arch.maps_per_width; ++m) {
      std::vector<double> z;
      for (std::size_t i = 0; i + h <= input.rows(); ++i)
        z.push_back(model.bias(bank, m) +
                    dot(model.filter(bank, m), std::span<const double>(input.data().data() + i * p, h * p)));
      std::sort(z.rbegin(), z.rend());
      if (z.size() > 1) margin = std::min(margin, z[0] - z[1]);
    }
  }
  return margin;
}

// Random small instance (dims <= 16) with a clear winner in every pool.
inline CnnCase random_cnn_case(Rng& rng) {
  std::uniform_int_distribution<std::size_t> dim(2, 16), labels(2, 5), rows(5, 12), maps(1, 4);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (;;) {
    CnnArchitecture arch;
    arch.maps_per_width = maps(rng);
    const std::size_t p = dim(rng);
    const std::size_t L = labels(rng);
    CnnCase c{CnnModel(arch, p, L), Matrix(rows(rng), p), 0};
    for (double& v : c.model.params()) v = u(rng) * 2.0;
    for (double& v : c.input.data()) v = u(rng) * 2.0;
    c.gold = std::uniform_int_distribution<std::size_t>(0, c.model.num_labels() - 1)(rng);
    if (min_pool_margin(c.model, c.input) > 1e-3) return c;
  }
}

// Max relative error between backward() and central differences of the
// single-example NLL over every parameter.
inline double cnn_fd_error(CnnCase c, double h = 1e-5) {
  ForwardCache cache;
  forward(c.model, c.input, &cache);
  std::vector<double> grad(c.model.params().size(), 0.0);
  backward(c.model, cache, c.gold, grad);
  auto loss = [&] {
    const Prediction p = forward(c.model, c.input);
    return -std::log(std::max(p.probs[c.gold], kProbabilityFloor));
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double saved = c.model.params()[i];
    c.model.params()[i] = saved + h;
    const double up = loss();
    c.model.params()[i] = saved - h;
    const double down = loss();
    c.model.params()[i] = saved;
    worst = std::max(worst, relative_error(grad[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

struct PairCase {
  EmbeddingSpace space;
  Pair pair;
  std::vector<Element> negatives;
};

// Tables: word, context, doc, label, one field. Rows are not normalized so
// that the objective is probed off the sphere too.
inline PairCase random_pair_case(Rng& rng) {
  std::uniform_int_distribution<std::size_t> dim(2, 16), nneg(0, 6);
  std::normal_distribution<double> g(0.0, 0.7);
  PairCase c;
  c.space.dim = dim(rng);
  c.space.table_names = {"word", "context", "doc", "label", "field"};
  for (std::size_t t = 0; t < 5; ++t) {
    Matrix m(12, c.space.dim);
    for (double& v : m.data()) v = g(rng);
    c.space.tables.push_back(std::move(m));
  }
  // source, target and negatives occupy distinct rows
  std::vector<std::uint32_t> rows(12);
  std::iota(rows.begin(), rows.end(), 0u);
  std::shuffle(rows.begin(), rows.end(), rng);
  const std::uint32_t kinds[][2] = {{kWordTable, kContextTable}, {kDocTable, kWordTable}, {kLabelTable, kDocTable},
                                    {4, kDocTable},              {kDocTable, 4}};
  const auto& kind = kinds[std::uniform_int_distribution<std::size_t>(0, 4)(rng)];
  c.pair = {{kind[0], rows[0]}, {kind[1], rows[1]}};
  const std::size_t k = nneg(rng);
  for (std::size_t i = 0; i < k; ++i) c.negatives.push_back({kind[1], rows[2 + i]});
  return c;
}

// Max relative error between pair_gradient() and central differences of
// pair_objective over every coordinate of every touched row.
inline double pair_fd_error(PairCase c, double h = 1e-5) {
  const auto grad = pair_gradient(c.space, c.pair, c.negatives);
  double worst = 0.0;
  auto probe = [&](Element e, const std::vector<double>& analytic) {
    auto row = c.space.vec(e);
    for (std::size_t i = 0; i < row.size(); ++i) {
      const double saved = row[i];
      row[i] = saved + h;
      const double up = pair_objective(c.space, c.pair, c.negatives);
      row[i] = saved - h;
      const double down = pair_objective(c.space, c.pair, c.negatives);
      row[i] = saved;
      worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * h)));
    }
  };
  probe(c.pair.source, grad.source);
  probe(c.pair.target, grad.target);
  for (std::size_t n = 0; n < c.negatives.size(); ++n) probe(c.negatives[n], grad.negatives[n]);
  return worst;
}

// Max deviation between an unprojected step and `lr` times the analytic
// gradient, over every touched row.
inline double pair_step_error(PairCase c, double lr = 1e-3) {
  const auto grad = pair_gradient(c.space, c.pair, c.negatives);
  const EmbeddingSpace before = c.space;
  std::vector<double> g, old;
  detail::sgd_step_impl(c.space, c.pair, c.negatives, lr, g, old, false);
  double worst = 0.0;
  auto cmp = [&](Element e, const std::vector<double>& analytic) {
    const auto a = before.vec(e);
    const auto b = c.space.vec(e);
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs((b[i] - a[i]) - lr * analytic[i]));
  };
  cmp(c.pair.source, grad.source);
  cmp(c.pair.target, grad.target);
  for (std::size_t n = 0; n < c.negatives.size(); ++n) cmp(c.negatives[n], grad.negatives[n]);
  return worst;
}

}  // namespace mtc::testing
