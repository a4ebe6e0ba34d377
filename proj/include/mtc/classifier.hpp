#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtc/corpus.hpp"
#include "mtc/embedding.hpp"
#include "mtc/generator.hpp"
#include "mtc/matrix.hpp"
#include "mtc/random.hpp"

namespace mtc {

struct CnnArchitecture {
  std::vector<std::size_t> widths{2, 3, 4, 5};
  std::size_t maps_per_width = 20;

  std::size_t num_features() const { return widths.size() * maps_per_width; }
  std::size_t max_width() const { return widths.empty() ? 1 : *std::max_element(widths.begin(), widths.end()); }

  friend bool operator==(const CnnArchitecture&, const CnnArchitecture&) = default;
};

/// Convolution filter banks followed by a fully connected softmax layer.
/// All parameters live in one flat vector:
///   per width: maps x (h * dim) filter weights, then maps biases;
///   then features x labels FC weights, then labels FC biases.
class CnnModel {
 public:
  CnnModel() = default;
  CnnModel(CnnArchitecture arch, std::size_t input_dim, std::size_t num_labels)
      : arch_(std::move(arch)), input_dim_(input_dim), num_labels_(num_labels) {
    if (input_dim_ == 0 || num_labels_ == 0) throw std::invalid_argument("CnnModel: empty dimensions");
    std::size_t off = 0;
    for (std::size_t h : arch_.widths) {
      if (h == 0) throw std::invalid_argument("CnnModel: filter width must be >= 1");
      filter_offsets_.push_back(off);
      off += arch_.maps_per_width * (h * input_dim_ + 1);
    }
    fc_offset_ = off;
    off += arch_.num_features() * num_labels_ + num_labels_;
    params_.assign(off, 0.0);
  }

  const CnnArchitecture& arch() const { return arch_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t num_labels() const { return num_labels_; }
  std::size_t num_features() const { return arch_.num_features(); }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // Weights of filter `map` in width bank `bank`, laid out row by row.
  std::span<const double> filter(std::size_t bank, std::size_t map) const {
    const std::size_t len = arch_.widths[bank] * input_dim_;
    return {params_.data() + filter_offsets_[bank] + map * len, len};
  }
  std::size_t filter_offset(std::size_t bank, std::size_t map) const {
    return filter_offsets_[bank] + map * arch_.widths[bank] * input_dim_;
  }
  std::size_t bias_offset(std::size_t bank, std::size_t map) const {
    return filter_offsets_[bank] + arch_.maps_per_width * arch_.widths[bank] * input_dim_ + map;
  }
  double bias(std::size_t bank, std::size_t map) const { return params_[bias_offset(bank, map)]; }

  // fc weight for (feature, label)
  std::size_t fc_offset(std::size_t feature, std::size_t label) const {
    return fc_offset_ + feature * num_labels_ + label;
  }
  std::size_t fc_bias_offset(std::size_t label) const { return fc_offset_ + num_features() * num_labels_ + label; }

  friend bool operator==(const CnnModel&, const CnnModel&) = default;

 private:
  CnnArchitecture arch_;
  std::size_t input_dim_ = 0;
  std::size_t num_labels_ = 0;
  std::vector<std::size_t> filter_offsets_;
  std::size_t fc_offset_ = 0;
  std::vector<double> params_;
};

struct TrainConfig {
  std::size_t batch_size = 256;
  double learning_rate = 0.05;
  std::size_t epochs = 20;
  double init_scale = 0.05;
  std::uint64_t seed = 1;
  CnnArchitecture arch;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("classifier learning rate must be >= 0");
  }
};

struct Prediction {
  std::vector<double> probs;
  std::size_t label = 0;
};

/// Word rows then local-metadata rows (field order, index order within a
/// field), zero-padded up to `min_rows`. Rows outside a table are skipped.
inline Matrix embed_input(std::span<const std::size_t> tokens, const std::vector<std::vector<std::size_t>>& local_meta,
                          const EmbeddingSpace& space, std::size_t num_global_fields, std::size_t min_rows = 5) {
  Matrix out(0, space.dim);
  const auto& words = space.table(kWordTable);
  for (std::size_t t : tokens)
    if (t < words.rows()) out.append_row(words.row(t));
  for (std::size_t lf = 0; lf < local_meta.size(); ++lf) {
    const auto& table = space.table(field_table(num_global_fields + lf));
    std::vector<std::size_t> ids(local_meta[lf]);
    std::sort(ids.begin(), ids.end());
    for (std::size_t i : ids)
      if (i < table.rows()) out.append_row(table.row(i));
  }
  const std::vector<double> zeros(space.dim, 0.0);
  while (out.rows() < min_rows) out.append_row(zeros);
  return out;
}

inline Matrix embed_input(const Document& doc, const EmbeddingSpace& space, std::size_t num_global_fields,
                          std::size_t min_rows = 5) {
  return embed_input(doc.tokens, doc.local_meta, space, num_global_fields, min_rows);
}

inline Matrix embed_input(const SyntheticDocument& doc, const EmbeddingSpace& space, std::size_t num_global_fields,
                          std::size_t min_rows = 5) {
  return embed_input(doc.tokens, doc.local_meta, space, num_global_fields, min_rows);
}

struct ForwardCache {
  Matrix input;
  std::vector<double> pooled;            // one per feature map
  std::vector<std::size_t> argmax;       // winning position per feature map
  std::vector<double> probs;
};

inline Prediction forward(const CnnModel& model, const Matrix& input, ForwardCache* cache = nullptr) {
  const auto& arch = model.arch();
  const std::size_t p = model.input_dim();
  if (input.cols() != p) throw std::invalid_argument("forward: input dimension mismatch");
  if (input.rows() < arch.max_width()) throw std::invalid_argument("forward: input shorter than widest filter");

  std::vector<double> pooled(model.num_features());
  std::vector<std::size_t> argmax(model.num_features());
  const double* x = input.data().data();
  std::size_t feature = 0;
  for (std::size_t bank = 0; bank < arch.widths.size(); ++bank) {
    const std::size_t h = arch.widths[bank];
    const std::size_t positions = input.rows() - h + 1;
    for (std::size_t m = 0; m < arch.maps_per_width; ++m, ++feature) {
      const auto w = model.filter(bank, m);
      const double b = model.bias(bank, m);
      double best = -1.0;
      std::size_t best_i = 0;
      for (std::size_t i = 0; i < positions; ++i) {
        // rows i..i+h-1 are contiguous in row-major storage
        const double c = sigmoid(b + dot(w, std::span<const double>(x + i * p, h * p)));
        if (c > best) {
          best = c;
          best_i = i;
        }
      }
      pooled[feature] = best;
      argmax[feature] = best_i;
    }
  }

  const std::size_t L = model.num_labels();
  const auto& params = model.params();
  std::vector<double> logits(L);
  for (std::size_t l = 0; l < L; ++l) logits[l] = params[model.fc_bias_offset(l)];
  for (std::size_t f = 0; f < pooled.size(); ++f)
    for (std::size_t l = 0; l < L; ++l) logits[l] += pooled[f] * params[model.fc_offset(f, l)];
  const double hi = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& v : logits) {
    v = std::exp(v - hi);
    z += v;
  }
  Prediction pred;
  pred.probs = std::move(logits);
  for (double& v : pred.probs) v /= z;
  pred.label = static_cast<std::size_t>(std::max_element(pred.probs.begin(), pred.probs.end()) - pred.probs.begin());
  if (cache) {
    cache->input = input;
    cache->pooled = std::move(pooled);
    cache->argmax = std::move(argmax);
    cache->probs = pred.probs;
  }
  return pred;
}

inline constexpr double kProbabilityFloor = 1e-12;

/// Negative log-likelihood of the gold labels, summed.
inline double nll_loss(std::span<const Prediction> preds, std::span<const std::size_t> gold) {
  if (preds.size() != gold.size()) throw std::invalid_argument("nll_loss: size mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    loss -= std::log(std::max(preds[i].probs.at(gold[i]), kProbabilityFloor));
  return loss;
}

/// Adds d(-log q_gold)/d(params) for one example into `grad`. Input
/// embeddings are constants here.
inline void backward(const CnnModel& model, const ForwardCache& cache, std::size_t gold, std::span<double> grad) {
  if (grad.size() != model.params().size()) throw std::invalid_argument("backward: gradient size mismatch");
  const std::size_t L = model.num_labels();
  const auto& params = model.params();
  std::vector<double> dlogits(cache.probs);
  dlogits.at(gold) -= 1.0;

  std::vector<double> dpooled(model.num_features(), 0.0);
  for (std::size_t f = 0; f < dpooled.size(); ++f) {
    for (std::size_t l = 0; l < L; ++l) {
      grad[model.fc_offset(f, l)] += cache.pooled[f] * dlogits[l];
      dpooled[f] += params[model.fc_offset(f, l)] * dlogits[l];
    }
  }
  for (std::size_t l = 0; l < L; ++l) grad[model.fc_bias_offset(l)] += dlogits[l];

  // max pooling routes everything through the winning window
  const auto& arch = model.arch();
  const std::size_t p = model.input_dim();
  const double* x = cache.input.data().data();
  std::size_t feature = 0;
  for (std::size_t bank = 0; bank < arch.widths.size(); ++bank) {
    const std::size_t len = arch.widths[bank] * p;
    for (std::size_t m = 0; m < arch.maps_per_width; ++m, ++feature) {
      const double c = cache.pooled[feature];
      const double dz = dpooled[feature] * c * (1.0 - c);
      const double* window = x + cache.argmax[feature] * p;
      double* gw = grad.data() + model.filter_offset(bank, m);
      for (std::size_t k = 0; k < len; ++k) gw[k] += dz * window[k];
      grad[model.bias_offset(bank, m)] += dz;
    }
  }
}

inline CnnModel init_model(const CnnArchitecture& arch, std::size_t input_dim, std::size_t num_labels,
                           double scale, std::uint64_t seed) {
  CnnModel model(arch, input_dim, num_labels);
  Rng rng(derive_seed(seed, "cnn-init"));
  std::uniform_real_distribution<double> u(-scale, scale);
  for (double& v : model.params()) v = u(rng);
  return model;
}

/// A classifier training example: pre-embedded input rows and a label.
struct Example {
  Matrix input;
  std::size_t label = 0;
};

/// Minibatch SGD on the summed NLL of each batch, over seeded shuffles.
inline CnnModel train_classifier(const std::vector<Example>& examples, std::size_t input_dim, std::size_t num_labels,
                                 const TrainConfig& config) {
  config.validate();
  if (examples.empty()) throw std::invalid_argument("train_classifier: empty training set");
  auto model = init_model(config.arch, input_dim, num_labels, config.init_scale, config.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(config.seed, "cnn-shuffle"));
  std::vector<double> grad(model.params().size());
  ForwardCache cache;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i = start; i < end; ++i) {
        const auto& ex = examples[order[i]];
        forward(model, ex.input, &cache);
        backward(model, cache, ex.label, grad);
      }
      axpy(-config.learning_rate, grad, model.params());
    }
  }
  return model;
}

inline std::vector<Example> make_examples(const std::vector<Document>& docs, std::span<const std::size_t> ids,
                                          const EmbeddingSpace& space, std::size_t num_global_fields,
                                          std::size_t min_rows) {
  std::vector<Example> out;
  for (std::size_t i : ids) {
    const auto& d = docs.at(i);
    if (!d.label) throw std::invalid_argument("training document '" + d.id + "' has no label");
    out.push_back({embed_input(d, space, num_global_fields, min_rows), *d.label});
  }
  return out;
}

/// Trains on the union of real labeled documents and synthetic documents.
inline CnnModel train_classifier(const EmbeddingSpace& space, const std::vector<Document>& docs,
                                 std::span<const std::size_t> real_ids,
                                 const std::vector<std::vector<SyntheticDocument>>& synthetic,
                                 std::size_t num_labels, std::size_t num_global_fields, const TrainConfig& config) {
  const std::size_t min_rows = config.arch.max_width();
  auto examples = make_examples(docs, real_ids, space, num_global_fields, min_rows);
  for (const auto& cls : synthetic)
    for (const auto& s : cls) examples.push_back({embed_input(s, space, num_global_fields, min_rows), s.label});
  return train_classifier(examples, space.dim, num_labels, config);
}

inline std::vector<Prediction> predict(const CnnModel& model, const EmbeddingSpace& space,
                                       const std::vector<Document>& docs, std::span<const std::size_t> ids,
                                       std::size_t num_global_fields) {
  std::vector<Prediction> out;
  out.reserve(ids.size());
  const std::size_t min_rows = model.arch().max_width();
  for (std::size_t i : ids) out.push_back(forward(model, embed_input(docs.at(i), space, num_global_fields, min_rows)));
  return out;
}

// ---------------------------------------------------------------------------

inline constexpr char kModelMagic[8] = {'M', 'T', 'C', 'C', 'N', 'N', '\0', '\0'};
inline constexpr std::uint32_t kModelVersion = 1;

inline void save_model(const CnnModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(kModelMagic, sizeof(kModelMagic));
  io::write_pod(out, kModelVersion);
  io::write_pod<std::uint64_t>(out, model.input_dim());
  io::write_pod<std::uint64_t>(out, model.num_labels());
  io::write_pod<std::uint64_t>(out, model.arch().maps_per_width);
  io::write_pod<std::uint64_t>(out, model.arch().widths.size());
  for (auto h : model.arch().widths) io::write_pod<std::uint64_t>(out, h);
  io::write_pod<std::uint64_t>(out, model.params().size());
  out.write(reinterpret_cast<const char*>(model.params().data()),
            static_cast<std::streamsize>(model.params().size() * sizeof(double)));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline CnnModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
    throw std::runtime_error("'" + path + "' is not a model file");
  if (io::read_pod<std::uint32_t>(in) != kModelVersion) throw std::runtime_error("unsupported model version");
  const auto dim = io::read_pod<std::uint64_t>(in);
  const auto labels = io::read_pod<std::uint64_t>(in);
  CnnArchitecture arch;
  arch.maps_per_width = io::read_pod<std::uint64_t>(in);
  arch.widths.resize(io::read_pod<std::uint64_t>(in));
  for (auto& h : arch.widths) h = io::read_pod<std::uint64_t>(in);
  CnnModel model(arch, dim, labels);
  if (io::read_pod<std::uint64_t>(in) != model.params().size())
    throw std::runtime_error("'" + path + "': parameter count does not match architecture");
  in.read(reinterpret_cast<char*>(model.params().data()),
          static_cast<std::streamsize>(model.params().size() * sizeof(double)));
  if (!in) throw std::runtime_error("'" + path + "': truncated parameters");
  return model;
}

}  // namespace mtc
