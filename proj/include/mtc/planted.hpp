#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtc/corpus.hpp"
#include "mtc/random.hpp"

namespace mtc {

/// Parameters of a synthetic corpus with known class structure. Each class
/// owns disjoint word, user and tag pools; a shared word pool supplies noise.
struct PlantedConfig {
  std::size_t num_classes = 4;
  std::size_t docs_per_class = 200;
  std::size_t vocab_per_class = 50;
  std::size_t shared_vocab = 100;
  std::size_t users_per_class = 5;
  std::size_t tags_per_class = 10;
  std::size_t topics_per_class = 1;  // class pool split into this many word subsets
  double noise_rate = 0.3;       // share of tokens drawn from the shared pool
  std::size_t min_length = 6;
  std::size_t max_length = 14;
  double tag_rate = 0.3;         // probability a document carries tags at all
  std::size_t max_tags = 2;
  double user_noise = 0.0;       // probability the user comes from another class
  std::uint64_t seed = 1;

  void validate() const {
    if (num_classes == 0 || docs_per_class == 0 || vocab_per_class == 0 || users_per_class == 0)
      throw std::invalid_argument("planted corpus: sizes must be positive");
    if (!(noise_rate >= 0.0 && noise_rate < 1.0)) throw std::invalid_argument("planted corpus: noise_rate must be in [0,1)");
    if (noise_rate > 0.0 && shared_vocab == 0) throw std::invalid_argument("planted corpus: noise needs a shared pool");
    if (min_length == 0 || min_length > max_length) throw std::invalid_argument("planted corpus: bad length range");
    if (topics_per_class == 0 || topics_per_class > vocab_per_class)
      throw std::invalid_argument("planted corpus: topics_per_class must be in [1, vocab_per_class]");
  }
};

inline std::string planted_word(std::size_t cls, std::size_t i) {
  return "c" + std::to_string(cls) + "w" + std::to_string(i);
}
inline std::string planted_shared_word(std::size_t i) { return "s" + std::to_string(i); }
inline std::string planted_user(std::size_t cls, std::size_t i) {
  return "c" + std::to_string(cls) + "u" + std::to_string(i);
}
inline std::string planted_tag(std::size_t cls, std::size_t i) {
  return "c" + std::to_string(cls) + "t" + std::to_string(i);
}
inline std::string planted_label(std::size_t cls) { return "class" + std::to_string(cls); }

inline const MetadataSchema& planted_schema() {
  static const MetadataSchema schema{{"user"}, {"tags"}};
  return schema;
}

/// Records interleave classes (doc i belongs to class i % num_classes). With
/// several topics, class word j belongs to topic j % topics_per_class and each
/// document draws its class words from a single topic.
inline std::vector<nlohmann::json> planted_records(const PlantedConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "planted"));
  std::uniform_int_distribution<std::size_t> length(cfg.min_length, cfg.max_length);
  std::uniform_int_distribution<std::size_t> topic(0, cfg.topics_per_class - 1);
  std::uniform_int_distribution<std::size_t> shared_word(0, cfg.shared_vocab ? cfg.shared_vocab - 1 : 0);
  std::uniform_int_distribution<std::size_t> user(0, cfg.users_per_class - 1);
  std::uniform_int_distribution<std::size_t> tag(0, cfg.tags_per_class ? cfg.tags_per_class - 1 : 0);
  std::uniform_int_distribution<std::size_t> ntags(1, cfg.max_tags ? cfg.max_tags : 1);
  std::uniform_int_distribution<std::size_t> other_class(0, cfg.num_classes > 1 ? cfg.num_classes - 2 : 0);

  std::vector<nlohmann::json> out;
  const std::size_t total = cfg.num_classes * cfg.docs_per_class;
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t cls = i % cfg.num_classes;
    std::string text;
    const std::size_t n = length(rng);
    const std::size_t tp = topic(rng);
    const std::size_t topic_size = (cfg.vocab_per_class - tp + cfg.topics_per_class - 1) / cfg.topics_per_class;
    std::uniform_int_distribution<std::size_t> class_word(0, topic_size - 1);
    for (std::size_t t = 0; t < n; ++t) {
      if (!text.empty()) text.push_back(' ');
      text += uniform01(rng) < cfg.noise_rate ? planted_shared_word(shared_word(rng)) : planted_word(cls, tp + cfg.topics_per_class * class_word(rng));
    }
    std::size_t user_cls = cls;
    if (cfg.num_classes > 1 && uniform01(rng) < cfg.user_noise) {
      user_cls = other_class(rng);
      if (user_cls >= cls) ++user_cls;
    }
    auto tags = nlohmann::json::array();
    if (cfg.tags_per_class > 0 && cfg.max_tags > 0 && uniform01(rng) < cfg.tag_rate) {
      const std::size_t m = ntags(rng);
      for (std::size_t k = 0; k < m; ++k) tags.push_back(planted_tag(cls, tag(rng)));
    }
    nlohmann::json j;
    j["id"] = "doc" + std::to_string(i);
    j["text"] = text;
    j["label"] = planted_label(cls);
    j["user"] = planted_user(user_cls, user(rng));
    j["tags"] = tags;
    out.push_back(std::move(j));
  }
  return out;
}

inline std::string planted_corpus_text(const PlantedConfig& cfg) {
  std::ostringstream out;
  for (const auto& r : planted_records(cfg)) out << r.dump() << '\n';
  return out.str();
}

inline void write_planted_corpus(const PlantedConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << planted_corpus_text(cfg);
}

}  // namespace mtc
