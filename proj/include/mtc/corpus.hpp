#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtc/random.hpp"

namespace mtc {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Names of the metadata fields a corpus carries. Global fields are upstream
/// of the document (user, product): one instance per document. Local fields
/// describe it (tags): any number of instances per document.
struct MetadataSchema {
  std::vector<std::string> global_fields;
  std::vector<std::string> local_fields;

  std::size_t num_fields() const { return global_fields.size() + local_fields.size(); }

  // Position in the combined field list (globals first) or nullopt.
  std::optional<std::size_t> field_index(std::string_view name) const {
    for (std::size_t i = 0; i < global_fields.size(); ++i)
      if (global_fields[i] == name) return i;
    for (std::size_t i = 0; i < local_fields.size(); ++i)
      if (local_fields[i] == name) return global_fields.size() + i;
    return std::nullopt;
  }

  const std::string& field_name(std::size_t combined_index) const {
    return combined_index < global_fields.size()
               ? global_fields[combined_index]
               : local_fields[combined_index - global_fields.size()];
  }

  void validate() const {
    std::set<std::string> seen;
    for (const auto* list : {&global_fields, &local_fields}) {
      for (const auto& f : *list) {
        if (f.empty()) throw CorpusError("schema: empty field name");
        if (f == "id" || f == "text" || f == "label" || f == "synthetic")
          throw CorpusError("schema: reserved field name '" + f + "'");
        if (!seen.insert(f).second) throw CorpusError("schema: duplicate field '" + f + "'");
      }
    }
  }
};

/// One ingested document. Metadata vectors are indexed by field position in
/// the schema; local instance sets are sorted and unique.
struct Document {
  std::string id;
  std::vector<std::size_t> tokens;
  std::vector<std::optional<std::size_t>> global_meta;
  std::vector<std::vector<std::size_t>> local_meta;
  std::optional<std::size_t> label;

  std::size_t num_local_instances() const {
    std::size_t n = 0;
    for (const auto& f : local_meta) n += f.size();
    return n;
  }
};

/// Dense string <-> index map with occurrence counts.
class Namespace {
 public:
  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }

  std::size_t add(const std::string& name, std::uint64_t count = 0) {
    auto [it, inserted] = index_.try_emplace(name, names_.size());
    if (inserted) {
      names_.push_back(name);
      counts_.push_back(0);
    }
    counts_[it->second] += count;
    return it->second;
  }

  std::optional<std::size_t> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& name(std::size_t i) const { return names_.at(i); }
  std::uint64_t count(std::size_t i) const { return counts_.at(i); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  void set_count(std::size_t i, std::uint64_t c) { counts_.at(i) = c; }

  friend bool operator==(const Namespace& a, const Namespace& b) {
    return a.names_ == b.names_ && a.counts_ == b.counts_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Vocabulary {
  Namespace words;
  Namespace labels;
  std::vector<Namespace> fields;  // one per schema field, globals first

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

/// Labeled training ids per class, gold-labeled test documents, and documents
/// with no gold label at all. Values are indices into the document list.
struct CorpusSplit {
  std::vector<std::vector<std::size_t>> labeled;
  std::vector<std::size_t> unlabeled;
  std::vector<std::size_t> test;

  std::size_t num_labeled() const {
    std::size_t n = 0;
    for (const auto& l : labeled) n += l.size();
    return n;
  }

  // Per-document label visible to training, empty for everything not in the
  // labeled lists.
  std::vector<std::optional<std::size_t>> visible_labels(std::size_t num_docs) const {
    std::vector<std::optional<std::size_t>> out(num_docs);
    for (std::size_t l = 0; l < labeled.size(); ++l)
      for (std::size_t d : labeled[l]) out.at(d) = l;
    return out;
  }

  friend bool operator==(const CorpusSplit&, const CorpusSplit&) = default;
};

/// Lowercase, split on runs of non-alphanumeric characters.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// A parsed but not yet indexed input line.
struct RawRecord {
  std::size_t line = 0;
  std::string id;
  std::vector<std::string> tokens;
  std::optional<std::string> label;
  std::vector<std::optional<std::string>> global_meta;
  std::vector<std::vector<std::string>> local_meta;
  bool synthetic = false;
};

namespace detail {

inline std::string text_of(const nlohmann::json& v, std::size_t line) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    // multiple segments (description + readme, title + review) are joined
    std::string joined;
    for (const auto& seg : v) {
      if (!seg.is_string()) throw CorpusError("line " + std::to_string(line) + ": text segments must be strings");
      if (!joined.empty()) joined.push_back(' ');
      joined += seg.get<std::string>();
    }
    return joined;
  }
  throw CorpusError("line " + std::to_string(line) + ": 'text' must be a string or array of strings");
}

}  // namespace detail

inline RawRecord parse_record(std::string_view line_text, std::size_t line, const MetadataSchema& schema) {
  const std::string where = "line " + std::to_string(line);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw CorpusError(where + ": malformed record (" + e.what() + ")");
  }
  if (!j.is_object()) throw CorpusError(where + ": malformed record (not an object)");

  RawRecord rec;
  rec.line = line;
  rec.global_meta.resize(schema.global_fields.size());
  rec.local_meta.resize(schema.local_fields.size());
  std::string text;
  for (const auto& [key, value] : j.items()) {
    if (key == "id") {
      if (!value.is_string()) throw CorpusError(where + ": 'id' must be a string");
      rec.id = value.get<std::string>();
    } else if (key == "text") {
      text = detail::text_of(value, line);
    } else if (key == "label") {
      if (value.is_null()) continue;
      if (!value.is_string()) throw CorpusError(where + ": 'label' must be a string");
      rec.label = value.get<std::string>();
    } else if (key == "synthetic") {
      if (!value.is_boolean()) throw CorpusError(where + ": 'synthetic' must be a boolean");
      rec.synthetic = value.get<bool>();
    } else {
      auto idx = schema.field_index(key);
      if (!idx) throw CorpusError(where + ": unknown metadata field '" + key + "'");
      if (*idx < schema.global_fields.size()) {
        if (value.is_null()) continue;
        if (!value.is_string()) throw CorpusError(where + ": global field '" + key + "' must be a string");
        rec.global_meta[*idx] = value.get<std::string>();
      } else {
        if (!value.is_array()) throw CorpusError(where + ": local field '" + key + "' must be an array");
        auto& out = rec.local_meta[*idx - schema.global_fields.size()];
        for (const auto& v : value) {
          if (!v.is_string()) throw CorpusError(where + ": local field '" + key + "' must hold strings");
          out.push_back(v.get<std::string>());
        }
      }
    }
  }
  if (rec.id.empty()) rec.id = std::to_string(line);
  rec.tokens = tokenize(text);
  std::size_t local_count = 0;
  for (const auto& f : rec.local_meta) local_count += f.size();
  if (rec.tokens.empty() && local_count == 0)
    throw CorpusError(where + ": record has neither text tokens nor local metadata");
  return rec;
}

inline std::vector<RawRecord> read_records(const std::string& path, const MetadataSchema& schema) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus file '" + path + "'");
  std::vector<RawRecord> out;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto rec = parse_record(line, lineno, schema);
    if (!ids.insert(rec.id).second)
      throw CorpusError("line " + std::to_string(lineno) + ": duplicate document id '" + rec.id + "'");
    out.push_back(std::move(rec));
  }
  return out;
}

/// Builds vocabularies in first-occurrence order. Words below `min_count`
/// are dropped; labels and metadata instances are never filtered.
inline Vocabulary build_vocabulary(const std::vector<RawRecord>& records, const MetadataSchema& schema,
                                   std::uint64_t min_count) {
  std::unordered_map<std::string, std::uint64_t> freq;
  for (const auto& r : records)
    for (const auto& t : r.tokens) ++freq[t];

  Vocabulary vocab;
  vocab.fields.resize(schema.num_fields());
  for (const auto& r : records) {
    for (const auto& t : r.tokens)
      if (freq[t] >= min_count) vocab.words.add(t, 1);
    if (r.label) vocab.labels.add(*r.label, 1);
    for (std::size_t f = 0; f < r.global_meta.size(); ++f)
      if (r.global_meta[f]) vocab.fields[f].add(*r.global_meta[f], 1);
    for (std::size_t f = 0; f < r.local_meta.size(); ++f) {
      std::set<std::string> uniq(r.local_meta[f].begin(), r.local_meta[f].end());
      for (const auto& v : uniq) vocab.fields[schema.global_fields.size() + f].add(v, 1);
    }
  }
  return vocab;
}

/// Maps records onto an existing vocabulary. Unknown words and metadata
/// instances are skipped; an unknown label is an error.
inline std::vector<Document> index_records(const std::vector<RawRecord>& records, const MetadataSchema& schema,
                                           const Vocabulary& vocab) {
  std::vector<Document> docs;
  docs.reserve(records.size());
  for (const auto& r : records) {
    Document d;
    d.id = r.id;
    for (const auto& t : r.tokens)
      if (auto w = vocab.words.find(t)) d.tokens.push_back(*w);
    if (r.label) {
      auto l = vocab.labels.find(*r.label);
      if (!l) throw CorpusError("line " + std::to_string(r.line) + ": unknown label '" + *r.label + "'");
      d.label = *l;
    }
    d.global_meta.resize(schema.global_fields.size());
    for (std::size_t f = 0; f < r.global_meta.size(); ++f)
      if (r.global_meta[f]) d.global_meta[f] = vocab.fields.at(f).find(*r.global_meta[f]);
    d.local_meta.resize(schema.local_fields.size());
    for (std::size_t f = 0; f < r.local_meta.size(); ++f) {
      std::set<std::size_t> ids;
      for (const auto& v : r.local_meta[f])
        if (auto i = vocab.fields.at(schema.global_fields.size() + f).find(v)) ids.insert(*i);
      d.local_meta[f].assign(ids.begin(), ids.end());
    }
    docs.push_back(std::move(d));
  }
  return docs;
}

struct LoadedCorpus {
  std::vector<Document> documents;
  Vocabulary vocab;
};

inline LoadedCorpus load_corpus(const std::string& path, const MetadataSchema& schema, std::uint64_t min_count = 2) {
  auto records = read_records(path, schema);
  LoadedCorpus out;
  out.vocab = build_vocabulary(records, schema, min_count);
  out.documents = index_records(records, schema, out.vocab);
  return out;
}

/// Samples exactly k gold-labeled documents per class as training data.
/// Remaining gold-labeled documents form the test set; documents without a
/// gold label are unlabeled.
inline CorpusSplit take_k_per_class(const std::vector<Document>& docs, std::size_t num_labels, std::size_t k,
                                    std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(num_labels);
  CorpusSplit split;
  split.labeled.resize(num_labels);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!docs[i].label) {
      split.unlabeled.push_back(i);
      continue;
    }
    if (*docs[i].label >= num_labels) throw CorpusError("document '" + docs[i].id + "' has an out-of-range label");
    by_class[*docs[i].label].push_back(i);
  }
  Rng rng(derive_seed(seed, "split"));
  std::vector<char> chosen(docs.size(), 0);
  for (std::size_t l = 0; l < num_labels; ++l) {
    auto& pool = by_class[l];
    if (pool.size() < k)
      throw CorpusError("class " + std::to_string(l) + " has " + std::to_string(pool.size()) +
                        " labeled documents, fewer than k=" + std::to_string(k));
    // partial Fisher-Yates
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    split.labeled[l].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(split.labeled[l].begin(), split.labeled[l].end());
    for (std::size_t d : split.labeled[l]) chosen[d] = 1;
  }
  for (std::size_t i = 0; i < docs.size(); ++i)
    if (docs[i].label && !chosen[i]) split.test.push_back(i);
  return split;
}

/// Serializes a document back to the record format.
inline nlohmann::json to_record(const Document& d, const MetadataSchema& schema, const Vocabulary& vocab) {
  nlohmann::json j;
  j["id"] = d.id;
  std::string text;
  for (std::size_t t : d.tokens) {
    if (!text.empty()) text.push_back(' ');
    text += vocab.words.name(t);
  }
  j["text"] = text;
  if (d.label) j["label"] = vocab.labels.name(*d.label);
  for (std::size_t f = 0; f < schema.global_fields.size(); ++f)
    if (d.global_meta.at(f)) j[schema.global_fields[f]] = vocab.fields[f].name(*d.global_meta[f]);
  for (std::size_t f = 0; f < schema.local_fields.size(); ++f) {
    auto arr = nlohmann::json::array();
    for (std::size_t i : d.local_meta.at(f)) arr.push_back(vocab.fields[schema.global_fields.size() + f].name(i));
    j[schema.local_fields[f]] = arr;
  }
  return j;
}

}  // namespace mtc
