#pragma once

// Data model and ingestion for sentence-pair corpora: MNLI-style JSONL/TSV
// loading, tokenization, vocabulary construction, pretrained word vectors,
// and padded batch encoding.

#include <Eigen/Dense>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "lexbias/common.hpp"

namespace lexbias {

enum class Label : int { entailment = 0, neutral = 1, contradiction = 2 };
inline constexpr int kNumClasses = 3;

inline const char* label_name(Label l) {
  switch (l) {
    case Label::entailment: return "entailment";
    case Label::neutral: return "neutral";
    case Label::contradiction: return "contradiction";
  }
  return "?";
}

inline std::optional<Label> parse_label(std::string_view s) {
  if (s == "entailment") return Label::entailment;
  if (s == "neutral") return Label::neutral;
  if (s == "contradiction") return Label::contradiction;
  return std::nullopt;
}

struct PairExample {
  std::string id;
  std::vector<std::string> premise;
  std::vector<std::string> hypothesis;
  Label label = Label::neutral;
  std::string genre;
};

struct Dataset {
  std::string name;
  std::vector<PairExample> examples;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
};

// Lowercases and splits on whitespace, detaching leading/trailing punctuation
// into single-character tokens. Interior punctuation (don't, u.s.) is kept.
inline std::vector<std::string> tokenize(std::string_view text) {
  static const std::string punct = ".,!?;:()[]{}\"'`";
  std::vector<std::string> out;
  std::istringstream iss{to_lower_ascii(text)};
  std::string word;
  while (iss >> word) {
    std::size_t begin = 0;
    std::size_t end = word.size();
    std::vector<char> leading, trailing;
    while (begin < end && punct.find(word[begin]) != std::string::npos) leading.push_back(word[begin++]);
    while (end > begin && punct.find(word[end - 1]) != std::string::npos) trailing.push_back(word[--end]);
    for (char c : leading) out.emplace_back(1, c);
    if (end > begin) out.push_back(word.substr(begin, end - begin));
    for (auto it = trailing.rbegin(); it != trailing.rend(); ++it) out.emplace_back(1, *it);
  }
  return out;
}

enum class CorpusFormat { jsonl, tsv };

struct LoadStats {
  std::size_t loaded = 0;
  std::size_t skipped_no_consensus = 0;
};

namespace detail {

inline PairExample make_example(const std::string& s1, const std::string& s2,
                                const std::string& gold, const std::string& genre,
                                const std::string& pair_id, std::size_t line_no,
                                const std::string& path) {
  const auto label = parse_label(gold);
  if (!label) {
    throw DataError(path + ":" + std::to_string(line_no) + ": unknown label '" + gold + "'");
  }
  PairExample ex;
  ex.id = pair_id.empty() ? "ex" + std::to_string(line_no) : pair_id;
  ex.premise = tokenize(s1);
  ex.hypothesis = tokenize(s2);
  ex.label = *label;
  ex.genre = genre;
  if (ex.premise.empty() || ex.hypothesis.empty()) {
    throw DataError(path + ":" + std::to_string(line_no) + ": empty sentence after tokenization");
  }
  return ex;
}

}  // namespace detail

// Loads sentence1/sentence2/gold_label records. Records labeled "-" (no
// annotator consensus) are dropped and counted.
inline Dataset load_pairs(const std::string& path, CorpusFormat format, LoadStats* stats = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path);

  Dataset ds;
  ds.name = path;
  LoadStats local;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;

  std::vector<std::string> header;
  auto column = [&](const std::vector<std::string>& cols, const std::string& name,
                    bool required) -> std::string {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) {
        if (i < cols.size()) return cols[i];
        break;
      }
    }
    if (required) {
      throw DataError(path + ":" + std::to_string(line_no) + ": missing field '" + name + "'");
    }
    return "";
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string s1, s2, gold, genre, pair_id;
    if (format == CorpusFormat::jsonl) {
      nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
      if (rec.is_discarded() || !rec.is_object()) {
        throw DataError(path + ":" + std::to_string(line_no) + ": malformed JSON record");
      }
      if (!rec.contains("sentence1") || !rec.contains("sentence2") || !rec.contains("gold_label")) {
        throw DataError(path + ":" + std::to_string(line_no) +
                        ": record must have sentence1, sentence2, gold_label");
      }
      s1 = rec["sentence1"].get<std::string>();
      s2 = rec["sentence2"].get<std::string>();
      gold = rec["gold_label"].get<std::string>();
      genre = rec.value("genre", "");
      pair_id = rec.value("pairID", "");
    } else {
      std::vector<std::string> cols;
      std::size_t start = 0;
      while (true) {
        const std::size_t tab = line.find('\t', start);
        cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
      }
      if (line_no == 1) {
        header = cols;
        for (const char* req : {"sentence1", "sentence2", "gold_label"}) {
          if (std::find(header.begin(), header.end(), req) == header.end()) {
            throw DataError(path + ":1: TSV header missing column '" + std::string(req) + "'");
          }
        }
        continue;
      }
      s1 = column(cols, "sentence1", true);
      s2 = column(cols, "sentence2", true);
      gold = column(cols, "gold_label", true);
      genre = column(cols, "genre", false);
      pair_id = column(cols, "pairID", false);
    }
    if (gold == "-") {
      ++local.skipped_no_consensus;
      continue;
    }
    PairExample ex = detail::make_example(s1, s2, gold, genre, pair_id, line_no, path);
    if (!seen_ids.insert(ex.id).second) {
      throw DataError(path + ":" + std::to_string(line_no) + ": duplicate example id '" + ex.id + "'");
    }
    ds.examples.push_back(std::move(ex));
    ++local.loaded;
  }

  if (local.loaded == 0) {
    std::cerr << "warning: " << path << " contains no usable examples\n";
  }
  if (local.skipped_no_consensus > 0) {
    std::cerr << "note: " << path << ": dropped " << local.skipped_no_consensus
              << " records without label consensus\n";
  }
  if (stats) *stats = local;
  return ds;
}

inline void save_jsonl(const Dataset& ds, const std::string& path,
                       const std::map<std::string, std::map<std::string, std::string>>* provenance = nullptr) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus file: " + path);
  auto join = [](const std::vector<std::string>& tokens) {
    std::string s;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) s += ' ';
      s += tokens[i];
    }
    return s;
  };
  for (const auto& ex : ds.examples) {
    nlohmann::json rec;
    rec["pairID"] = ex.id;
    rec["sentence1"] = join(ex.premise);
    rec["sentence2"] = join(ex.hypothesis);
    rec["gold_label"] = label_name(ex.label);
    if (!ex.genre.empty()) rec["genre"] = ex.genre;
    if (provenance) {
      auto it = provenance->find(ex.id);
      if (it != provenance->end()) {
        for (const auto& [k, v] : it->second) rec[k] = v;
      }
    }
    out << rec.dump() << "\n";
  }
}

// Token -> index mapping with reserved padding (0) and unknown (1) slots.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary() : tokens_{"<pad>", "<unk>"} {
    index_["<pad>"] = kPad;
    index_["<unk>"] = kUnk;
  }

  int add(const std::string& token) {
    auto [it, inserted] = index_.emplace(token, static_cast<int>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  int lookup(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  const std::string& token(int index) const { return tokens_.at(static_cast<std::size_t>(index)); }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& t : tokens_) {
      h = fnv1a64(t, h);
      h = fnv1a64("\x1f", h);
    }
    return h;
  }

 private:
  std::unordered_map<std::string, int> index_;
  std::vector<std::string> tokens_;
};

// Pools token counts over all datasets; tokens with frequency >= min_freq get
// indices in frequency-then-lexicographic order.
inline Vocabulary build_vocab(const std::vector<const Dataset*>& datasets, std::size_t min_freq = 1) {
  if (datasets.empty()) throw DataError("build_vocab: need at least one dataset");
  std::map<std::string, std::size_t> counts;
  for (const Dataset* ds : datasets) {
    for (const auto& ex : ds->examples) {
      for (const auto& t : ex.premise) ++counts[t];
      for (const auto& t : ex.hypothesis) ++counts[t];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary vocab;
  for (const auto& [token, count] : items) {
    if (count >= min_freq) vocab.add(token);
  }
  return vocab;
}

struct EmbeddingMatrix {
  Eigen::MatrixXd weights;  // |V| x d_e; row 0 (padding) is all zeros
};

// Text format: one "token v1 ... v_d" line per word. Vocabulary rows missing
// from the file are initialized uniformly in [-0.05, 0.05] from the run seed.
inline EmbeddingMatrix load_embeddings(const std::string& path, const Vocabulary& vocab,
                                       int dim, std::uint64_t seed) {
  EmbeddingMatrix emb;
  emb.weights.setZero(vocab.size(), dim);
  std::vector<bool> filled(static_cast<std::size_t>(vocab.size()), false);
  filled[Vocabulary::kPad] = true;  // stays zero

  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open embedding file: " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::istringstream iss(line);
      std::string token;
      iss >> token;
      const int row = vocab.contains(token) ? vocab.lookup(token) : -1;
      std::vector<double> values;
      double v;
      while (iss >> v) values.push_back(v);
      if (static_cast<int>(values.size()) != dim) {
        throw DataError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                        " values, found " + std::to_string(values.size()));
      }
      if (row < 0 || row == Vocabulary::kPad || filled[static_cast<std::size_t>(row)]) continue;
      for (int j = 0; j < dim; ++j) emb.weights(row, j) = values[static_cast<std::size_t>(j)];
      filled[static_cast<std::size_t>(row)] = true;
    }
  }

  RngStream rng(seed_for(seed, "embedding-init"));
  for (int r = 0; r < vocab.size(); ++r) {
    if (filled[static_cast<std::size_t>(r)]) continue;
    for (int j = 0; j < dim; ++j) emb.weights(r, j) = rng.uniform(-0.05, 0.05);
  }
  return emb;
}

// One padded side of a pair batch. mask(i, t) is 1.0 for real tokens.
struct TokenBatch {
  Eigen::MatrixXi ids;      // B x T
  std::vector<int> lengths; // post-truncation lengths
  Eigen::MatrixXd mask;     // B x T
};

struct PairBatch {
  TokenBatch premise;
  TokenBatch hypothesis;
  std::vector<int> labels;
};

inline TokenBatch encode_side(const std::vector<const std::vector<std::string>*>& sents,
                              const Vocabulary& vocab, int max_len, int pad_to = 0) {
  if (max_len < 1) throw DataError("encode_batch: max_len must be >= 1");
  TokenBatch b;
  const int n = static_cast<int>(sents.size());
  b.lengths.resize(static_cast<std::size_t>(n));
  int width = 0;
  for (int i = 0; i < n; ++i) {
    const int len = std::min<int>(static_cast<int>(sents[static_cast<std::size_t>(i)]->size()), max_len);
    b.lengths[static_cast<std::size_t>(i)] = len;
    width = std::max(width, len);
  }
  width = std::max(width, pad_to);
  b.ids.setZero(n, width);  // padding index is 0
  b.mask.setZero(n, width);
  for (int i = 0; i < n; ++i) {
    const auto& tokens = *sents[static_cast<std::size_t>(i)];
    for (int t = 0; t < b.lengths[static_cast<std::size_t>(i)]; ++t) {
      b.ids(i, t) = vocab.lookup(tokens[static_cast<std::size_t>(t)]);
      b.mask(i, t) = 1.0;
    }
  }
  return b;
}

inline PairBatch encode_batch(const std::vector<const PairExample*>& examples,
                              const Vocabulary& vocab, int max_len, int pad_to = 0) {
  std::vector<const std::vector<std::string>*> prem, hyp;
  prem.reserve(examples.size());
  hyp.reserve(examples.size());
  PairBatch pb;
  pb.labels.reserve(examples.size());
  for (const PairExample* ex : examples) {
    prem.push_back(&ex->premise);
    hyp.push_back(&ex->hypothesis);
    pb.labels.push_back(static_cast<int>(ex->label));
  }
  pb.premise = encode_side(prem, vocab, max_len, pad_to);
  pb.hypothesis = encode_side(hyp, vocab, max_len, pad_to);
  return pb;
}

}  // namespace lexbias
