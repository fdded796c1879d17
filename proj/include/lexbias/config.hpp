#pragma once

// Flat sectioned key-value run configuration. Every command serializes its
// effective configuration into the artifacts it writes (as a digest), so a
// report can be traced back to the exact settings that produced it.

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "lexbias/common.hpp"
#include "lexbias/debias_grl.hpp"
#include "lexbias/encoders.hpp"
#include "lexbias/hex_projection.hpp"
#include "lexbias/train_eval.hpp"

namespace lexbias {

class RunConfig {
 public:
  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    RunConfig cfg;
    std::string line, section = "global";
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto last = line.find_last_not_of(" \t\r");
      std::string s = line.substr(first, last - first + 1);
      if (s[0] == '#' || s[0] == ';') continue;
      if (s.front() == '[' && s.back() == ']') {
        section = s.substr(1, s.size() - 2);
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) {
        throw DataError(path + ":" + std::to_string(line_no) + ": expected key = value");
      }
      auto trim = [](std::string v) {
        const auto b = v.find_first_not_of(" \t");
        const auto e = v.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
      };
      cfg.set(section, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    return cfg;
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    sections_[section][key] = value;
  }

  bool has(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
  }

  std::string get(const std::string& section, const std::string& key, const std::string& dflt) const {
    auto s = sections_.find(section);
    if (s == sections_.end()) return dflt;
    auto k = s->second.find(key);
    return k == s->second.end() ? dflt : k->second;
  }

  double get_double(const std::string& s, const std::string& k, double dflt) const {
    const std::string v = get(s, k, "");
    if (v.empty()) return dflt;
    try {
      return std::stod(v);
    } catch (const std::exception&) {
      throw DataError("config [" + s + "] " + k + ": not a number: " + v);
    }
  }

  long long get_int(const std::string& s, const std::string& k, long long dflt) const {
    const std::string v = get(s, k, "");
    if (v.empty()) return dflt;
    try {
      return std::stoll(v);
    } catch (const std::exception&) {
      throw DataError("config [" + s + "] " + k + ": not an integer: " + v);
    }
  }

  bool get_bool(const std::string& s, const std::string& k, bool dflt) const {
    const std::string v = get(s, k, "");
    if (v.empty()) return dflt;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw DataError("config [" + s + "] " + k + ": not a boolean: " + v);
  }

  // Canonical text form: sorted sections and keys.
  std::string serialize() const {
    std::ostringstream os;
    for (const auto& [section, kv] : sections_) {
      os << "[" << section << "]\n";
      for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
    }
    return os.str();
  }

  std::string digest() const { return hex_digest(fnv1a64(serialize())); }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write config file: " + path);
    out << serialize();
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

inline EncoderConfig encoder_config_from(const RunConfig& rc) {
  EncoderConfig c;
  c.d_e = static_cast<int>(rc.get_int("encoder", "d_e", c.d_e));
  c.d_h = static_cast<int>(rc.get_int("encoder", "d_h", c.d_h));
  c.n_layers = static_cast<int>(rc.get_int("encoder", "n_layers", c.n_layers));
  c.n_heads = static_cast<int>(rc.get_int("encoder", "n_heads", c.n_heads));
  c.dropout = rc.get_double("encoder", "dropout", c.dropout);
  c.d_mlp = static_cast<int>(rc.get_int("encoder", "d_mlp", c.d_mlp));
  c.max_len = static_cast<int>(rc.get_int("corpus", "max_len", c.max_len));
  return c;
}

inline TrainConfig train_config_from(const RunConfig& rc) {
  TrainConfig c;
  c.lr = rc.get_double("train", "lr", c.lr);
  c.batch_size = static_cast<int>(rc.get_int("train", "batch_size", c.batch_size));
  c.max_epochs = static_cast<int>(rc.get_int("train", "max_epochs", c.max_epochs));
  c.seed = static_cast<std::uint64_t>(rc.get_int("train", "seed", static_cast<long long>(c.seed)));
  c.selection_split = rc.get("train", "selection", c.selection_split);
  c.clip_norm = rc.get_double("train", "clip_norm", c.clip_norm);
  return c;
}

inline GrlConfig grl_config_from(const RunConfig& rc) {
  GrlConfig c;
  c.lambda = rc.get_double("grl", "lambda", c.lambda);
  c.variant = parse_debias_variant(rc.get("grl", "variant", debias_variant_name(c.variant)));
  return c;
}

inline HexConfig hex_config_from(const RunConfig& rc) {
  HexConfig c;
  c.loss_weight_L = rc.get_double("hex", "loss_weight_l", c.loss_weight_L);
  c.loss_weight_G = rc.get_double("hex", "loss_weight_g", c.loss_weight_G);
  c.ridge_eps = rc.get_double("hex", "ridge_eps", c.ridge_eps);
  c.normalize_columns = rc.get_bool("hex", "normalize_columns", c.normalize_columns);
  c.freeze_bottom = rc.get_bool("hex", "freeze_bottom", c.freeze_bottom);
  c.debug_orthogonality = rc.get_bool("hex", "debug_orthogonality", c.debug_orthogonality);
  return c;
}

}  // namespace lexbias
