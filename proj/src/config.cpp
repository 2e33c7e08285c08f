#include "q2p/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace q2p {

namespace {

std::string strip(std::string_view s) {
  const auto from = s.find_first_not_of(" \t\r");
  if (from == std::string_view::npos) return "";
  const auto to = s.find_last_not_of(" \t\r");
  return std::string(s.substr(from, to - from + 1));
}

// Removes an unquoted trailing comment, then surrounding quotes if present.
std::string clean_value(std::string raw, const std::string& where) {
  bool quoted = false;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == '"') quoted = !quoted;
    if (raw[i] == '#' && !quoted) {
      raw = strip(raw.substr(0, i));
      break;
    }
  }
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"')
    return raw.substr(1, raw.size() - 2);
  if (!raw.empty() && (raw.front() == '"' || raw.back() == '"'))
    throw InputError(where + ": unbalanced quotes in value");
  return raw;
}

bool valid_key(std::string_view key) {
  if (key.empty() || key.front() == '.' || key.back() == '.') return false;
  if (key.find("..") != std::string_view::npos) return false;
  for (char c : key)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.')) return false;
  return true;
}

std::uint64_t as_u64(const std::string& key, const std::string& v) {
  std::uint64_t out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw InputError("config key " + key + ": expected a non-negative integer, got \"" + v + "\"");
  return out;
}

double as_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw InputError("config key " + key + ": expected a number, got \"" + v + "\"");
  }
}

bool as_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw InputError("config key " + key + ": expected true or false, got \"" + v + "\"");
}

// Consumes entries from a working copy so leftovers identify unknown keys.
struct TableReader {
  KeyTable pending;

  template <class F>
  void take(const std::string& key, const F& apply) {
    auto it = pending.find(key);
    if (it == pending.end()) return;
    apply(it->second);
    pending.erase(it);
  }

  void finish() const {
    if (pending.empty()) return;
    std::string msg = "unknown config keys:";
    for (const auto& [k, _] : pending) msg += " " + k;
    throw InputError(msg);
  }
};

}  // namespace

KeyTable parse_key_table(const std::string& text, const std::string& origin) {
  KeyTable table;
  std::string prefix;
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const std::string where = origin + ":" + std::to_string(lineno);
    std::string s = strip(line);
    if (s.empty() || s.front() == '#') continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw ParseError(where + ": section header missing closing bracket", lineno);
      prefix = strip(s.substr(1, s.size() - 2));
      if (!valid_key(prefix)) throw ParseError(where + ": bad section name", lineno);
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ParseError(where + ": expected key = value", lineno);
    std::string key = strip(s.substr(0, eq));
    if (!prefix.empty()) key = prefix + "." + key;
    if (!valid_key(key)) throw ParseError(where + ": bad key \"" + key + "\"", lineno);
    const std::string value = clean_value(strip(s.substr(eq + 1)), where);
    if (!table.emplace(key, value).second)
      throw ParseError(where + ": duplicate key " + key, lineno);
  }
  return table;
}

KeyTable read_key_table_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_key_table(text, path);
}

void apply_overrides(KeyTable& table, const std::vector<std::string>& sets) {
  for (const std::string& entry : sets) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos)
      throw InputError("--set expects key=value, got \"" + entry + "\"");
    const std::string key = strip(entry.substr(0, eq));
    if (!valid_key(key)) throw InputError("--set: bad key \"" + key + "\"");
    table[key] = clean_value(strip(entry.substr(eq + 1)), "--set " + key);
  }
}

RunConfig RunConfig::from_table(const KeyTable& table) {
  RunConfig cfg;
  TableReader r{table};

  r.take("seed", [&](const std::string& v) { cfg.seed = as_u64("seed", v); });

  r.take("paths.triples_train", [&](const std::string& v) { cfg.paths.triples_train = v; });
  r.take("paths.triples_valid", [&](const std::string& v) { cfg.paths.triples_valid = v; });
  r.take("paths.triples_test", [&](const std::string& v) { cfg.paths.triples_test = v; });
  r.take("paths.data_dir", [&](const std::string& v) { cfg.paths.data_dir = v; });
  r.take("paths.run_dir", [&](const std::string& v) { cfg.paths.run_dir = v; });
  r.take("paths.checkpoint", [&](const std::string& v) { cfg.paths.checkpoint = v; });

  r.take("model.d", [&](const std::string& v) { cfg.model.d = as_u64("model.d", v); });
  r.take("model.K", [&](const std::string& v) { cfg.model.K = as_u64("model.K", v); });
  r.take("model.dropout",
         [&](const std::string& v) { cfg.model.dropout = as_double("model.dropout", v); });
  r.take("model.label_smoothing", [&](const std::string& v) {
    cfg.model.label_smoothing = as_double("model.label_smoothing", v);
  });
  r.take("model.hidden",
         [&](const std::string& v) { cfg.model.hidden = as_u64("model.hidden", v); });
  r.take("model.init_scale",
         [&](const std::string& v) { cfg.model.init_scale = as_double("model.init_scale", v); });

  r.take("train.lr", [&](const std::string& v) { cfg.train.lr = as_double("train.lr", v); });
  r.take("train.batch_size",
         [&](const std::string& v) { cfg.train.batch_size = as_u64("train.batch_size", v); });
  r.take("train.total_steps",
         [&](const std::string& v) { cfg.train.total_steps = as_u64("train.total_steps", v); });
  r.take("train.checkpoint_interval", [&](const std::string& v) {
    cfg.train.checkpoint_interval = as_u64("train.checkpoint_interval", v);
  });
  r.take("train.beta1",
         [&](const std::string& v) { cfg.train.beta1 = as_double("train.beta1", v); });
  r.take("train.beta2",
         [&](const std::string& v) { cfg.train.beta2 = as_double("train.beta2", v); });
  r.take("train.adam_eps",
         [&](const std::string& v) { cfg.train.adam_eps = as_double("train.adam_eps", v); });
  r.take("train.log_timing",
         [&](const std::string& v) { cfg.train.log_timing = as_bool("train.log_timing", v); });

  r.take("sample.train_per_type", [&](const std::string& v) {
    cfg.sample.train_per_type = as_u64("sample.train_per_type", v);
  });
  r.take("sample.eval_per_type", [&](const std::string& v) {
    cfg.sample.eval_per_type = as_u64("sample.eval_per_type", v);
  });
  r.take("sample.max_attempts", [&](const std::string& v) {
    cfg.sample.max_attempts = as_u64("sample.max_attempts", v);
  });

  r.take("toy.clusters", [&](const std::string& v) { cfg.toy.clusters = as_u64("toy.clusters", v); });
  r.take("toy.cluster_size",
         [&](const std::string& v) { cfg.toy.cluster_size = as_u64("toy.cluster_size", v); });
  r.take("toy.num_relations",
         [&](const std::string& v) { cfg.toy.num_relations = as_u64("toy.num_relations", v); });
  r.take("toy.edge_prob",
         [&](const std::string& v) { cfg.toy.edge_prob = as_double("toy.edge_prob", v); });
  r.take("toy.train_cut",
         [&](const std::string& v) { cfg.toy.train_cut = as_double("toy.train_cut", v); });
  r.take("toy.valid_cut",
         [&](const std::string& v) { cfg.toy.valid_cut = as_double("toy.valid_cut", v); });

  r.take("eval.split", [&](const std::string& v) {
    if (v != "valid" && v != "test")
      throw InputError("config key eval.split: expected valid or test, got \"" + v + "\"");
    cfg.eval_split = v;
  });
  r.take("answer.top_k", [&](const std::string& v) {
    cfg.top_k = as_u64("answer.top_k", v);
    if (cfg.top_k == 0) throw InputError("config key answer.top_k must be positive");
  });

  r.finish();

  // one seed, fanned out; components namespace their own streams
  cfg.train.seed = cfg.seed;
  cfg.sample.seed = cfg.seed;
  cfg.toy.seed = cfg.seed;

  cfg.model.validate();
  cfg.train.validate();
  cfg.toy.validate();
  return cfg;
}

nlohmann::json RunConfig::to_json() const {
  return {
      {"seed", seed},
      {"paths",
       {{"triples_train", paths.triples_train},
        {"triples_valid", paths.triples_valid},
        {"triples_test", paths.triples_test},
        {"data_dir", paths.data_dir},
        {"run_dir", paths.run_dir},
        {"checkpoint", paths.checkpoint}}},
      {"model",
       {{"d", model.d},
        {"K", model.K},
        {"dropout", model.dropout},
        {"label_smoothing", model.label_smoothing},
        {"hidden", model.hidden},
        {"init_scale", model.init_scale}}},
      {"train",
       {{"lr", train.lr},
        {"batch_size", train.batch_size},
        {"total_steps", train.total_steps},
        {"checkpoint_interval", train.checkpoint_interval},
        {"beta1", train.beta1},
        {"beta2", train.beta2},
        {"adam_eps", train.adam_eps},
        {"log_timing", train.log_timing}}},
      {"sample",
       {{"train_per_type", sample.train_per_type},
        {"eval_per_type", sample.eval_per_type},
        {"max_attempts", sample.max_attempts}}},
      {"toy",
       {{"clusters", toy.clusters},
        {"cluster_size", toy.cluster_size},
        {"num_relations", toy.num_relations},
        {"edge_prob", toy.edge_prob},
        {"train_cut", toy.train_cut},
        {"valid_cut", toy.valid_cut}}},
      {"eval", {{"split", eval_split}}},
      {"answer", {{"top_k", top_k}}},
  };
}

}  // namespace q2p
