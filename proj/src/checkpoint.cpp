#include "q2p/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <tuple>

#include <nlohmann/json.hpp>

#include "q2p/errors.hpp"

namespace q2p {

namespace {

constexpr char kMagic[8] = {'Q', '2', 'P', 'C', 'K', 'P', 'T', '\n'};
constexpr std::uint64_t kFormatVersion = 1;

void put_u64(std::string& out, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& buf, std::size_t at) {
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i)
    x |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
  return x;
}

void put_f32(std::string& out, float f) {
  auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

float get_f32(const std::string& buf, std::size_t at) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i)
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

struct ArrayEntry {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  const std::vector<float>* flat = nullptr;  // save side only
};

// Array sequence for a given shape: parameter values first, then optimizer
// first/second moments under opt.m.* / opt.v.* names.
std::vector<ArrayEntry> array_plan(const ModelParams& params, const OptimizerState* opt) {
  std::vector<ArrayEntry> plan;
  auto ps = params.all();
  for (auto* p : ps) plan.push_back({p->name, p->value.rows, p->value.cols, &p->value.data});
  if (opt) {
    if (opt->m.size() != ps.size() || opt->v.size() != ps.size())
      throw CheckpointError("optimizer state has " + std::to_string(opt->m.size()) +
                            " moment pairs for " + std::to_string(ps.size()) + " parameters");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (opt->m[i].size() != ps[i]->value.size() || opt->v[i].size() != ps[i]->value.size())
        throw CheckpointError("optimizer moment size mismatch for " + ps[i]->name);
      plan.push_back({"opt.m." + ps[i]->name, ps[i]->value.rows, ps[i]->value.cols, &opt->m[i]});
      plan.push_back({"opt.v." + ps[i]->name, ps[i]->value.rows, ps[i]->value.cols, &opt->v[i]});
    }
  }
  return plan;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const OptimizerState* opt,
                     const std::string& path) {
  auto plan = array_plan(params, opt);

  nlohmann::json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["model"] = {{"d", params.cfg.d},
                       {"K", params.cfg.K},
                       {"dropout", params.cfg.dropout},
                       {"label_smoothing", params.cfg.label_smoothing},
                       {"hidden", params.cfg.hidden},
                       {"init_scale", params.cfg.init_scale}};
  manifest["num_entities"] = params.num_entities;
  manifest["num_relations"] = params.num_relations;
  manifest["has_optimizer"] = opt != nullptr;
  manifest["optimizer_step"] = opt ? opt->step : 0;
  auto arrays = nlohmann::json::array();
  for (const auto& e : plan)
    arrays.push_back({{"name", e.name}, {"rows", e.rows}, {"cols", e.cols}});
  manifest["arrays"] = arrays;
  const std::string manifest_text = manifest.dump();

  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u64(out, manifest_text.size());
  out += manifest_text;
  for (const auto& e : plan)
    for (float f : *e.flat) put_f32(out, f);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot move " + tmp + " into place at " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path, const ModelConfig* expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < sizeof(kMagic) + 8 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError(path + ": not a checkpoint file");
  const std::uint64_t manifest_len = get_u64(buf, sizeof(kMagic));
  const std::size_t manifest_at = sizeof(kMagic) + 8;
  if (manifest_at + manifest_len > buf.size())
    throw CheckpointError(path + ": truncated manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(buf.substr(manifest_at, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ": manifest is not valid JSON: " + e.what());
  }

  try {
    const auto version = manifest.at("format_version").get<std::uint64_t>();
    if (version != kFormatVersion)
      throw CheckpointError(path + ": format version " + std::to_string(version) +
                            " unsupported (expected " + std::to_string(kFormatVersion) + ")");

    ModelConfig cfg;
    const auto& m = manifest.at("model");
    cfg.d = m.at("d").get<std::size_t>();
    cfg.K = m.at("K").get<std::size_t>();
    cfg.dropout = m.at("dropout").get<double>();
    cfg.label_smoothing = m.at("label_smoothing").get<double>();
    cfg.hidden = m.at("hidden").get<std::size_t>();
    cfg.init_scale = m.at("init_scale").get<double>();
    const auto num_entities = manifest.at("num_entities").get<std::size_t>();
    const auto num_relations = manifest.at("num_relations").get<std::size_t>();
    const bool has_opt = manifest.at("has_optimizer").get<bool>();

    if (expected) {
      auto structural = [](const ModelConfig& c) {
        return std::tuple(c.d, c.K, c.hidden_width());
      };
      if (structural(cfg) != structural(*expected))
        throw CheckpointError(path + ": checkpoint model is d=" + std::to_string(cfg.d) +
                              " K=" + std::to_string(cfg.K) + " hidden=" +
                              std::to_string(cfg.hidden_width()) + " but the config requests d=" +
                              std::to_string(expected->d) + " K=" + std::to_string(expected->K) +
                              " hidden=" + std::to_string(expected->hidden_width()));
    }

    LoadedCheckpoint out;
    out.params = ModelParams::init(cfg, num_entities, num_relations, Rng(0));
    OptimizerState opt;
    if (has_opt) {
      opt = OptimizerState::for_params(out.params);
      opt.step = manifest.at("optimizer_step").get<std::uint64_t>();
    }

    // the stored array list must match the shape-derived plan exactly
    auto plan = array_plan(out.params, has_opt ? &opt : nullptr);
    const auto& arrays = manifest.at("arrays");
    if (!arrays.is_array() || arrays.size() != plan.size())
      throw CheckpointError(path + ": manifest lists " + std::to_string(arrays.size()) +
                            " arrays, expected " + std::to_string(plan.size()));
    std::size_t payload = manifest_at + manifest_len;
    auto params_list = out.params.all();
    for (std::size_t i = 0; i < plan.size(); ++i) {
      const auto& entry = arrays[i];
      const auto name = entry.at("name").get<std::string>();
      const auto rows = entry.at("rows").get<std::size_t>();
      const auto cols = entry.at("cols").get<std::size_t>();
      if (name != plan[i].name)
        throw CheckpointError(path + ": array " + std::to_string(i) + " is '" + name +
                              "', expected '" + plan[i].name + "'");
      if (rows != plan[i].rows || cols != plan[i].cols)
        throw CheckpointError(path + ": array '" + name + "' stored as " + std::to_string(rows) +
                              "x" + std::to_string(cols) + ", expected " +
                              std::to_string(plan[i].rows) + "x" + std::to_string(plan[i].cols));
      const std::size_t count = rows * cols;
      if (payload + count * 4 > buf.size())
        throw CheckpointError(path + ": truncated while reading '" + name + "'");
      std::vector<float>* dest = nullptr;
      if (i < params_list.size()) {
        dest = &params_list[i]->value.data;
      } else {
        const std::size_t pi = (i - params_list.size()) / 2;
        dest = (i - params_list.size()) % 2 == 0 ? &opt.m[pi] : &opt.v[pi];
      }
      for (std::size_t j = 0; j < count; ++j) (*dest)[j] = get_f32(buf, payload + j * 4);
      payload += count * 4;
    }
    if (payload != buf.size())
      throw CheckpointError(path + ": " + std::to_string(buf.size() - payload) +
                            " trailing bytes after the last array");
    if (has_opt) out.opt = std::move(opt);
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ": malformed manifest: " + e.what());
  }
}

}  // namespace q2p
