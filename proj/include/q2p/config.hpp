#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "q2p/model.hpp"
#include "q2p/sampler.hpp"
#include "q2p/toykg.hpp"
#include "q2p/trainer.hpp"

namespace q2p {

// Flat dotted-key view of a config file. `[section]` headers prefix the bare
// keys beneath them, so `[model]` + `d = 32` and a literal `model.d = 32`
// land on the same entry.
using KeyTable = std::map<std::string, std::string>;

// `origin` names the source in error messages; ParseError positions are
// 1-based line numbers.
KeyTable parse_key_table(const std::string& text, const std::string& origin);
KeyTable read_key_table_file(const std::string& path);

// --set payloads of the form key=value. Later entries win; entries may
// override file keys freely.
void apply_overrides(KeyTable& table, const std::vector<std::string>& sets);

struct RunPaths {
  std::string triples_train;
  std::string triples_valid;
  std::string triples_test;
  std::string data_dir = "data";  // sampled instance files and vocab
  std::string run_dir = "run";    // checkpoints, loss log, reports
  std::string checkpoint;         // overrides run_dir/final.ckpt for eval and answer
};

// One seed feeds every component; each derives its own named stream, so
// there are no per-component seed knobs.
struct RunConfig {
  std::uint64_t seed = 0;
  RunPaths paths;
  ModelConfig model;
  TrainConfig train;
  SampleConfig sample;
  ToyKgConfig toy;
  std::string eval_split = "test";
  std::size_t top_k = 10;

  // Rejects unknown keys and malformed values, then runs each sub-config's
  // own validation.
  static RunConfig from_table(const KeyTable& table);

  // Effective-config echo embedded into artifacts.
  nlohmann::json to_json() const;
};

}  // namespace q2p
