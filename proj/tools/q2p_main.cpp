// Command line front end: dataset generation, training, evaluation, ad-hoc
// query answering, and the exact-oracle / gradient self checks. Every
// subcommand reads one config (file + --set overrides), derives all
// randomness from the single seed, and embeds the effective config in its
// artifacts. Exit codes: 0 success, 1 internal or numeric failure, 2 usage
// or input error; failures print one JSON error object to stderr.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "q2p/checkpoint.hpp"
#include "q2p/config.hpp"
#include "q2p/evaluator.hpp"
#include "q2p/gradsuite.hpp"
#include "q2p/model.hpp"
#include "q2p/oracle.hpp"
#include "q2p/sampler.hpp"
#include "q2p/toykg.hpp"
#include "q2p/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace q2p;

namespace {

constexpr int kArtifactVersion = 1;
constexpr const char* kConfigEnv = "Q2P_CONFIG";

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path,
                  std::string("config file; defaults to $") + kConfigEnv + " when set");
  cmd->add_option("--set", c.sets, "override a config key, e.g. --set model.K=3");
}

RunConfig load_config(const Common& c) {
  std::string path = c.config_path;
  if (path.empty())
    if (const char* env = std::getenv(kConfigEnv)) path = env;
  KeyTable table;
  if (!path.empty()) table = read_key_table_file(path);
  apply_overrides(table, c.sets);
  return RunConfig::from_table(table);
}

void require_file(const std::string& what, const std::string& path) {
  if (path.empty()) throw InputError("config sets no " + what + " path");
  if (!fs::exists(path)) throw InputError("missing " + what + " file: " + path);
}

GraphSplits load_graphs(const RunConfig& cfg) {
  require_file("paths.triples_train", cfg.paths.triples_train);
  require_file("paths.triples_valid", cfg.paths.triples_valid);
  require_file("paths.triples_test", cfg.paths.triples_test);
  return build_splits(cfg.paths.triples_train, cfg.paths.triples_valid, cfg.paths.triples_test);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

json artifact_base(const RunConfig& cfg) {
  return {{"format_version", kArtifactVersion}, {"config", cfg.to_json()}};
}

void check_vocab_fit(const ModelParams& params, const GraphSplits& splits) {
  if (params.num_entities != splits.vocabs.entities.size() ||
      params.num_relations != splits.vocabs.relations.size())
    throw InputError("checkpoint covers " + std::to_string(params.num_entities) +
                     " entities / " + std::to_string(params.num_relations) +
                     " relations but the graph files define " +
                     std::to_string(splits.vocabs.entities.size()) + " / " +
                     std::to_string(splits.vocabs.relations.size()));
}

LoadedCheckpoint load_model(const RunConfig& cfg, const GraphSplits& splits) {
  std::string path = cfg.paths.checkpoint;
  if (path.empty()) path = (fs::path(cfg.paths.run_dir) / "final.ckpt").string();
  require_file("checkpoint", path);
  auto loaded = load_checkpoint(path, &cfg.model);
  check_vocab_fit(loaded.params, splits);
  return loaded;
}

void cmd_toy_kg(const Common& c, const std::string& out_flag) {
  RunConfig cfg = load_config(c);
  const std::string out =
      out_flag.empty() ? (fs::path(cfg.paths.data_dir) / "toy").string() : out_flag;
  write_toy_triples(cfg.toy, out);
  auto splits = generate_toy_splits(cfg.toy);

  json meta = artifact_base(cfg);
  meta["edges"] = {{"train_graph", splits.train.edge_count()},
                   {"valid_graph", splits.valid.edge_count()},
                   {"test_graph", splits.test.edge_count()}};
  meta["files"] = {(fs::path(out) / "train.tsv").string(),
                   (fs::path(out) / "valid.tsv").string(),
                   (fs::path(out) / "test.tsv").string()};
  write_text(fs::path(out) / "toykg.json", meta.dump(2) + "\n");
  std::cout << meta.dump() << "\n";
}

void cmd_sample(const Common& c) {
  RunConfig cfg = load_config(c);
  auto splits = load_graphs(cfg);
  fs::create_directories(cfg.paths.data_dir);
  auto stats = generate_dataset(splits, cfg.sample, cfg.paths.data_dir);

  json out = artifact_base(cfg);
  out["stats"] = json::array();
  for (const auto& st : stats)
    out["stats"].push_back({{"split", st.split},
                            {"type", std::string(to_string(st.type))},
                            {"requested", st.requested},
                            {"produced", st.produced},
                            {"attempts", st.attempts},
                            {"duplicate_rejections", st.duplicate_rejections},
                            {"answer_rejections", st.answer_rejections}});
  out["files"] = {(fs::path(cfg.paths.data_dir) / "train.jsonl").string(),
                  (fs::path(cfg.paths.data_dir) / "valid.jsonl").string(),
                  (fs::path(cfg.paths.data_dir) / "test.jsonl").string()};
  write_text(fs::path(cfg.paths.data_dir) / "stats.json", out.dump(2) + "\n");

  json vocab = {{"format_version", kArtifactVersion},
                {"entities", json::parse(splits.vocabs.entities.to_json())},
                {"relations", json::parse(splits.vocabs.relations.to_json())}};
  write_text(fs::path(cfg.paths.data_dir) / "vocab.json", vocab.dump(2) + "\n");
  std::cout << out.dump() << "\n";
}

void cmd_train(const Common& c, const std::string& resume) {
  RunConfig cfg = load_config(c);
  auto splits = load_graphs(cfg);
  const fs::path data_dir = cfg.paths.data_dir;
  require_file("training instances", (data_dir / "train.jsonl").string());
  auto instances = read_instances((data_dir / "train.jsonl").string(), splits.vocabs);

  std::optional<ModelParams> params;
  std::optional<OptimizerState> opt;
  if (!resume.empty()) {
    require_file("resume checkpoint", resume);
    auto loaded = load_checkpoint(resume, &cfg.model);
    check_vocab_fit(loaded.params, splits);
    params = std::move(loaded.params);
    opt = loaded.opt ? std::move(*loaded.opt) : OptimizerState::for_params(*params);
  } else {
    params = ModelParams::init(cfg.model, splits.vocabs.entities.size(),
                               splits.vocabs.relations.size(), Rng(cfg.seed));
    opt = OptimizerState::for_params(*params);
  }

  fs::create_directories(cfg.paths.run_dir);
  const fs::path csv_path = fs::path(cfg.paths.run_dir) / "loss.csv";
  // resumed runs append so the combined log matches an uninterrupted one
  std::ofstream csv(csv_path, opt->step > 0 ? std::ios::app : std::ios::trunc);
  if (!csv) throw IoError("cannot open " + csv_path.string() + " for writing");

  TrainSinks sinks;
  sinks.checkpoint_dir = cfg.paths.run_dir;
  sinks.loss_csv = &csv;
  std::vector<QueryInstance> valid_instances;
  if (cfg.train.checkpoint_interval > 0 && fs::exists(data_dir / "valid.jsonl")) {
    valid_instances = read_instances((data_dir / "valid.jsonl").string(), splits.vocabs);
    const bool usable = std::any_of(valid_instances.begin(), valid_instances.end(),
                                    [](const QueryInstance& i) { return !i.hard.empty(); });
    if (usable)
      sinks.valid_metric = [&valid_instances](const ModelParams& p) {
        // evaluation never writes through the binding; see its unit tests
        return evaluate(valid_instances, const_cast<ModelParams&>(p)).overall_per_answer.mrr;
      };
  }

  auto result = train_loop(*params, *opt, instances, cfg.train, sinks);
  csv.flush();

  json out = artifact_base(cfg);
  out["steps_run"] = result.steps_run;
  out["final_step"] = opt->step;
  out["final_loss"] = result.final_loss;
  out["checkpoints_written"] = result.checkpoints_written;
  if (result.has_best) out["best_valid_mrr"] = result.best_valid_metric;
  out["loss_csv"] = csv_path.string();
  write_text(fs::path(cfg.paths.run_dir) / "train_summary.json", out.dump(2) + "\n");
  std::cout << out.dump() << "\n";
}

void cmd_eval(const Common& c) {
  RunConfig cfg = load_config(c);
  auto splits = load_graphs(cfg);
  auto loaded = load_model(cfg, splits);

  const fs::path inst_path = fs::path(cfg.paths.data_dir) / (cfg.eval_split + ".jsonl");
  require_file(cfg.eval_split + " instances", inst_path.string());
  auto instances = read_instances(inst_path.string(), splits.vocabs);

  auto report = evaluate(instances, loaded.params);
  report.config_echo = cfg.to_json();
  json out = report.to_json();
  out["format_version"] = kArtifactVersion;

  fs::create_directories(cfg.paths.run_dir);
  write_text(fs::path(cfg.paths.run_dir) / ("report_" + cfg.eval_split + ".json"),
             out.dump(2) + "\n");
  write_text(fs::path(cfg.paths.run_dir) / ("report_" + cfg.eval_split + ".csv"),
             report.to_csv());
  std::cout << out.dump() << "\n";
}

void cmd_answer(const Common& c, const std::string& query_text, std::size_t top_k_flag) {
  RunConfig cfg = load_config(c);
  if (top_k_flag > 0) cfg.top_k = top_k_flag;  // flag wins over config
  auto splits = load_graphs(cfg);
  auto loaded = load_model(cfg, splits);

  Query q = parse_query(query_text, splits.vocabs);
  Tape32 tape(false);
  auto bound = BoundParams::bind(tape, loaded.params);
  Rng unused(0);
  auto particles = embed_query(bound, q, Mode::eval, unused);
  const auto& scores = score_all(bound, particles).data;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  json out = artifact_base(cfg);
  out["query"] = query_text;
  out["normalized"] = serialize_query(q, splits.vocabs);
  out["type"] = std::string(to_string(classify_query(q)));
  out["top"] = json::array();
  for (std::size_t i = 0; i < std::min(cfg.top_k, order.size()); ++i)
    out["top"].push_back({{"entity", splits.vocabs.entities.label(order[i])},
                          {"id", order[i]},
                          {"score", scores[order[i]]}});
  std::cout << out.dump() << "\n";
}

void cmd_oracle(const Common& c, const std::string& query_text, const std::string& graph) {
  RunConfig cfg = load_config(c);
  auto splits = load_graphs(cfg);
  const KnowledgeGraph& g = splits.by_name(graph);
  Query q = parse_query(query_text, splits.vocabs);
  AnswerSet ans = answer(q, g);

  json out = artifact_base(cfg);
  out["query"] = query_text;
  out["normalized"] = serialize_query(q, splits.vocabs);
  out["type"] = std::string(to_string(classify_query(q)));
  out["graph"] = graph;
  out["answers"] = json::array();
  for (EntityId e : ans) out["answers"].push_back(splits.vocabs.entities.label(e));
  out["count"] = ans.size();
  std::cout << out.dump() << "\n";
}

void cmd_grad_check(std::uint64_t seed, std::vector<std::size_t> widths, double tolerance) {
  if (widths.empty()) widths = {1, 3};
  json cases = json::array();
  double worst = 0.0;
  for (std::size_t K : widths) {
    for (const auto& cs : gradient_suite(seed, K)) {
      cases.push_back({{"name", cs.name},
                       {"K", K},
                       {"epsilon", cs.epsilon},
                       {"max_rel_error", cs.report.max_rel_error},
                       {"coords_checked", cs.report.coords_checked},
                       {"kinks_skipped", cs.report.kinks_skipped}});
      worst = std::max(worst, cs.report.max_rel_error);
    }
  }
  json out = {{"format_version", kArtifactVersion},
              {"seed", seed},
              {"tolerance", tolerance},
              {"worst", worst},
              {"pass", worst < tolerance},
              {"cases", cases}};
  std::cout << out.dump() << "\n";
  if (worst >= tolerance)
    throw NumericError("gradient suite worst relative error " + std::to_string(worst) +
                       " reaches the tolerance " + std::to_string(tolerance));
}

void cmd_import(const Common& c, const std::string& input, const std::string& out_name) {
  RunConfig cfg = load_config(c);
  auto splits = load_graphs(cfg);
  require_file("benchmark dump", input);
  auto instances = import_benchmark(input, splits.vocabs);

  fs::create_directories(cfg.paths.data_dir);
  const fs::path out_path = fs::path(cfg.paths.data_dir) / out_name;
  std::string body;
  std::vector<std::size_t> by_type(kNumQueryTypes + 1, 0);
  for (const auto& inst : instances) {
    body += instance_to_json(inst, splits.vocabs);
    body += '\n';
    by_type[std::min<std::size_t>(static_cast<std::size_t>(inst.type), kNumQueryTypes)] += 1;
  }
  write_text(out_path, body);

  json out = artifact_base(cfg);
  out["instances"] = instances.size();
  out["file"] = out_path.string();
  out["by_type"] = json::object();
  for (QueryType t : all_types())
    if (by_type[static_cast<std::size_t>(t)] > 0)
      out["by_type"][std::string(to_string(t))] = by_type[static_cast<std::size_t>(t)];
  std::cout << out.dump() << "\n";
}

int fail(int code, const char* type, const std::string& message,
         std::optional<std::size_t> position = {}) {
  json e = {{"error", {{"type", type}, {"message", message}}}, {"exit_code", code}};
  if (position) e["error"]["position"] = *position;
  std::cerr << e.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-particle query embeddings over knowledge graphs"};
  app.require_subcommand(1);

  Common common;

  auto* toy = app.add_subcommand("toy-kg", "generate the synthetic clustered triple files");
  std::string toy_out;
  add_common(toy, common);
  toy->add_option("--out", toy_out, "output directory (default: <data_dir>/toy)");
  toy->callback([&] { cmd_toy_kg(common, toy_out); });

  auto* sample = app.add_subcommand("sample", "sample query instances from the graph splits");
  add_common(sample, common);
  sample->callback([&] { cmd_sample(common); });

  auto* train = app.add_subcommand("train", "train a model on sampled instances");
  std::string resume;
  add_common(train, common);
  train->add_option("--resume", resume, "continue from a saved checkpoint");
  train->callback([&] { cmd_train(common, resume); });

  auto* eval = app.add_subcommand("eval", "rank answers with a checkpoint and report metrics");
  add_common(eval, common);
  eval->callback([&] { cmd_eval(common); });

  auto* ans = app.add_subcommand("answer", "rank entities for one query");
  std::string query_text;
  std::size_t top_k = 0;
  add_common(ans, common);
  ans->add_option("--query", query_text, "query in the s-expression DSL")->required();
  ans->add_option("--top-k", top_k, "entities to print (default from config)");
  ans->callback([&] { cmd_answer(common, query_text, top_k); });

  auto* oracle = app.add_subcommand("oracle-check", "exact symbolic answers for one query");
  std::string graph = "test";
  add_common(oracle, common);
  oracle->add_option("--query", query_text, "query in the s-expression DSL")->required();
  oracle->add_option("--graph", graph, "graph to answer on: train, valid, or test");
  oracle->callback([&] { cmd_oracle(common, query_text, graph); });

  auto* grad = app.add_subcommand("grad-check", "finite-difference sweep over all operations");
  std::uint64_t gc_seed = 106;
  std::vector<std::size_t> gc_widths;
  double gc_tol = 1e-5;
  grad->add_option("--seed", gc_seed, "parameter draw seed");
  grad->add_option("--particles", gc_widths, "particle counts to test (default 1 and 3)");
  grad->add_option("--tolerance", gc_tol, "worst relative error allowed");
  grad->callback([&] { cmd_grad_check(gc_seed, gc_widths, gc_tol); });

  auto* imp = app.add_subcommand("import", "convert a nested-array benchmark dump");
  std::string import_input, import_out = "imported.jsonl";
  add_common(imp, common);
  imp->add_option("--input", import_input, "benchmark JSON-lines file")->required();
  imp->add_option("--out", import_out, "output file name under data_dir");
  imp->callback([&] { cmd_import(common, import_input, import_out); });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(2, "usage", e.what());
  } catch (const ParseError& e) {
    return fail(2, "parse", e.what(), e.position);
  } catch (const SamplingExhausted& e) {
    return fail(2, "input", e.what());
  } catch (const CheckpointError& e) {
    return fail(2, "input", e.what());
  } catch (const InputError& e) {
    return fail(2, "input", e.what());
  } catch (const IoError& e) {
    return fail(2, "input", e.what());
  } catch (const NumericError& e) {
    return fail(1, "numeric", e.what());
  } catch (const std::exception& e) {
    return fail(1, "internal", e.what());
  }
}
