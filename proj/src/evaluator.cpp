#include "q2p/evaluator.hpp"

#include <algorithm>
#include <sstream>

namespace q2p {

namespace {

struct Accumulator {
  double rr = 0, h1 = 0, h3 = 0, h10 = 0;
  std::size_t n = 0;

  void add(double rr_, double h1_, double h3_, double h10_) {
    rr += rr_;
    h1 += h1_;
    h3 += h3_;
    h10 += h10_;
    n += 1;
  }
  RankStats mean() const {
    RankStats s;
    s.count = n;
    if (n) {
      s.mrr = rr / static_cast<double>(n);
      s.hits1 = h1 / static_cast<double>(n);
      s.hits3 = h3 / static_cast<double>(n);
      s.hits10 = h10 / static_cast<double>(n);
    }
    return s;
  }
};

nlohmann::json stats_json(const RankStats& s) {
  return {{"mrr", s.mrr},
          {"hits1", s.hits1},
          {"hits3", s.hits3},
          {"hits10", s.hits10},
          {"count", s.count}};
}

void csv_rows(std::ostringstream& out, const std::string& type, const RankStats& s,
              const char* suffix) {
  out << type << ",mrr" << suffix << "," << s.mrr << "," << s.count << "\n";
  out << type << ",hits@1" << suffix << "," << s.hits1 << "," << s.count << "\n";
  out << type << ",hits@3" << suffix << "," << s.hits3 << "," << s.count << "\n";
  out << type << ",hits@10" << suffix << "," << s.hits10 << "," << s.count << "\n";
}

}  // namespace

EvalReport evaluate(const std::vector<QueryInstance>& instances, ModelParams& params) {
  struct TypeAcc {
    Accumulator per_answer, per_query;
    std::size_t skipped = 0;
    std::vector<std::pair<std::size_t, std::size_t>> answer_counts;
  };
  std::vector<TypeAcc> acc(kNumQueryTypes + 1);  // last slot: other
  Accumulator overall_answer, overall_query;
  std::size_t skipped_total = 0, evaluated = 0;

  auto slot = [](QueryType t) {
    return t == QueryType::other ? kNumQueryTypes : static_cast<std::size_t>(t);
  };

  for (const auto& inst : instances) {
    if (inst.hard.empty()) {
      acc[slot(inst.type)].skipped += 1;
      skipped_total += 1;
      continue;
    }
    Tape32 tape(false);
    auto bound = BoundParams::bind(tape, params);
    Rng unused(0);
    auto particles = embed_query(bound, inst.query, Mode::eval, unused);
    const auto& scores = score_all(bound, particles).data;

    AnswerSet all;
    std::set_union(inst.easy.begin(), inst.easy.end(), inst.hard.begin(), inst.hard.end(),
                   std::back_inserter(all));

    Accumulator query_acc;
    for (EntityId h : inst.hard) {
      const std::size_t rank = filtered_rank(scores, h, all);
      query_acc.add(1.0 / static_cast<double>(rank), rank <= 1, rank <= 3, rank <= 10);
    }
    // pair sums feed the per-answer aggregate; the instance mean feeds the
    // per-query aggregate
    auto& ta = acc[slot(inst.type)];
    ta.per_answer.rr += query_acc.rr;
    ta.per_answer.h1 += query_acc.h1;
    ta.per_answer.h3 += query_acc.h3;
    ta.per_answer.h10 += query_acc.h10;
    ta.per_answer.n += query_acc.n;
    overall_answer.rr += query_acc.rr;
    overall_answer.h1 += query_acc.h1;
    overall_answer.h3 += query_acc.h3;
    overall_answer.h10 += query_acc.h10;
    overall_answer.n += query_acc.n;

    auto inst_mean = query_acc.mean();
    ta.per_query.add(inst_mean.mrr, inst_mean.hits1, inst_mean.hits3, inst_mean.hits10);
    overall_query.add(inst_mean.mrr, inst_mean.hits1, inst_mean.hits3, inst_mean.hits10);
    ta.answer_counts.emplace_back(inst.hard.size(), all.size());
    evaluated += 1;
  }

  EvalReport report;
  report.evaluated = evaluated;
  report.skipped_empty_hard = skipped_total;
  report.overall_per_answer = overall_answer.mean();
  report.overall_per_query = overall_query.mean();
  auto emit = [&](QueryType t, const TypeAcc& ta) {
    if (ta.per_query.n == 0 && ta.skipped == 0) return;
    TypeReport tr;
    tr.type = t;
    tr.instances = ta.per_query.n;
    tr.skipped = ta.skipped;
    tr.per_answer = ta.per_answer.mean();
    tr.per_query = ta.per_query.mean();
    tr.answer_counts = ta.answer_counts;
    report.types.push_back(std::move(tr));
  };
  for (QueryType t : all_types()) emit(t, acc[slot(t)]);
  emit(QueryType::other, acc[kNumQueryTypes]);
  return report;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json types_json = nlohmann::json::object();
  for (const auto& tr : types) {
    nlohmann::json counts = nlohmann::json::array();
    for (const auto& [hard, total] : tr.answer_counts)
      counts.push_back({{"hard", hard}, {"all", total}});
    types_json[std::string(to_string(tr.type))] = {{"instances", tr.instances},
                                      {"skipped", tr.skipped},
                                      {"per_answer", stats_json(tr.per_answer)},
                                      {"per_query", stats_json(tr.per_query)},
                                      {"answer_counts", counts}};
  }
  nlohmann::json out = {{"evaluated", evaluated},
                        {"skipped_empty_hard", skipped_empty_hard},
                        {"overall", {{"per_answer", stats_json(overall_per_answer)},
                                     {"per_query", stats_json(overall_per_query)}}},
                        {"types", types_json}};
  if (!config_echo.is_null()) out["config"] = config_echo;
  return out;
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "type,metric,value,count\n";
  for (const auto& tr : types) {
    csv_rows(out, std::string(to_string(tr.type)), tr.per_answer, "");
    csv_rows(out, std::string(to_string(tr.type)), tr.per_query, "_per_query");
  }
  csv_rows(out, "all", overall_per_answer, "");
  csv_rows(out, "all", overall_per_query, "_per_query");
  return out.str();
}

}  // namespace q2p
