#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "q2p/errors.hpp"
#include "q2p/model.hpp"
#include "q2p/sampler.hpp"

namespace q2p {

// Filtered rank of `answer`: one plus the number of non-answer entities
// scoring strictly higher, with score ties against non-answers counted as
// ranked above (the pessimistic convention). Other correct answers never
// compete.
template <class S>
std::size_t filtered_rank(const std::vector<S>& scores, EntityId answer,
                          const AnswerSet& all_answers) {
  if (answer >= scores.size())
    throw ContractError("answer id " + std::to_string(answer) + " outside the score vector");
  if (!std::binary_search(all_answers.begin(), all_answers.end(), answer))
    throw ContractError("answer " + std::to_string(answer) + " missing from all_answers");
  const S own = scores[answer];
  if (!std::isfinite(static_cast<double>(own)))
    throw NumericError("non-finite score for answer " + std::to_string(answer));
  std::size_t above = 0;
  auto filter = all_answers.begin();
  for (std::size_t v = 0; v < scores.size(); ++v) {
    while (filter != all_answers.end() && *filter < v) ++filter;
    if (filter != all_answers.end() && *filter == v) continue;
    if (!std::isfinite(static_cast<double>(scores[v])))
      throw NumericError("non-finite score for entity " + std::to_string(v));
    if (scores[v] >= own) ++above;
  }
  return 1 + above;
}

// Mean metrics over some population (either (instance, hard-answer) pairs or
// instances).
struct RankStats {
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
  std::size_t count = 0;
};

struct TypeReport {
  QueryType type = QueryType::other;
  std::size_t instances = 0;  // evaluated
  std::size_t skipped = 0;    // dropped for an empty hard set
  RankStats per_answer;
  RankStats per_query;
  // per evaluated instance, in input order: {hard answers, easy+hard answers}
  std::vector<std::pair<std::size_t, std::size_t>> answer_counts;
};

struct EvalReport {
  std::vector<TypeReport> types;  // only types present, in enum order
  RankStats overall_per_answer;
  RankStats overall_per_query;
  std::size_t evaluated = 0;
  std::size_t skipped_empty_hard = 0;
  nlohmann::json config_echo;  // filled by the caller before writing

  nlohmann::json to_json() const;
  std::string to_csv() const;  // flat `type,metric,value,count`
};

// Scores every instance in eval mode (deterministic thinning, no dropout)
// and aggregates filtered-rank metrics per type. Instances with an empty
// hard set are counted in skipped_empty_hard and otherwise ignored.
EvalReport evaluate(const std::vector<QueryInstance>& instances, ModelParams& params);

}  // namespace q2p
