#include "q2p/trainer.hpp"

#include <chrono>
#include <cmath>
#include <ostream>
#include <sstream>

#include "q2p/errors.hpp"

namespace q2p {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw InputError("train.lr must be positive");
  if (batch_size < 1) throw InputError("train.batch_size must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw InputError("train moment decays must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw InputError("train.adam_eps must be positive");
}

float train_step(ModelParams& params, OptimizerState& opt,
                 const std::vector<std::pair<const Query*, EntityId>>& batch,
                 const TrainConfig& cfg, Rng& step_rng,
                 const std::vector<std::size_t>* batch_ids) {
  auto describe = [&] {
    std::ostringstream out;
    out << "training step " << opt.step;
    if (batch_ids && !batch_ids->empty()) {
      out << ", batch instances [";
      for (std::size_t i = 0; i < batch_ids->size(); ++i)
        out << (i ? "," : "") << (*batch_ids)[i];
      out << "]";
    }
    return out.str();
  };

  float value = 0.0f;
  Tape32 tape;
  auto bound = BoundParams::bind(tape, params);
  try {
    auto loss = batch_loss(bound, batch, Mode::train, step_rng);
    value = loss.scalar();
    if (!std::isfinite(value))
      throw NumericError("non-finite loss " + std::to_string(value));
    tape.backward(loss);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " at " + describe());
  }

  // bias-corrected adaptive-moment update; all arithmetic in f32 so a
  // checkpointed state resumes bit-exactly
  const auto t = static_cast<double>(opt.step + 1);
  const float b1 = static_cast<float>(cfg.beta1);
  const float b2 = static_cast<float>(cfg.beta2);
  const float corr1 = static_cast<float>(1.0 - std::pow(cfg.beta1, t));
  const float corr2 = static_cast<float>(1.0 - std::pow(cfg.beta2, t));
  const float lr = static_cast<float>(cfg.lr);
  const float eps = static_cast<float>(cfg.adam_eps);

  auto ps = params.all();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& value_data = ps[i]->value.data;
    auto& grad = ps[i]->grad;
    auto& m = opt.m[i];
    auto& v = opt.v[i];
    for (std::size_t j = 0; j < value_data.size(); ++j) {
      const float g = grad[j];
      m[j] = b1 * m[j] + (1.0f - b1) * g;
      v[j] = b2 * v[j] + (1.0f - b2) * g * g;
      const float m_hat = m[j] / corr1;
      const float v_hat = v[j] / corr2;
      value_data[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
  params.zero_grads();
  opt.step += 1;
  return value;
}

std::size_t round_robin_consumed(std::size_t slots, std::size_t num_types,
                                 std::size_t type_index) {
  if (num_types == 0 || type_index >= num_types)
    throw ContractError("type index " + std::to_string(type_index) + " out of " +
                        std::to_string(num_types));
  return slots / num_types + (type_index < slots % num_types ? 1 : 0);
}

namespace {

// Per-type shuffled ring. The permutation for (type, epoch) depends only on
// the run seed, so any position is reconstructible from a consumed count.
struct TypeRing {
  QueryType type;
  std::vector<std::size_t> members;  // indices into the dataset
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::size_t epoch = 0;

  void reshuffle(const Rng& shuffle_root) {
    order = members;
    Rng rng = shuffle_root.derive(to_string(type), epoch);
    rng.shuffle(order);
  }

  std::size_t next(const Rng& shuffle_root) {
    if (cursor == order.size()) {
      epoch += 1;
      cursor = 0;
      reshuffle(shuffle_root);
    }
    return order[cursor++];
  }
};

}  // namespace

TrainResult train_loop(ModelParams& params, OptimizerState& opt,
                       const std::vector<QueryInstance>& dataset, const TrainConfig& cfg,
                       const TrainSinks& sinks) {
  cfg.validate();

  std::vector<TypeRing> rings;
  for (QueryType t : all_types()) {
    TypeRing ring;
    ring.type = t;
    for (std::size_t i = 0; i < dataset.size(); ++i)
      if (dataset[i].type == t) ring.members.push_back(i);
    if (!ring.members.empty()) rings.push_back(std::move(ring));
  }
  if (rings.empty()) throw InputError("training dataset has no instances");
  for (const auto& ring : rings)
    for (std::size_t i : ring.members)
      if (dataset[i].easy.empty())
        throw InputError("training instance " + std::to_string(i) + " has no answers");

  const Rng root(cfg.seed);
  const Rng shuffle_root = root.derive("train").derive("shuffle");

  // rebuild every ring's position from the number of slots already consumed
  for (std::size_t r = 0; r < rings.size(); ++r) {
    const std::size_t consumed =
        round_robin_consumed(opt.step * cfg.batch_size, rings.size(), r);
    rings[r].epoch = consumed / rings[r].members.size();
    rings[r].cursor = consumed % rings[r].members.size();
    rings[r].reshuffle(shuffle_root);
  }

  TrainResult result;
  std::size_t checkpoints = 0;
  auto checkpoint_path = [&](const std::string& stem) {
    return sinks.checkpoint_dir + "/" + stem + ".ckpt";
  };
  auto consider_best = [&] {
    if (!sinks.valid_metric) return;
    const double metric = sinks.valid_metric(params);
    if (!result.has_best || metric > result.best_valid_metric) {
      result.has_best = true;
      result.best_valid_metric = metric;
      if (!sinks.checkpoint_dir.empty()) {
        save_checkpoint(params, &opt, checkpoint_path("best"));
        ++checkpoints;
      }
    }
  };

  if (sinks.loss_csv && opt.step == 0) *sinks.loss_csv << "step,loss,wall_ms\n";

  while (opt.step < cfg.total_steps) {
    const std::size_t step = opt.step;
    std::vector<std::size_t> ids;
    ids.reserve(cfg.batch_size);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const std::size_t slot = step * cfg.batch_size + b;
      ids.push_back(rings[slot % rings.size()].next(shuffle_root));
    }

    Rng step_rng = root.derive("train").derive("step", step);
    std::vector<std::pair<const Query*, EntityId>> batch;
    batch.reserve(ids.size());
    for (std::size_t id : ids) {
      const auto& inst = dataset[id];
      batch.emplace_back(&inst.query, inst.easy[step_rng.below(inst.easy.size())]);
    }

    const auto started = std::chrono::steady_clock::now();
    const float loss = train_step(params, opt, batch, cfg, step_rng, &ids);
    long long wall_ms = 0;
    if (cfg.log_timing)
      wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::steady_clock::now() - started)
                    .count();

    if (sinks.loss_csv) *sinks.loss_csv << step << "," << loss << "," << wall_ms << "\n";
    result.final_loss = loss;
    result.steps_run += 1;

    const bool at_interval =
        cfg.checkpoint_interval > 0 && opt.step % cfg.checkpoint_interval == 0;
    if (at_interval && opt.step < cfg.total_steps) {
      if (!sinks.checkpoint_dir.empty()) {
        save_checkpoint(params, &opt, checkpoint_path("step-" + std::to_string(opt.step)));
        ++checkpoints;
      }
      consider_best();
    }
  }

  if (!sinks.checkpoint_dir.empty()) {
    save_checkpoint(params, &opt, checkpoint_path("final"));
    ++checkpoints;
  }
  consider_best();
  result.checkpoints_written = checkpoints;
  return result;
}

}  // namespace q2p
