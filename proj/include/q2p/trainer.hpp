#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "q2p/checkpoint.hpp"
#include "q2p/model.hpp"
#include "q2p/sampler.hpp"

namespace q2p {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 128;
  std::size_t total_steps = 1000;
  std::uint64_t seed = 0;
  std::size_t checkpoint_interval = 0;  // 0 writes only the final checkpoint
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool log_timing = true;  // false pins the wall_ms column to 0

  void validate() const;
};

// Where train_loop delivers its artifacts. Any sink may be left empty.
struct TrainSinks {
  std::string checkpoint_dir;        // step-<n>.ckpt at intervals plus final.ckpt
  std::ostream* loss_csv = nullptr;  // `step,loss,wall_ms`, one row per step
  // called at checkpoint boundaries; a higher value than any before saves
  // best.ckpt
  std::function<double(const ModelParams&)> valid_metric;
};

struct TrainResult {
  std::size_t steps_run = 0;
  float final_loss = 0.0f;
  std::size_t checkpoints_written = 0;
  double best_valid_metric = 0.0;
  bool has_best = false;
};

// One optimization step on an assembled batch: train-mode loss, backward,
// bias-corrected adaptive-moment update, gradients cleared. Returns the loss
// before the update. `batch_ids` only feeds error diagnostics.
float train_step(ModelParams& params, OptimizerState& opt,
                 const std::vector<std::pair<const Query*, EntityId>>& batch,
                 const TrainConfig& cfg, Rng& step_rng,
                 const std::vector<std::size_t>* batch_ids = nullptr);

// How many of the first `slots` round-robin batch slots land on type index
// `type_index` out of `num_types`. Lets a resumed run rebuild every per-type
// cursor without replaying steps.
std::size_t round_robin_consumed(std::size_t slots, std::size_t num_types,
                                 std::size_t type_index);

// Runs from opt.step to cfg.total_steps. Batch slots cycle uniformly over the
// types present in `dataset`; each type walks its own per-epoch shuffled ring;
// the answer for an instance is drawn uniformly from its easy set. All draws
// derive from (seed, absolute step), so resuming from a checkpoint reproduces
// the uninterrupted run exactly.
TrainResult train_loop(ModelParams& params, OptimizerState& opt,
                       const std::vector<QueryInstance>& dataset, const TrainConfig& cfg,
                       const TrainSinks& sinks);

}  // namespace q2p
