#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "avdis/data.hpp"
#include "avdis/evaluation.hpp"
#include "avdis/layers.hpp"
#include "avdis/model.hpp"
#include "avdis/objectives.hpp"

namespace avdis {

enum class Strategy { STL, MTL, GR, ALT, CONF };

std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);
// GR, ALT and CONF carry a disentanglement objective.
bool disentangles(Strategy s);

struct StrategyConfig {
  Strategy strategy = Strategy::MTL;
  LossWeights weights;
  double grl_lambda = 1.0;      // GR
  double conf_weight = 0.3;     // CONF
  double alt_adv_weight = 0.3;  // ALT, beta in L_primary - beta * L_auxiliary
  int epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  OptimConfig optim;

  void validate() const;
};

enum class AltPhase { auxiliary, primary };

// Learning-rate family of a parameter group: auxiliary heads use
// lr_auxiliary, everything else lr_primary.
LrKind lr_kind(ParamGroup group);

// STL/MTL: one Adam step on L_primary over trunk and primary heads. STL drops
// the speaker term and keeps speaker_head frozen.
LossReport step_mtl(MultitaskModel& model, const ClipBatch& batch, const StrategyConfig& cfg,
                    int epoch);
// One pass of L_primary + L_auxiliary with gradient reversal in front of both
// auxiliary heads; every group is updated.
LossReport step_gr(MultitaskModel& model, const ClipBatch& batch, const StrategyConfig& cfg,
                   int epoch);
// auxiliary: only the auxiliary heads move, minimizing L_auxiliary.
// primary: auxiliary heads frozen, minimizing L_primary - beta * L_auxiliary.
LossReport step_alt(MultitaskModel& model, const ClipBatch& batch, const StrategyConfig& cfg,
                    int epoch, AltPhase phase);
// Auxiliary heads minimize L_auxiliary, then trunk and primary heads minimize
// L_primary + w * (confusion(e_aux) + confusion(s_aux)) with the heads frozen.
LossReport step_conf(MultitaskModel& model, const ClipBatch& batch, const StrategyConfig& cfg,
                     int epoch);

// Strategy dispatch for one minibatch. ALT runs its auxiliary phase then its
// primary phase on the same minibatch.
LossReport train_step(MultitaskModel& model, const ClipBatch& batch, const StrategyConfig& cfg,
                      int epoch);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double loss_primary = 0.0;
  double loss_auxiliary = 0.0;
  HeadMetrics validation;
  double disentanglement = 0.0;
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;
};

std::string trace_to_jsonl(const TrainTrace& trace);

struct TrainResult {
  Checkpoint best;
  int best_epoch = 0;  // 0 = initial parameters
  TrainTrace trace;
};

// Seeded shuffle of clip indices into minibatches.
std::vector<std::vector<std::size_t>> minibatches(std::size_t count, std::size_t batch_size,
                                                  Rng& rng);

// Runs cfg.epochs epochs and leaves the selected checkpoint loaded in the
// model. GR/ALT/CONF keep the epoch with the lowest validation leakage proxy;
// STL/MTL keep the highest validation emotion macro-F.
TrainResult train(MultitaskModel& model, std::span<const Clip> train_set,
                  std::span<const Clip> val_set, const StrategyConfig& cfg);

}  // namespace avdis
