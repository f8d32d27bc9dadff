#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "avdis/autodiff.hpp"
#include "avdis/dense_array.hpp"
#include "avdis/random.hpp"

namespace avdis {

enum class ParamGroup { trunk, emotion_head, speaker_head, emotion_aux, speaker_aux, probe };

inline constexpr ParamGroup kAllGroups[] = {ParamGroup::trunk,       ParamGroup::emotion_head,
                                            ParamGroup::speaker_head, ParamGroup::emotion_aux,
                                            ParamGroup::speaker_aux, ParamGroup::probe};

std::string_view group_name(ParamGroup group);
// Throws ConfigError for unknown names.
ParamGroup parse_group(std::string_view name);

struct Parameter {
  std::string name;
  ParamGroup group;
  DenseArray value;
  // Adam state.
  DenseArray first_moment;
  DenseArray second_moment;
  std::int64_t steps = 0;
};

// Named trainable arrays, each owned by exactly one group. Group membership is
// fixed at registration; freezing a group blocks optimizer updates to it.
class ParameterStore {
 public:
  std::size_t add(std::string name, ParamGroup group, DenseArray init);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::span<const Parameter> params() const { return params_; }
  std::optional<std::size_t> find(std::string_view name) const;

  void freeze(std::span<const ParamGroup> groups);
  void unfreeze(std::span<const ParamGroup> groups);
  void freeze(std::span<const std::string> group_names);
  void unfreeze(std::span<const std::string> group_names);
  bool frozen(ParamGroup group) const { return frozen_.contains(group); }

  // One leaf per parameter on the tape, in registration order.
  std::vector<Var> bind(Tape& tape) const;
  // Gradient per parameter; zeros where the tape holds none.
  std::vector<DenseArray> gradients(const Tape& tape, std::span<const Var> bound) const;
  // Current values of every parameter in a group.
  std::vector<DenseArray> snapshot(ParamGroup group) const;

 private:
  std::vector<Parameter> params_;
  std::set<ParamGroup> frozen_;
};

// Freezes groups for the lifetime of the guard, leaving groups that were
// already frozen untouched on exit.
class ScopedFreeze {
 public:
  ScopedFreeze(ParameterStore& store, std::span<const ParamGroup> groups);
  ~ScopedFreeze();
  ScopedFreeze(const ScopedFreeze&) = delete;
  ScopedFreeze& operator=(const ScopedFreeze&) = delete;

 private:
  ParameterStore& store_;
  std::vector<ParamGroup> added_;
};

// Glorot-uniform weight [in x out], s = sqrt(6 / (in + out)).
DenseArray glorot_uniform(std::size_t in, std::size_t out, Rng& rng);

struct AffineLayer {
  std::size_t weight = 0;  // index into the store
  std::size_t bias = 0;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;

  Var apply(Tape& tape, std::span<const Var> bound, Var x) const;
};

AffineLayer make_affine(ParameterStore& store, const std::string& name, ParamGroup group,
                        std::size_t in, std::size_t out, Rng& rng);

// Affine layers with relu between consecutive layers and none after the last.
struct MlpEncoder {
  std::vector<AffineLayer> layers;

  std::size_t in_dim() const { return layers.front().in_dim; }
  std::size_t out_dim() const { return layers.back().out_dim; }
  Var apply(Tape& tape, std::span<const Var> bound, Var x) const;
};

// dims = {input, hidden..., output}; at least two entries, all positive.
MlpEncoder make_mlp(ParameterStore& store, const std::string& prefix, ParamGroup group,
                    std::span<const std::size_t> dims, Rng& rng);

// Stand-alone encoder with its own store, seeded deterministically.
struct SeededMlp {
  ParameterStore store;
  MlpEncoder encoder;
};
SeededMlp init_params(std::span<const std::size_t> dims, std::uint64_t seed,
                      ParamGroup group = ParamGroup::trunk);

struct OptimConfig {
  double lr_primary = 1e-4;
  double lr_auxiliary = 1e-3;
  double gamma = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

enum class LrKind { primary, auxiliary };

// lr * gamma^epoch for the selected base rate.
double effective_lr(const OptimConfig& config, LrKind which, int epoch);

// One bias-corrected Adam update of every parameter in `group`; a frozen group
// is left untouched, moments included. grads is indexed like the store.
void adam_step(ParameterStore& store, ParamGroup group, std::span<const DenseArray> grads,
               const OptimConfig& config, int epoch, LrKind which);

// Single Adam update with an explicit rate; shared by adam_step and probes.
void adam_update(Parameter& param, const DenseArray& grad, const OptimConfig& config, double lr);

struct CheckpointRecord {
  std::string name;
  ParamGroup group;
  DenseArray value;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::string metadata;
  std::vector<CheckpointRecord> records;
};

Checkpoint make_checkpoint(const ParameterStore& store, std::string metadata);
// Copies values into a store with identical names, groups and shapes.
void restore_checkpoint(ParameterStore& store, const Checkpoint& checkpoint);

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace avdis
