#include "avdis/layers.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "avdis/errors.hpp"

namespace avdis {

std::string_view group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::trunk: return "trunk";
    case ParamGroup::emotion_head: return "emotion_head";
    case ParamGroup::speaker_head: return "speaker_head";
    case ParamGroup::emotion_aux: return "emotion_aux";
    case ParamGroup::speaker_aux: return "speaker_aux";
    case ParamGroup::probe: return "probe";
  }
  return "unknown";
}

ParamGroup parse_group(std::string_view name) {
  for (auto g : kAllGroups) {
    if (group_name(g) == name) return g;
  }
  throw ConfigError("unknown parameter group '" + std::string(name) + "'");
}

std::size_t ParameterStore::add(std::string name, ParamGroup group, DenseArray init) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  Parameter p{std::move(name), group, init, DenseArray(init.shape(), 0.0),
              DenseArray(init.shape(), 0.0), 0};
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

std::optional<std::size_t> ParameterStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

void ParameterStore::freeze(std::span<const ParamGroup> groups) {
  frozen_.insert(groups.begin(), groups.end());
}

void ParameterStore::unfreeze(std::span<const ParamGroup> groups) {
  for (auto g : groups) frozen_.erase(g);
}

void ParameterStore::freeze(std::span<const std::string> group_names) {
  std::vector<ParamGroup> groups;
  for (const auto& n : group_names) groups.push_back(parse_group(n));
  freeze(std::span<const ParamGroup>(groups));
}

void ParameterStore::unfreeze(std::span<const std::string> group_names) {
  std::vector<ParamGroup> groups;
  for (const auto& n : group_names) groups.push_back(parse_group(n));
  unfreeze(std::span<const ParamGroup>(groups));
}

std::vector<Var> ParameterStore::bind(Tape& tape) const {
  std::vector<Var> bound;
  bound.reserve(params_.size());
  for (const auto& p : params_) bound.push_back(tape.leaf(p.value));
  return bound;
}

std::vector<DenseArray> ParameterStore::gradients(const Tape& tape,
                                                  std::span<const Var> bound) const {
  if (bound.size() != params_.size()) {
    throw DimensionError("gradients: " + std::to_string(bound.size()) + " bound vars for " +
                         std::to_string(params_.size()) + " parameters");
  }
  std::vector<DenseArray> grads;
  grads.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& g = tape.grad(bound[i]);
    grads.push_back(g ? *g : DenseArray(params_[i].value.shape(), 0.0));
  }
  return grads;
}

std::vector<DenseArray> ParameterStore::snapshot(ParamGroup group) const {
  std::vector<DenseArray> out;
  for (const auto& p : params_) {
    if (p.group == group) out.push_back(p.value);
  }
  return out;
}

ScopedFreeze::ScopedFreeze(ParameterStore& store, std::span<const ParamGroup> groups)
    : store_(store) {
  for (auto g : groups) {
    if (!store_.frozen(g)) added_.push_back(g);
  }
  store_.freeze(std::span<const ParamGroup>(added_));
}

ScopedFreeze::~ScopedFreeze() { store_.unfreeze(std::span<const ParamGroup>(added_)); }

DenseArray glorot_uniform(std::size_t in, std::size_t out, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(in + out));
  DenseArray w({in, out});
  for (auto& v : w.data()) v = rng.uniform(-s, s);
  return w;
}

Var AffineLayer::apply(Tape& tape, std::span<const Var> bound, Var x) const {
  return tape.add_bias(tape.matmul(x, bound[weight]), bound[bias]);
}

AffineLayer make_affine(ParameterStore& store, const std::string& name, ParamGroup group,
                        std::size_t in, std::size_t out, Rng& rng) {
  if (in == 0 || out == 0) throw ConfigError("layer '" + name + "' has a zero dimension");
  AffineLayer layer;
  layer.in_dim = in;
  layer.out_dim = out;
  layer.weight = store.add(name + ".weight", group, glorot_uniform(in, out, rng));
  layer.bias = store.add(name + ".bias", group, DenseArray({out}, 0.0));
  return layer;
}

Var MlpEncoder::apply(Tape& tape, std::span<const Var> bound, Var x) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].apply(tape, bound, x);
    if (i + 1 < layers.size()) x = tape.relu(x);
  }
  return x;
}

MlpEncoder make_mlp(ParameterStore& store, const std::string& prefix, ParamGroup group,
                    std::span<const std::size_t> dims, Rng& rng) {
  if (dims.size() < 2) throw ConfigError("mlp '" + prefix + "' needs input and output sizes");
  MlpEncoder mlp;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    mlp.layers.push_back(make_affine(store, prefix + "." + std::to_string(i), group, dims[i],
                                     dims[i + 1], rng));
  }
  return mlp;
}

SeededMlp init_params(std::span<const std::size_t> dims, std::uint64_t seed, ParamGroup group) {
  SeededMlp out;
  Rng rng(seed);
  out.encoder = make_mlp(out.store, "mlp", group, dims, rng);
  return out;
}

void OptimConfig::validate() const {
  if (!(lr_primary > 0.0) || !(lr_auxiliary > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("Adam epsilon must be positive");
}

double effective_lr(const OptimConfig& config, LrKind which, int epoch) {
  const double base = which == LrKind::primary ? config.lr_primary : config.lr_auxiliary;
  return base * std::pow(config.gamma, epoch);
}

void adam_update(Parameter& param, const DenseArray& grad, const OptimConfig& config, double lr) {
  if (grad.shape() != param.value.shape()) {
    throw DimensionError("adam: gradient " + shape_to_string(grad.shape()) + " for parameter '" +
                         param.name + "' of shape " + shape_to_string(param.value.shape()));
  }
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  param.steps += 1;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(param.steps));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(param.steps));
  auto w = param.value.data();
  auto m = param.first_moment.data();
  auto v = param.second_moment.data();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double g = grad[i];
    m[i] = b1 * m[i] + (1.0 - b1) * g;
    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
    w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.adam_eps);
  }
}

void adam_step(ParameterStore& store, ParamGroup group, std::span<const DenseArray> grads,
               const OptimConfig& config, int epoch, LrKind which) {
  if (grads.size() != store.size()) {
    throw DimensionError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(store.size()) + " parameters");
  }
  if (epoch < 0) throw ConfigError("adam_step: negative epoch");
  if (store.frozen(group)) return;
  const double lr = effective_lr(config, which, epoch);
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store[i].group == group) adam_update(store[i], grads[i], config, lr);
  }
}

// ---- checkpoint container -------------------------------------------------

namespace {

constexpr char kMagic[8] = {'A', 'V', 'D', 'I', 'S', 'C', 'K', 'P'};

template <typename T>
void put_le(std::string& out, T v) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>(u & 0xFF));
    u = static_cast<U>(u >> 8);
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
    }
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint make_checkpoint(const ParameterStore& store, std::string metadata) {
  Checkpoint ck;
  ck.metadata = std::move(metadata);
  for (const auto& p : store.params()) ck.records.push_back({p.name, p.group, p.value});
  return ck;
}

void restore_checkpoint(ParameterStore& store, const Checkpoint& checkpoint) {
  if (checkpoint.records.size() != store.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(checkpoint.records.size()) +
                      " parameters, model has " + std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& r = checkpoint.records[i];
    auto& p = store[i];
    if (r.name != p.name || r.group != p.group) {
      throw ConfigError("checkpoint record '" + r.name + "' does not match parameter '" + p.name +
                        "'");
    }
    if (r.value.shape() != p.value.shape()) {
      throw DimensionError("checkpoint record '" + r.name + "' has shape " +
                           shape_to_string(r.value.shape()) + ", expected " +
                           shape_to_string(p.value.shape()));
    }
    p.value = r.value;
  }
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, Checkpoint::kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.metadata.size()));
  out += checkpoint.metadata;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.records.size()));
  for (const auto& r : checkpoint.records) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(r.group));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(r.value.rank()));
    for (auto e : r.value.shape()) put_le<std::uint64_t>(out, e);
    for (double v : r.value.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw DataError("not a checkpoint file (bad magic)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != Checkpoint::kVersion) {
    throw DataError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                    std::to_string(Checkpoint::kVersion) + ")");
  }
  Checkpoint ck;
  ck.metadata = std::string(in.take(in.get<std::uint32_t>()));
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    r.name = std::string(in.take(in.get<std::uint32_t>()));
    const auto group = in.get<std::uint8_t>();
    if (group >= std::size(kAllGroups)) throw DataError("checkpoint: bad group tag");
    r.group = static_cast<ParamGroup>(group);
    const auto rank = in.get<std::uint8_t>();
    if (rank > DenseArray::kMaxRank) throw DataError("checkpoint: bad rank");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(in.get<std::uint64_t>());
    std::vector<double> data(element_count(shape));
    for (auto& v : data) v = std::bit_cast<double>(in.get<std::uint64_t>());
    r.value = DenseArray(std::move(shape), std::move(data));
    ck.records.push_back(std::move(r));
  }
  if (!in.done()) throw DataError("checkpoint has trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  const auto bytes = encode_checkpoint(checkpoint);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace avdis
