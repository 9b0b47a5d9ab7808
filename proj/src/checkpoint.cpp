#include "trace/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace trace {

namespace {

constexpr char kMagic[4] = {'T', 'R', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u32(std::ostream& out, std::uint32_t v) { put_bytes(out, &v, sizeof v); }
void put_u64(std::ostream& out, std::uint64_t v) { put_bytes(out, &v, sizeof v); }
void put_i64(std::ostream& out, std::int64_t v) { put_bytes(out, &v, sizeof v); }
void put_f64(std::ostream& out, double v) { put_bytes(out, &v, sizeof v); }

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  put_bytes(out, s.data(), s.size());
}

void put_tensor(std::ostream& out, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) put_u64(out, static_cast<std::uint64_t>(t.dim(i)));
  put_bytes(out, t.data(), t.size() * sizeof(double));
}

void get_bytes(std::istream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw std::runtime_error("load_checkpoint: truncated file");
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  get_bytes(in, &v, sizeof v);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  get_bytes(in, &v, sizeof v);
  return v;
}

std::int64_t get_i64(std::istream& in) {
  std::int64_t v = 0;
  get_bytes(in, &v, sizeof v);
  return v;
}

double get_f64(std::istream& in) {
  double v = 0;
  get_bytes(in, &v, sizeof v);
  return v;
}

std::string get_string(std::istream& in) {
  const std::uint64_t n = get_u64(in);
  if (n > (1ull << 30)) throw std::runtime_error("load_checkpoint: implausible string length");
  std::string s(static_cast<std::size_t>(n), '\0');
  get_bytes(in, s.data(), s.size());
  return s;
}

Tensor get_tensor(std::istream& in) {
  const std::uint32_t nd = get_u32(in);
  if (nd == 0 || nd > 4) throw std::runtime_error("load_checkpoint: bad tensor rank");
  std::vector<int> shape(nd);
  for (std::uint32_t i = 0; i < nd; ++i) {
    const std::uint64_t d = get_u64(in);
    if (d == 0 || d > (1ull << 24)) throw std::runtime_error("load_checkpoint: implausible dim");
    shape[i] = static_cast<int>(d);
  }
  Tensor t(shape);
  get_bytes(in, t.data(), t.size() * sizeof(double));
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  put_bytes(out, kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  put_string(out, dump_run_config(data.config));
  put_i64(out, data.epoch);
  put_f64(out, data.best_iou);
  put_u64(out, data.params.size());
  for (const auto& [name, value] : data.params) {
    put_string(out, name);
    put_tensor(out, value);
  }
  put_u32(out, data.has_optimizer ? 1 : 0);
  if (data.has_optimizer) {
    if (data.opt_m.size() != data.params.size() || data.opt_v.size() != data.params.size())
      throw std::invalid_argument("save_checkpoint: optimizer moments out of step with params");
    put_i64(out, data.opt_steps);
    for (const Tensor& t : data.opt_m) put_tensor(out, t);
    for (const Tensor& t : data.opt_v) put_tensor(out, t);
  }
  put_u64(out, data.state.size());
  for (const auto& [name, value] : data.state) {
    put_string(out, name);
    put_tensor(out, value);
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4] = {};
  get_bytes(in, magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint");
  const std::uint32_t version = get_u32(in);
  if (version != kVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
  CheckpointData data;
  data.config = parse_run_config(get_string(in));
  data.epoch = get_i64(in);
  data.best_iou = get_f64(in);
  const std::uint64_t count = get_u64(in);
  data.params.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(in);
    data.params.emplace_back(std::move(name), get_tensor(in));
  }
  data.has_optimizer = get_u32(in) != 0;
  if (data.has_optimizer) {
    data.opt_steps = get_i64(in);
    data.opt_m.reserve(data.params.size());
    data.opt_v.reserve(data.params.size());
    for (std::size_t i = 0; i < data.params.size(); ++i) data.opt_m.push_back(get_tensor(in));
    for (std::size_t i = 0; i < data.params.size(); ++i) data.opt_v.push_back(get_tensor(in));
  }
  const std::uint64_t state_count = get_u64(in);
  data.state.reserve(static_cast<std::size_t>(state_count));
  for (std::uint64_t i = 0; i < state_count; ++i) {
    std::string name = get_string(in);
    data.state.emplace_back(std::move(name), get_tensor(in));
  }
  return data;
}

CheckpointData snapshot_checkpoint(const RunConfig& cfg, TraceModel& model, const AdamW* opt,
                                   std::int64_t epoch, double best_iou) {
  CheckpointData data;
  data.config = cfg;
  data.epoch = epoch;
  data.best_iou = best_iou;
  for (const Param* p : model.params()) data.params.emplace_back(p->name, p->value);
  if (opt != nullptr) {
    data.has_optimizer = true;
    data.opt_steps = opt->steps();
    data.opt_m = opt->moment1();
    data.opt_v = opt->moment2();
  }
  for (const auto& [name, tensor] : model.state()) data.state.emplace_back(name, *tensor);
  return data;
}

void restore_checkpoint(const CheckpointData& data, TraceModel& model, AdamW* opt) {
  const ParamRefs params = model.params();
  if (params.size() != data.params.size()) {
    throw std::runtime_error("restore_checkpoint: model has " + std::to_string(params.size()) +
                             " parameters, checkpoint has " + std::to_string(data.params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, value] = data.params[i];
    if (params[i]->name != name)
      throw std::runtime_error("restore_checkpoint: parameter order mismatch at '" + name + "'");
    if (!params[i]->value.same_shape(value))
      throw std::runtime_error("restore_checkpoint: shape mismatch at '" + name + "'");
    params[i]->value = value;
  }
  if (opt != nullptr && data.has_optimizer)
    opt->restore(data.opt_m, data.opt_v, data.opt_steps);
  const StateRefs state = model.state();
  if (state.size() != data.state.size()) {
    throw std::runtime_error("restore_checkpoint: model has " + std::to_string(state.size()) +
                             " state tensors, checkpoint has " +
                             std::to_string(data.state.size()));
  }
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto& [name, value] = data.state[i];
    if (state[i].first != name)
      throw std::runtime_error("restore_checkpoint: state order mismatch at '" + name + "'");
    if (!state[i].second->same_shape(value))
      throw std::runtime_error("restore_checkpoint: state shape mismatch at '" + name + "'");
    *state[i].second = value;
  }
}

}  // namespace trace
