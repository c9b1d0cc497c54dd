#include "civrec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace civrec::checkpoint {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

template <typename T>
void write_pod(std::ostream& o, T v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail(std::string("checkpoint: truncated while reading ") + what);
  return v;
}

void write_string(std::ostream& o, const std::string& s) {
  write_pod<std::uint32_t>(o, static_cast<std::uint32_t>(s.size()));
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto len = read_pod<std::uint32_t>(in, "string length");
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) fail("checkpoint: truncated string");
  return s;
}

void write_block(std::ostream& o, const std::string& name, const diff::Shape& shape,
                 std::span<const double> values) {
  write_string(o, name);
  write_pod<std::uint32_t>(o, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) write_pod<std::uint64_t>(o, static_cast<std::uint64_t>(d));
  for (double v : values) write_pod<float>(o, static_cast<float>(v));
}

struct Block {
  diff::Shape shape;
  std::vector<double> values;
};

std::pair<std::string, Block> read_block(std::istream& in) {
  const std::string name = read_string(in);
  const auto rank = read_pod<std::uint32_t>(in, "rank");
  Block b;
  std::int64_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = static_cast<std::int64_t>(read_pod<std::uint64_t>(in, "dim"));
    b.shape.push_back(d);
    n *= d;
  }
  b.values.resize(static_cast<std::size_t>(n));
  for (auto& v : b.values) v = static_cast<double>(read_pod<float>(in, "payload"));
  return {name, std::move(b)};
}

}  // namespace

void save_checkpoint(const std::string& path, const trainer::ModelState& state,
                     const diff::AdamState& adam, std::int64_t epoch) {
  std::ofstream o(path, std::ios::binary);
  if (!o) fail("checkpoint: cannot write '" + path + "'");
  o.write(kMagic, 7);
  write_pod<std::uint8_t>(o, 1);  // format version

  write_pod<std::uint64_t>(o, static_cast<std::uint64_t>(state.user_count));
  write_pod<std::uint64_t>(o, static_cast<std::uint64_t>(state.item_count));
  write_pod<std::uint64_t>(o, static_cast<std::uint64_t>(state.backbone_cfg.dim));
  write_pod<std::uint64_t>(o, static_cast<std::uint64_t>(state.backbone_cfg.layers));
  write_pod<double>(o, state.backbone_cfg.init_std);
  write_pod<std::uint64_t>(o, static_cast<std::uint64_t>(state.csem.hidden_dim));
  write_pod<double>(o, state.decompose_cfg.alpha);
  write_pod<double>(o, state.decompose_cfg.epsilon);
  write_pod<std::uint8_t>(o, static_cast<std::uint8_t>(state.backbone_cfg.kind));
  write_pod<std::uint8_t>(o, static_cast<std::uint8_t>(state.variant));
  write_pod<std::uint64_t>(o, state.seed);
  write_pod<std::uint64_t>(o, static_cast<std::uint64_t>(epoch));
  write_pod<std::uint64_t>(o, static_cast<std::uint64_t>(adam.step_count()));
  write_pod<double>(o, adam.config().beta1);
  write_pod<double>(o, adam.config().beta2);
  write_pod<double>(o, adam.config().eps);

  const auto params = state.all_params();
  const auto trainable = state.trainable_params();
  if (adam.param_count() != trainable.size()) {
    fail("checkpoint: optimizer state does not match the trainable parameter set");
  }
  write_pod<std::uint64_t>(o, static_cast<std::uint64_t>(params.size() + 2 * trainable.size()));
  for (const auto& p : params) write_block(o, p.name(), p.shape(), p.values());
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    write_block(o, "adam.m." + trainable[i].name(), trainable[i].shape(), adam.moment1(i));
    write_block(o, "adam.v." + trainable[i].name(), trainable[i].shape(), adam.moment2(i));
  }
  if (!o) fail("checkpoint: write failed for '" + path + "'");
}

Loaded load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("checkpoint: cannot open '" + path + "'");
  char magic[7];
  in.read(magic, 7);
  if (!in || std::memcmp(magic, kMagic, 7) != 0) {
    fail("checkpoint: bad magic in '" + path + "'");
  }
  const auto version = read_pod<std::uint8_t>(in, "version");
  if (version != 1) fail("checkpoint: unsupported version " + std::to_string(version));

  Loaded loaded;
  trainer::ModelState& state = loaded.state;
  state.user_count = static_cast<std::int64_t>(read_pod<std::uint64_t>(in, "user count"));
  state.item_count = static_cast<std::int64_t>(read_pod<std::uint64_t>(in, "item count"));
  state.backbone_cfg.dim = static_cast<std::int64_t>(read_pod<std::uint64_t>(in, "dim"));
  state.backbone_cfg.layers = static_cast<std::int64_t>(read_pod<std::uint64_t>(in, "layers"));
  state.backbone_cfg.init_std = read_pod<double>(in, "init std");
  const auto hidden = static_cast<std::int64_t>(read_pod<std::uint64_t>(in, "hidden"));
  state.decompose_cfg.alpha = read_pod<double>(in, "alpha");
  state.decompose_cfg.epsilon = read_pod<double>(in, "epsilon");
  state.backbone_cfg.kind = static_cast<backbone::Kind>(read_pod<std::uint8_t>(in, "kind"));
  state.variant = static_cast<trainer::Variant>(read_pod<std::uint8_t>(in, "variant"));
  state.seed = read_pod<std::uint64_t>(in, "seed");
  loaded.epoch = static_cast<std::int64_t>(read_pod<std::uint64_t>(in, "epoch"));
  const auto adam_step = static_cast<std::int64_t>(read_pod<std::uint64_t>(in, "adam step"));
  diff::AdamConfig acfg;
  acfg.beta1 = read_pod<double>(in, "beta1");
  acfg.beta2 = read_pod<double>(in, "beta2");
  acfg.eps = read_pod<double>(in, "adam eps");

  // Materialize the parameter registry, then fill it from the blocks.
  Rng scratch(0);
  state.table.user =
      diff::Tensor::zeros({state.user_count, state.backbone_cfg.dim}, true).set_name("backbone.user");
  state.table.item =
      diff::Tensor::zeros({state.item_count, state.backbone_cfg.dim}, true).set_name("backbone.item");
  state.csem = csem::Params::init(state.backbone_cfg.dim, hidden, scratch);

  const auto n_blocks = read_pod<std::uint64_t>(in, "block count");
  std::map<std::string, Block> blocks;
  for (std::uint64_t i = 0; i < n_blocks; ++i) {
    auto [name, block] = read_block(in);
    if (!blocks.emplace(std::move(name), std::move(block)).second) {
      fail("checkpoint: duplicate block");
    }
  }

  auto fill = [&](diff::Tensor& t, const std::string& name) {
    const auto it = blocks.find(name);
    if (it == blocks.end()) fail("checkpoint: missing block '" + name + "'");
    if (it->second.shape != t.shape()) {
      fail("checkpoint: block '" + name + "' has shape " + diff::shape_str(it->second.shape) +
           ", expected " + diff::shape_str(t.shape()));
    }
    std::copy(it->second.values.begin(), it->second.values.end(), t.values_mut().begin());
  };

  auto params = state.all_params();
  for (auto& p : params) fill(p, p.name());

  auto trainable = state.trainable_params();
  loaded.adam = diff::AdamState(trainable, acfg);
  loaded.adam.set_step_count(adam_step);
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    const auto fill_moment = [&](const std::string& prefix, std::vector<double>& dst) {
      const auto it = blocks.find(prefix + trainable[i].name());
      if (it == blocks.end()) fail("checkpoint: missing block '" + prefix + trainable[i].name() + "'");
      if (it->second.values.size() != dst.size()) {
        fail("checkpoint: moment size mismatch for '" + trainable[i].name() + "'");
      }
      dst = it->second.values;
    };
    fill_moment("adam.m.", loaded.adam.moment1(i));
    fill_moment("adam.v.", loaded.adam.moment2(i));
  }
  return loaded;
}

}  // namespace civrec::checkpoint
