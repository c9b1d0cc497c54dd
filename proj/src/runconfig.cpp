#include "civrec/runconfig.hpp"

#include <fstream>
#include <stdexcept>

namespace civrec::runconfig {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::int64_t to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t idx = 0;
    const std::int64_t v = std::stoll(value, &idx);
    if (idx == value.size()) return v;
  } catch (...) {
  }
  fail("config: bad integer for '" + key + "': '" + value + "'");
}

double to_float(const std::string& key, const std::string& value) {
  try {
    std::size_t idx = 0;
    const double v = std::stod(value, &idx);
    if (idx == value.size()) return v;
  } catch (...) {
  }
  fail("config: bad number for '" + key + "': '" + value + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

}  // namespace

void apply_kv(RunConfig& config, const std::string& key, const std::string& value) {
  if (key == "backbone.kind") {
    config.train.backbone.kind = backbone::kind_from_string(value);
  } else if (key == "backbone.dim") {
    config.train.backbone.dim = to_int(key, value);
  } else if (key == "backbone.layers") {
    config.train.backbone.layers = to_int(key, value);
  } else if (key == "backbone.init_std") {
    config.train.backbone.init_std = to_float(key, value);
  } else if (key == "csem.hidden") {
    config.train.hidden_dim = to_int(key, value);
  } else if (key == "decompose.alpha") {
    config.train.decompose.alpha = to_float(key, value);
  } else if (key == "decompose.epsilon") {
    config.train.decompose.epsilon = to_float(key, value);
  } else if (key == "train.variant") {
    config.train.variant = trainer::variant_from_string(value);
  } else if (key == "train.lr") {
    config.train.lr = to_float(key, value);
  } else if (key == "train.batch") {
    config.train.batch_size = to_int(key, value);
  } else if (key == "train.epochs") {
    config.train.epochs = to_int(key, value);
  } else if (key == "train.seed") {
    config.train.seed = static_cast<std::uint64_t>(to_int(key, value));
  } else if (key == "train.ips_cap") {
    config.train.ips_cap = to_float(key, value);
  } else if (key == "train.eval_every") {
    config.train.eval_every = to_int(key, value);
  } else if (key == "data.binarize_threshold") {
    config.binarize_threshold = static_cast<int>(to_int(key, value));
  } else if (key == "data.kcore") {
    config.kcore = static_cast<int>(to_int(key, value));
  } else if (key == "synthetic.users") {
    config.synthetic.users = to_int(key, value);
  } else if (key == "synthetic.items") {
    config.synthetic.items = to_int(key, value);
  } else if (key == "synthetic.latent_dim") {
    config.synthetic.latent_dim = to_int(key, value);
  } else if (key == "synthetic.confounder_strength") {
    config.synthetic.confounder_strength = to_float(key, value);
  } else if (key == "synthetic.exposure_skew") {
    config.synthetic.exposure_skew = to_float(key, value);
  } else if (key == "synthetic.positives_per_user") {
    config.synthetic.positives_per_user = to_int(key, value);
  } else if (key == "synthetic.seed") {
    config.synthetic.seed = static_cast<std::uint64_t>(to_int(key, value));
  } else {
    fail("config: unknown key '" + key + "'");
  }
}

RunConfig parse_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) fail("config: cannot open '" + path + "'");
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      fail("config: line " + std::to_string(line_no) + " is not key=value: '" + t + "'");
    }
    apply_kv(base, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return base;
}

}  // namespace civrec::runconfig
