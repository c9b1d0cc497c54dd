#include "civrec/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace civrec::data {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::vector<std::string> split_fields(const std::string& line, const std::string& delim) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(delim, pos);
    if (next == std::string::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + delim.size();
  }
  return out;
}

std::string detect_delimiter(const std::string& line) {
  if (line.find("::") != std::string::npos) return "::";
  if (line.find('\t') != std::string::npos) return "\t";
  return ",";
}

bool parse_int(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  std::size_t idx = 0;
  try {
    out = std::stoll(s, &idx);
  } catch (...) {
    return false;
  }
  return idx == s.size();
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \r\n");
  std::size_t e = s.find_last_not_of(" \r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<InteractionRecord> load_interactions(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("load_interactions: cannot open '" + path + "'");
  std::vector<InteractionRecord> records;
  std::string raw;
  std::string delim;
  std::int64_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (delim.empty()) delim = detect_delimiter(line);
    const auto fields = split_fields(line, delim);
    if (fields.size() < 3 || fields.size() > 4) {
      fail("load_interactions: malformed line " + std::to_string(line_no) + " in '" + path +
           "' (expected user" + delim + "item" + delim + "rating[" + delim + "timestamp])");
    }
    InteractionRecord rec;
    rec.user = trim(fields[0]);
    rec.item = trim(fields[1]);
    if (rec.user.empty() || rec.item.empty()) {
      fail("load_interactions: empty id at line " + std::to_string(line_no));
    }
    std::int64_t rating = 0;
    if (!parse_int(trim(fields[2]), rating)) {
      fail("load_interactions: bad rating at line " + std::to_string(line_no));
    }
    if (rating < 1 || rating > 5) {
      fail("load_interactions: rating out of range at line " + std::to_string(line_no));
    }
    rec.rating = static_cast<int>(rating);
    if (fields.size() == 4) {
      std::int64_t ts = 0;
      if (!parse_int(trim(fields[3]), ts)) {
        fail("load_interactions: bad timestamp at line " + std::to_string(line_no));
      }
      rec.timestamp = ts;
    }
    records.push_back(std::move(rec));
  }
  if (records.empty()) fail("load_interactions: empty input '" + path + "'");
  return records;
}

std::vector<LabeledRecord> binarize(const std::vector<InteractionRecord>& records, int threshold) {
  std::vector<LabeledRecord> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    out.push_back({rec, rec.rating >= threshold});
  }
  return out;
}

std::vector<IdPair> positive_pairs(const std::vector<LabeledRecord>& records) {
  std::vector<IdPair> out;
  std::set<IdPair> seen;
  for (const auto& lr : records) {
    if (!lr.label) continue;
    IdPair p{lr.rec.user, lr.rec.item};
    if (seen.insert(p).second) out.push_back(std::move(p));
  }
  return out;
}

std::vector<IdPair> k_core_filter(std::vector<IdPair> positives, int k) {
  if (k < 1) fail("k_core_filter: k must be >= 1");
  bool changed = true;
  while (changed && !positives.empty()) {
    changed = false;
    std::unordered_map<std::string, int> user_deg, item_deg;
    for (const auto& [u, i] : positives) {
      ++user_deg[u];
      ++item_deg[i];
    }
    std::vector<IdPair> kept;
    kept.reserve(positives.size());
    for (auto& p : positives) {
      if (user_deg[p.first] >= k && item_deg[p.second] >= k) {
        kept.push_back(std::move(p));
      } else {
        changed = true;
      }
    }
    positives = std::move(kept);
  }
  return positives;
}

IndexMap IndexMap::build(const std::vector<IdPair>& pairs) {
  IndexMap map;
  for (const auto& [u, i] : pairs) {
    if (map.user_idx.emplace(u, static_cast<std::int64_t>(map.users.size())).second) {
      map.users.push_back(u);
    }
    if (map.item_idx.emplace(i, static_cast<std::int64_t>(map.items.size())).second) {
      map.items.push_back(i);
    }
  }
  return map;
}

void DatasetBundle::rebuild_caches() {
  popularity.assign(static_cast<std::size_t>(item_count), 0);
  train_items_by_user.assign(static_cast<std::size_t>(user_count), {});
  for (const auto& [u, i] : train) {
    ++popularity[static_cast<std::size_t>(i)];
    train_items_by_user[static_cast<std::size_t>(u)].push_back(i);
  }
  for (auto& items : train_items_by_user) std::sort(items.begin(), items.end());
}

bool DatasetBundle::user_has_train(std::int64_t user, std::int64_t item) const {
  const auto& items = train_items_by_user[static_cast<std::size_t>(user)];
  return std::binary_search(items.begin(), items.end(), item);
}

const std::vector<std::int64_t>& DatasetBundle::train_items(std::int64_t user) const {
  return train_items_by_user[static_cast<std::size_t>(user)];
}

DatasetBundle split_biased_unbiased(const std::vector<Pair>& positives, std::int64_t user_count,
                                    std::int64_t item_count, Rng& rng) {
  const std::int64_t n = static_cast<std::int64_t>(positives.size());
  if (n < 10) {
    fail("split_biased_unbiased: need at least 10 positives, got " + std::to_string(n));
  }
  std::vector<Pair> shuffled = positives;
  rng.shuffle(shuffled);

  const auto n_random = static_cast<std::int64_t>(std::llround(0.4 * static_cast<double>(n)));
  const auto n_val = static_cast<std::int64_t>(std::llround(0.1 * static_cast<double>(n)));
  const auto n_test = static_cast<std::int64_t>(std::llround(0.2 * static_cast<double>(n)));

  DatasetBundle bundle;
  bundle.user_count = user_count;
  bundle.item_count = item_count;
  bundle.val.assign(shuffled.begin(), shuffled.begin() + n_val);
  bundle.test.assign(shuffled.begin() + n_val, shuffled.begin() + n_val + n_test);
  // Biased remainder first, leftover random tenth last.
  bundle.train.assign(shuffled.begin() + n_random, shuffled.end());
  bundle.train_from_random.assign(bundle.train.size(), 0);
  for (auto it = shuffled.begin() + n_val + n_test; it != shuffled.begin() + n_random; ++it) {
    bundle.train.push_back(*it);
    bundle.train_from_random.push_back(1);
  }
  bundle.rebuild_caches();
  return bundle;
}

std::int64_t sample_negative(std::int64_t user, Rng& rng, const DatasetBundle& bundle) {
  const auto& pos = bundle.train_items(user);
  if (static_cast<std::int64_t>(pos.size()) >= bundle.item_count) {
    fail("sample_negative: user " + std::to_string(user) + " has no negative candidates");
  }
  for (;;) {
    const auto item = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(bundle.item_count)));
    if (!std::binary_search(pos.begin(), pos.end(), item)) return item;
  }
}

std::vector<std::int64_t> popular_set(const DatasetBundle& bundle, std::int64_t k) {
  if (k > bundle.item_count) fail("popular_set: k exceeds item count");
  std::vector<std::int64_t> idx(static_cast<std::size_t>(bundle.item_count));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i);
  std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
    if (bundle.popularity[a] != bundle.popularity[b])
      return bundle.popularity[a] > bundle.popularity[b];
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

void SyntheticSpec::validate() const {
  if (users <= 0 || items <= 0 || latent_dim <= 0 || positives_per_user <= 0) {
    fail("synthetic spec: counts must be positive");
  }
  if (!(confounder_strength >= 0.0) || !std::isfinite(confounder_strength)) {
    fail("synthetic spec: confounder strength must be finite and >= 0");
  }
  if (!std::isfinite(exposure_skew)) fail("synthetic spec: exposure skew must be finite");
}

namespace {

// Draws one index from a categorical distribution given by `probs`.
std::int64_t draw_categorical(const std::vector<double>& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<std::int64_t>(i);
  }
  return static_cast<std::int64_t>(probs.size()) - 1;
}

std::vector<double> softmax(const double* logits, std::size_t n) {
  double mx = logits[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  std::vector<double> p(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

// Samples `count` items not yet in `taken`, walking the CDF. Falls back to
// the highest-probability unused item if rejection stalls.
void draw_distinct(const std::vector<double>& probs, std::int64_t count,
                   std::unordered_set<std::int64_t>& taken, std::vector<std::int64_t>& out,
                   Rng& rng) {
  const std::int64_t items = static_cast<std::int64_t>(probs.size());
  for (std::int64_t c = 0; c < count; ++c) {
    std::int64_t picked = -1;
    for (int attempt = 0; attempt < 10000; ++attempt) {
      const std::int64_t i = draw_categorical(probs, rng);
      if (!taken.count(i)) {
        picked = i;
        break;
      }
    }
    if (picked < 0) {
      double best = -1.0;
      for (std::int64_t i = 0; i < items; ++i) {
        if (!taken.count(i) && probs[i] > best) {
          best = probs[i];
          picked = i;
        }
      }
      if (picked < 0) return;  // user exhausted the catalogue
    }
    taken.insert(picked);
    out.push_back(picked);
  }
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::int64_t nu = spec.users, ni = spec.items, d = spec.latent_dim;

  std::vector<double> user_lat(static_cast<std::size_t>(nu * d));
  std::vector<double> item_lat(static_cast<std::size_t>(ni * d));
  for (auto& v : user_lat) v = rng.normal();
  for (auto& v : item_lat) v = rng.normal();

  SyntheticData out;
  out.preference.resize(static_cast<std::size_t>(nu * ni));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::int64_t u = 0; u < nu; ++u) {
    for (std::int64_t i = 0; i < ni; ++i) {
      double s = 0.0;
      for (std::int64_t k = 0; k < d; ++k) s += user_lat[u * d + k] * item_lat[i * d + k];
      out.preference[u * ni + i] = s * inv_sqrt_d;
    }
  }

  // Zipf-shaped confounder scores, standardized so the strength knob has a
  // consistent scale across item counts.
  out.confounder.resize(static_cast<std::size_t>(ni));
  for (std::int64_t i = 0; i < ni; ++i) {
    out.confounder[i] = std::pow(1.0 / static_cast<double>(i + 1), spec.exposure_skew);
  }
  double mean = 0.0;
  for (double v : out.confounder) mean += v;
  mean /= static_cast<double>(ni);
  double var = 0.0;
  for (double v : out.confounder) var += (v - mean) * (v - mean);
  var /= static_cast<double>(ni);
  const double sd = std::sqrt(std::max(var, 1e-12));
  for (auto& v : out.confounder) v = (v - mean) / sd;

  out.exposure.resize(static_cast<std::size_t>(nu * ni));
  std::vector<double> logits(static_cast<std::size_t>(ni));
  DatasetBundle& bundle = out.bundle;
  bundle.user_count = nu;
  bundle.item_count = ni;
  bundle.seed = spec.seed;

  const std::int64_t n_val = std::max<std::int64_t>(1, spec.positives_per_user / 7);
  const std::int64_t n_test = std::max<std::int64_t>(1, 2 * spec.positives_per_user / 7);

  for (std::int64_t u = 0; u < nu; ++u) {
    for (std::int64_t i = 0; i < ni; ++i) {
      logits[i] = out.preference[u * ni + i] + spec.confounder_strength * out.confounder[i];
    }
    const auto biased = softmax(logits.data(), logits.size());
    std::copy(biased.begin(), biased.end(), out.exposure.begin() + u * ni);
    const auto unbiased = softmax(out.preference.data() + u * ni, static_cast<std::size_t>(ni));

    std::unordered_set<std::int64_t> taken;
    std::vector<std::int64_t> picks;
    draw_distinct(biased, spec.positives_per_user, taken, picks, rng);
    for (auto i : picks) bundle.train.emplace_back(u, i);

    picks.clear();
    draw_distinct(unbiased, n_val, taken, picks, rng);
    for (auto i : picks) bundle.val.emplace_back(u, i);

    picks.clear();
    draw_distinct(unbiased, n_test, taken, picks, rng);
    for (auto i : picks) bundle.test.emplace_back(u, i);
  }
  bundle.train_from_random.assign(bundle.train.size(), 0);
  bundle.rebuild_caches();
  return out;
}

// ---------------------------------------------------------------------------
// Bundle files

namespace {

void write_pairs(const std::string& path, const std::vector<Pair>& pairs) {
  std::ofstream o(path, std::ios::binary);
  if (!o) fail("save_bundle: cannot write '" + path + "'");
  for (const auto& [u, i] : pairs) o << u << ' ' << i << '\n';
}

std::vector<Pair> read_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("load_bundle: cannot open '" + path + "'");
  std::vector<Pair> out;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::istringstream is(line);
    std::int64_t u = 0, i = 0;
    if (!(is >> u >> i)) {
      fail("load_bundle: malformed line " + std::to_string(line_no) + " in '" + path + "'");
    }
    out.emplace_back(u, i);
  }
  return out;
}

}  // namespace

void save_bundle(const std::string& prefix, const DatasetBundle& bundle) {
  // Keep the biased-first ordering promise: reorder train so records flagged
  // from-random trail the rest.
  std::vector<Pair> train_sorted;
  train_sorted.reserve(bundle.train.size());
  std::int64_t random_tail = 0;
  for (std::size_t i = 0; i < bundle.train.size(); ++i) {
    if (!bundle.train_from_random[i]) train_sorted.push_back(bundle.train[i]);
  }
  for (std::size_t i = 0; i < bundle.train.size(); ++i) {
    if (bundle.train_from_random[i]) {
      train_sorted.push_back(bundle.train[i]);
      ++random_tail;
    }
  }
  write_pairs(prefix + ".train.txt", train_sorted);
  write_pairs(prefix + ".val.txt", bundle.val);
  write_pairs(prefix + ".test.txt", bundle.test);
  std::ofstream meta(prefix + ".meta.txt", std::ios::binary);
  if (!meta) fail("save_bundle: cannot write '" + prefix + ".meta.txt'");
  meta << "users=" << bundle.user_count << '\n'
       << "items=" << bundle.item_count << '\n'
       << "train=" << bundle.train.size() << '\n'
       << "val=" << bundle.val.size() << '\n'
       << "test=" << bundle.test.size() << '\n'
       << "train_random_tail=" << random_tail << '\n'
       << "seed=" << bundle.seed << '\n';
}

DatasetBundle load_bundle(const std::string& prefix) {
  std::ifstream meta(prefix + ".meta.txt");
  if (!meta) fail("load_bundle: cannot open '" + prefix + ".meta.txt'");
  std::unordered_map<std::string, std::int64_t> kv;
  std::string line;
  while (std::getline(meta, line)) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail("load_bundle: malformed meta line '" + t + "'");
    std::int64_t v = 0;
    if (!parse_int(t.substr(eq + 1), v)) fail("load_bundle: malformed meta line '" + t + "'");
    kv[t.substr(0, eq)] = v;
  }
  for (const char* key : {"users", "items", "train", "val", "test", "train_random_tail", "seed"}) {
    if (!kv.count(key)) fail("load_bundle: meta missing key '" + std::string(key) + "'");
  }

  DatasetBundle bundle;
  bundle.user_count = kv["users"];
  bundle.item_count = kv["items"];
  bundle.seed = static_cast<std::uint64_t>(kv["seed"]);
  bundle.train = read_pairs(prefix + ".train.txt");
  bundle.val = read_pairs(prefix + ".val.txt");
  bundle.test = read_pairs(prefix + ".test.txt");
  if (static_cast<std::int64_t>(bundle.train.size()) != kv["train"] ||
      static_cast<std::int64_t>(bundle.val.size()) != kv["val"] ||
      static_cast<std::int64_t>(bundle.test.size()) != kv["test"]) {
    fail("load_bundle: pair counts disagree with meta for '" + prefix + "'");
  }
  const std::int64_t tail = kv["train_random_tail"];
  if (tail < 0 || tail > static_cast<std::int64_t>(bundle.train.size())) {
    fail("load_bundle: bad train_random_tail");
  }
  bundle.train_from_random.assign(bundle.train.size(), 0);
  for (std::size_t i = bundle.train.size() - static_cast<std::size_t>(tail);
       i < bundle.train.size(); ++i) {
    bundle.train_from_random[i] = 1;
  }
  for (const auto& [u, i] : bundle.train) {
    if (u < 0 || u >= bundle.user_count || i < 0 || i >= bundle.item_count) {
      fail("load_bundle: index out of range in train pairs");
    }
  }
  bundle.rebuild_caches();
  return bundle;
}

}  // namespace civrec::data
