#include "civrec/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "civrec/checkpoint.hpp"
#include "civrec/data.hpp"
#include "civrec/evalmod.hpp"
#include "civrec/runconfig.hpp"
#include "civrec/trainer.hpp"

namespace civrec::cli {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

LogLevel detect_log_level() {
  const char* env = std::getenv("CIVREC_LOG");
  if (env == nullptr) return LogLevel::kInfo;
  const std::string v(env);
  if (v == "quiet") return LogLevel::kQuiet;
  if (v == "info") return LogLevel::kInfo;
  if (v == "debug") return LogLevel::kDebug;
  fail("CIVREC_LOG must be one of quiet|info|debug, got '" + v + "'");
}

void log_info(const std::string& line) {
  if (log_level() >= LogLevel::kInfo) std::cout << line << '\n';
}

std::string format_report(const trainer::LossReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "epoch=%lld l_civ=%.9g l_click=%.9g l_total=%.9g seconds=%.3f",
                static_cast<long long>(r.epoch), r.l_civ, r.l_click, r.l_total, r.seconds);
  return buf;
}

std::vector<std::int64_t> parse_k_list(const std::string& spec) {
  std::vector<std::int64_t> ks;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      ks.push_back(std::stoll(tok));
    } catch (...) {
      fail("--k: bad list '" + spec + "'");
    }
  }
  if (ks.empty()) fail("--k: empty list");
  return ks;
}

struct PrepareArgs {
  std::string input, output, config;
  int binarize_threshold = 5;
  int kcore = 10;
  std::uint64_t seed = 0;
  bool synthetic = false;
  bool threshold_set = false, kcore_set = false, seed_set = false;
};

int cmd_prepare(const PrepareArgs& args) {
  runconfig::RunConfig config;
  if (!args.config.empty()) config = runconfig::parse_config_file(args.config);
  if (args.threshold_set) config.binarize_threshold = args.binarize_threshold;
  if (args.kcore_set) config.kcore = args.kcore;

  data::DatasetBundle bundle;
  if (args.synthetic) {
    if (args.seed_set) config.synthetic.seed = args.seed;
    bundle = data::generate_synthetic(config.synthetic).bundle;
  } else {
    if (args.input.empty()) fail("prepare: --input is required (or pass --synthetic)");
    const auto records = data::load_interactions(args.input);
    const auto labeled = data::binarize(records, config.binarize_threshold);
    auto pairs = data::k_core_filter(data::positive_pairs(labeled), config.kcore);
    if (pairs.empty()) fail("prepare: no positives survive the k-core filter");
    const auto index = data::IndexMap::build(pairs);
    std::vector<data::Pair> indexed;
    indexed.reserve(pairs.size());
    for (const auto& [u, i] : pairs) {
      indexed.emplace_back(index.user_idx.at(u), index.item_idx.at(i));
    }
    Rng rng(args.seed_set ? args.seed : config.train.seed);
    bundle = data::split_biased_unbiased(indexed, static_cast<std::int64_t>(index.users.size()),
                                         static_cast<std::int64_t>(index.items.size()), rng);
    bundle.seed = args.seed_set ? args.seed : config.train.seed;
  }
  data::save_bundle(args.output, bundle);
  const std::size_t interactions = bundle.train.size() + bundle.val.size() + bundle.test.size();
  std::cout << "users=" << bundle.user_count << " items=" << bundle.item_count
            << " interactions=" << interactions << '\n';
  return 0;
}

struct TrainArgs {
  std::string config, data, out_checkpoint, run_log;
  std::string variant, backbone_kind;
  std::uint64_t seed = 0;
  double lr = 0.0, alpha = -1.0;
  std::int64_t batch = 0, epochs = 0, dim = 0, layers = -1, hidden = -1, eval_every = -1;
  bool seed_set = false, variant_set = false, lr_set = false, batch_set = false;
  bool epochs_set = false, alpha_set = false, dim_set = false, backbone_set = false;
  bool layers_set = false, hidden_set = false, eval_every_set = false;
};

trainer::TrainConfig resolve_train_config(const TrainArgs& args) {
  runconfig::RunConfig config;
  if (!args.config.empty()) config = runconfig::parse_config_file(args.config);
  if (args.variant_set) config.train.variant = trainer::variant_from_string(args.variant);
  if (args.seed_set) config.train.seed = args.seed;
  if (args.lr_set) config.train.lr = args.lr;
  if (args.batch_set) config.train.batch_size = args.batch;
  if (args.epochs_set) config.train.epochs = args.epochs;
  if (args.alpha_set) config.train.decompose.alpha = args.alpha;
  if (args.dim_set) config.train.backbone.dim = args.dim;
  if (args.backbone_set) config.train.backbone.kind = backbone::kind_from_string(args.backbone_kind);
  if (args.layers_set) config.train.backbone.layers = args.layers;
  if (args.hidden_set) config.train.hidden_dim = args.hidden;
  if (args.eval_every_set) config.train.eval_every = args.eval_every;
  return config.train;
}

int cmd_train(const TrainArgs& args) {
  const trainer::TrainConfig config = resolve_train_config(args);
  config.validate();
  const data::DatasetBundle bundle = data::load_bundle(args.data);

  std::ofstream run_log;
  if (!args.run_log.empty()) {
    run_log.open(args.run_log, std::ios::binary);
    if (!run_log) fail("train: cannot write run log '" + args.run_log + "'");
  }
  const auto on_report = [&](const trainer::LossReport& r) {
    const std::string line = format_report(r);
    log_info(line);
    if (run_log) run_log << line << '\n';
  };
  const auto on_eval = [&](std::int64_t epoch, const trainer::ModelState& state) {
    if (bundle.val.empty()) return;
    const auto reports = evalmod::evaluate(state, bundle, evalmod::Split::kVal, {20});
    char buf[128];
    std::snprintf(buf, sizeof(buf), "epoch=%lld val recall@20=%.6f iou@20=%.6f",
                  static_cast<long long>(epoch), reports[0].recall, reports[0].iou);
    log_info(buf);
  };

  const trainer::TrainResult result = trainer::train(config, bundle, on_report, on_eval);
  checkpoint::save_checkpoint(args.out_checkpoint, result.state, result.adam, config.epochs);
  log_info("checkpoint written to " + args.out_checkpoint);
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, split = "test", k = "20,50", out;
};

void check_dims(const trainer::ModelState& state, const data::DatasetBundle& bundle) {
  if (state.user_count != bundle.user_count || state.item_count != bundle.item_count) {
    fail("eval: checkpoint shape (" + std::to_string(state.user_count) + "x" +
         std::to_string(state.item_count) + ") does not match bundle shape (" +
         std::to_string(bundle.user_count) + "x" + std::to_string(bundle.item_count) + ")");
  }
}

void write_metric_rows(std::ostream& o, const std::string& method, const std::string& variant,
                       const std::vector<evalmod::MetricReport>& reports) {
  for (const auto& r : reports) {
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%s,%s,%lld,%.6f,%.6f,%.6f,%.6f", method.c_str(),
                  variant.c_str(), static_cast<long long>(r.k), r.recall, r.hr, r.ndcg, r.iou);
    o << buf << '\n';
  }
}

int cmd_eval(const EvalArgs& args) {
  auto loaded = checkpoint::load_checkpoint(args.checkpoint);
  const data::DatasetBundle bundle = data::load_bundle(args.data);
  check_dims(loaded.state, bundle);
  if (loaded.state.backbone_cfg.kind == backbone::Kind::kLightGcn) {
    loaded.state.adjacency = backbone::build_norm_adjacency(bundle);
  }
  const evalmod::Split split = [&] {
    if (args.split == "val") return evalmod::Split::kVal;
    if (args.split == "test") return evalmod::Split::kTest;
    fail("eval: --split must be val|test");
  }();
  const auto ks = parse_k_list(args.k);
  const auto reports = evalmod::evaluate(loaded.state, bundle, split, ks);

  const std::string method = backbone::to_string(loaded.state.backbone_cfg.kind);
  const std::string variant = trainer::to_string(loaded.state.variant);
  std::cout << "method,variant,k,recall,hr,ndcg,iou\n";
  write_metric_rows(std::cout, method, variant, reports);
  if (!args.out.empty()) {
    std::ofstream o(args.out, std::ios::binary);
    if (!o) fail("eval: cannot write '" + args.out + "'");
    o << "method,variant,k,recall,hr,ndcg,iou\n";
    write_metric_rows(o, method, variant, reports);
  }
  return 0;
}

struct AblateArgs {
  std::string config, data, k = "20", out;
  std::int64_t seeds = 1;
  std::int64_t epochs = 0;
  bool epochs_set = false;
};

int cmd_ablate(const AblateArgs& args) {
  runconfig::RunConfig config;
  if (!args.config.empty()) config = runconfig::parse_config_file(args.config);
  if (args.epochs_set) config.train.epochs = args.epochs;
  if (args.seeds < 1) fail("ablate: --seeds must be >= 1");
  const data::DatasetBundle bundle = data::load_bundle(args.data);
  const auto ks = parse_k_list(args.k);

  const trainer::Variant variants[] = {trainer::Variant::kFull, trainer::Variant::kCausalOnly,
                                       trainer::Variant::kConOnly, trainer::Variant::kOriginal};
  // (variant, k) -> summed recall / iou over seeds
  std::map<std::pair<std::string, std::int64_t>, std::pair<double, double>> sums;
  for (const auto variant : variants) {
    for (std::int64_t s = 0; s < args.seeds; ++s) {
      trainer::TrainConfig tc = config.train;
      tc.variant = variant;
      tc.seed = config.train.seed + static_cast<std::uint64_t>(s);
      const auto result = trainer::train(tc, bundle);
      const auto reports = evalmod::evaluate(result.state, bundle, evalmod::Split::kTest, ks);
      for (const auto& r : reports) {
        auto& acc = sums[{trainer::to_string(variant), r.k}];
        acc.first += r.recall;
        acc.second += r.iou;
      }
      char buf[160];
      std::snprintf(buf, sizeof(buf), "ablate: %s seed %lld done",
                    trainer::to_string(variant).c_str(), static_cast<long long>(tc.seed));
      log_info(buf);
    }
  }

  std::ostringstream table;
  table << "variant,k,metric,mean\n";
  for (const auto& variant : variants) {
    for (const auto k : ks) {
      const auto& acc = sums.at({trainer::to_string(variant), k});
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s,%lld,recall,%.6f\n%s,%lld,iou,%.6f\n",
                    trainer::to_string(variant).c_str(), static_cast<long long>(k),
                    acc.first / static_cast<double>(args.seeds),
                    trainer::to_string(variant).c_str(), static_cast<long long>(k),
                    acc.second / static_cast<double>(args.seeds));
      table << buf;
    }
  }
  std::cout << table.str();
  if (!args.out.empty()) {
    std::ofstream o(args.out, std::ios::binary);
    if (!o) fail("ablate: cannot write '" + args.out + "'");
    o << table.str();
  }
  return 0;
}

}  // namespace

LogLevel log_level() {
  static const LogLevel level = detect_log_level();
  return level;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  static const char* name = "civrec";
  argv.push_back(name);
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"conditional-instrument debiased recommender pipeline"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* prepare = app.add_subcommand("prepare", "ingest a rating log and write bundle files");
  prepare->add_option("--input", prep.input, "rating log (user,item,rating[,timestamp])");
  prepare->add_option("--output", prep.output, "bundle file prefix")->required();
  auto* opt_thr = prepare->add_option("--binarize-threshold", prep.binarize_threshold,
                                      "ratings >= threshold become positives (default 5)");
  auto* opt_kcore = prepare->add_option("--kcore", prep.kcore, "k-core filter order (default 10)");
  auto* opt_pseed = prepare->add_option("--seed", prep.seed, "split seed");
  prepare->add_flag("--synthetic", prep.synthetic, "generate the confounded synthetic benchmark");
  prepare->add_option("--config", prep.config, "key=value config file");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "train a recommender on a bundle");
  train->add_option("--data", tr.data, "bundle file prefix")->required();
  train->add_option("--out-checkpoint", tr.out_checkpoint, "checkpoint path")->required();
  train->add_option("--config", tr.config, "key=value config file");
  train->add_option("--run-log", tr.run_log, "per-epoch loss log path");
  auto* opt_variant = train->add_option("--variant", tr.variant,
                                        "full|causal|con|original|ips|ipsc");
  auto* opt_seed = train->add_option("--seed", tr.seed, "training seed");
  auto* opt_lr = train->add_option("--lr", tr.lr, "learning rate (default 0.001)");
  auto* opt_batch = train->add_option("--batch", tr.batch, "batch size (default 128)");
  auto* opt_epochs = train->add_option("--epochs", tr.epochs, "epoch count");
  auto* opt_alpha = train->add_option("--alpha", tr.alpha, "fusion weight (default 0.85)");
  auto* opt_dim = train->add_option("--dim", tr.dim, "embedding dim (default 128)");
  auto* opt_backbone = train->add_option("--backbone", tr.backbone_kind, "mf|lightgcn");
  auto* opt_layers = train->add_option("--layers", tr.layers, "propagation layers (default 2)");
  auto* opt_hidden = train->add_option("--hidden", tr.hidden, "encoder hidden width");
  auto* opt_ee = train->add_option("--eval-every", tr.eval_every, "validation cadence in epochs");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "rank and score a checkpoint on a split");
  eval->add_option("--checkpoint", ev.checkpoint, "checkpoint path")->required();
  eval->add_option("--data", ev.data, "bundle file prefix")->required();
  eval->add_option("--split", ev.split, "val|test (default test)");
  eval->add_option("--k", ev.k, "comma-separated K list (default 20,50)");
  eval->add_option("--out", ev.out, "write metric rows to this file");

  AblateArgs ab;
  auto* ablate = app.add_subcommand("ablate", "compare full/causal/con/original across seeds");
  ablate->add_option("--data", ab.data, "bundle file prefix")->required();
  ablate->add_option("--config", ab.config, "key=value config file");
  ablate->add_option("--seeds", ab.seeds, "number of seeds per variant (default 1)");
  ablate->add_option("--k", ab.k, "comma-separated K list (default 20)");
  ablate->add_option("--out", ab.out, "write the comparison table to this file");
  auto* opt_ab_epochs = ablate->add_option("--epochs", ab.epochs, "override epoch count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    log_level();  // validate CIVREC_LOG up front
    if (prepare->parsed()) {
      prep.threshold_set = opt_thr->count() > 0;
      prep.kcore_set = opt_kcore->count() > 0;
      prep.seed_set = opt_pseed->count() > 0;
      return cmd_prepare(prep);
    }
    if (train->parsed()) {
      tr.variant_set = opt_variant->count() > 0;
      tr.seed_set = opt_seed->count() > 0;
      tr.lr_set = opt_lr->count() > 0;
      tr.batch_set = opt_batch->count() > 0;
      tr.epochs_set = opt_epochs->count() > 0;
      tr.alpha_set = opt_alpha->count() > 0;
      tr.dim_set = opt_dim->count() > 0;
      tr.backbone_set = opt_backbone->count() > 0;
      tr.layers_set = opt_layers->count() > 0;
      tr.hidden_set = opt_hidden->count() > 0;
      tr.eval_every_set = opt_ee->count() > 0;
      return cmd_train(tr);
    }
    if (eval->parsed()) return cmd_eval(ev);
    if (ablate->parsed()) {
      ab.epochs_set = opt_ab_epochs->count() > 0;
      return cmd_ablate(ab);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 1;
}

}  // namespace civrec::cli
