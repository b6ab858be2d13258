// Command-line front end: ingest, train, evaluate, predict, sweep, and the
// static-network pipeline. One command per process; exit code 0 iff the
// command completed, otherwise a single `error: ...` line on stderr.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "deepred/checkpoint.hpp"
#include "deepred/event_log.hpp"
#include "deepred/evaluator.hpp"
#include "deepred/run_config.hpp"
#include "deepred/trainer.hpp"

namespace {

using namespace deepred;
namespace fs = std::filesystem;

struct CommonArgs {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
};

// Registers --config plus one override option per config key, so --help
// documents every key and its default.
void add_config_options(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration file (key = value lines)");
  for (const KeySpec& key : RunConfig::keys()) {
    std::string name = "--" + key.name;
    std::string help = key.help + " [default: " +
                       (key.default_value.empty() ? "(empty)" : key.default_value) + "]";
    cmd->add_option_function<std::string>(
        name,
        [&args, key_name = key.name](const std::string& value) {
          args.overrides.emplace_back(key_name, value);
        },
        help);
  }
}

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg = args.config_path.empty() ? RunConfig() : RunConfig::from_file(args.config_path);
  cfg.apply_env_seed();
  for (const auto& [key, value] : args.overrides) cfg.set(key, value);
  return cfg;
}

EventLog load_log(const RunConfig& cfg) {
  const std::string& cache = cfg.get("cache");
  if (!cache.empty() && fs::exists(cache)) return read_log_cache_file(cache);
  const std::string& data = cfg.get("data");
  if (!data.empty()) {
    ParseResult r = parse_event_log_file(data);
    if (r.out_of_order_rows > 0) {
      std::cerr << "warning: " << r.out_of_order_rows
                << " input rows were out of order and have been sorted\n";
    }
    return std::move(r.log);
  }
  throw std::runtime_error("no input: set 'data' or 'cache' in the configuration");
}

void write_resolved_next_to(const RunConfig& cfg, const std::string& output_path,
                            const std::string& command) {
  fs::path dir = fs::path(output_path).parent_path();
  if (dir.empty()) dir = ".";
  fs::create_directories(dir);
  cfg.write_resolved((dir / ("resolved_config_" + command + ".cfg")).string());
}

LogSlice pick_slice(const Split& split, const std::string& name) {
  if (name == "val") return split.val;
  if (name == "test") return split.test;
  throw std::runtime_error("unknown split '" + name + "' (expected val or test)");
}

int cmd_ingest(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  const std::string& data = cfg.get("data");
  const std::string& cache = cfg.get("cache");
  if (data.empty()) throw std::runtime_error("ingest needs 'data'");

  ParseResult r = parse_event_log_file(data);
  if (!cache.empty()) {
    fs::path dir = fs::path(cache).parent_path();
    if (!dir.empty()) fs::create_directories(dir);
    write_log_cache_file(cache, r.log);
  }

  const EventLog& log = r.log;
  std::cout << "users = " << log.num_users() << "\n"
            << "items = " << log.num_items() << "\n"
            << "events = " << log.size() << "\n"
            << "time_span = [" << log.events().front().time << ", "
            << log.events().back().time << "]\n"
            << "repeat_action_rate = " << repeat_action_rate(log) << "\n"
            << "out_of_order_rows = " << r.out_of_order_rows << "\n";
  if (!cache.empty()) std::cout << "cache = " << cache << "\n";
  write_resolved_next_to(cfg, cache.empty() ? data : cache, "ingest");
  return 0;
}

int cmd_train(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  if (cfg.is_static()) {
    throw std::runtime_error("mode is static; use static-train");
  }
  EventLog log = load_log(cfg);
  Split split = temporal_split(log, cfg.fractions());

  Model model = make_model(cfg.model_config(), log.num_users(), log.num_items(),
                           cfg.get_uint64("seed"));
  TrainConfig tc = cfg.train_config();
  fs::create_directories(tc.checkpoint_dir);
  write_resolved_next_to(cfg, (fs::path(tc.checkpoint_dir) / "x").string(), "train");

  TrainResult result = train(model, log, split, tc);
  if (result.aborted) {
    throw std::runtime_error("training aborted (" + result.abort_reason +
                             "); last good state saved to " + result.final_checkpoint_path);
  }
  std::cout << "epochs = " << result.epochs.size() << "\n";
  if (!result.epochs.empty()) {
    std::cout << "final_train_loss = " << result.epochs.back().train_loss << "\n"
              << "best_epoch = " << result.best_epoch << "\n"
              << "best_val_mrr = " << result.best_metric << "\n";
  }
  std::cout << "best_checkpoint = " << result.best_checkpoint_path << "\n"
            << "final_checkpoint = " << result.final_checkpoint_path << "\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& checkpoint,
                 const std::string& split_name) {
  RunConfig cfg = resolve_config(args);
  Checkpoint ck = load_checkpoint(checkpoint);
  if (ck.static_mode) {
    throw std::runtime_error("checkpoint was trained in static mode; use static-eval");
  }
  EventLog log = load_log(cfg);
  Split split = temporal_split(log, cfg.fractions());
  LogSlice slice = pick_slice(split, split_name);

  std::vector<ReplayRecord> dump;
  std::vector<ReplayRecord>* dump_ptr = cfg.get("rank_dump").empty() ? nullptr : &dump;
  RankingOutcome out = replay_evaluate(ck.model, log, slice, cfg.eval_mode(),
                                       cfg.get_bool("freeze_store"), dump_ptr);

  nlohmann::ordered_json j;
  j["split"] = split_name;
  j["mode"] = cfg.get("eval_mode");
  j["mrr"] = out.mrr;
  j["recall_at_1"] = out.recall_at_1;
  j["recall_at_10"] = out.recall_at_10;
  j["num_events"] = out.num_events;
  j["wall_seconds"] = out.wall_seconds;

  const std::string& results = cfg.get("results");
  fs::path dir = fs::path(results).parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  std::ofstream rf(results, std::ios::trunc);
  if (!rf) throw std::runtime_error("cannot write results '" + results + "'");
  rf << j.dump(2) << "\n";

  if (dump_ptr) {
    std::ofstream df(cfg.get("rank_dump"), std::ios::trunc);
    if (!df) throw std::runtime_error("cannot write rank dump");
    df << "event_index,user,item,time,rank\n";
    for (const ReplayRecord& rec : dump) {
      df << rec.event_index << "," << rec.user << "," << rec.item << ","
         << rec.time << "," << rec.rank << "\n";
    }
  }

  std::cout << j.dump(2) << "\n";
  write_resolved_next_to(cfg, results, "evaluate");
  return 0;
}

int cmd_predict(const CommonArgs& args, const std::string& checkpoint,
                const std::string& user_id, double time, int topk) {
  RunConfig cfg = resolve_config(args);
  Checkpoint ck = load_checkpoint(checkpoint);
  EventLog log = load_log(cfg);

  int user = log.user_index(user_id);
  if (user < 0) throw std::runtime_error("unknown user '" + user_id + "'");

  auto ranking = predict_topk(ck.model, log, user, time, topk, cfg.eval_mode());
  std::cout << "rank,item_id,distance\n";
  for (size_t i = 0; i < ranking.size(); ++i) {
    std::cout << (i + 1) << "," << log.item_name(ranking[i].first) << ","
              << ranking[i].second << "\n";
  }
  return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& param,
              const std::string& value_list) {
  static const std::vector<std::string> kSweepable = {"k", "d", "train_fraction"};
  if (std::find(kSweepable.begin(), kSweepable.end(), param) == kSweepable.end()) {
    throw std::runtime_error("cannot sweep '" + param +
                             "'; sweepable keys: k, d, train_fraction");
  }

  std::vector<std::string> values;
  std::stringstream ss(value_list);
  std::string piece;
  while (std::getline(ss, piece, ',')) {
    if (piece.empty()) continue;
    if (std::find(values.begin(), values.end(), piece) != values.end()) {
      std::cerr << "warning: duplicate sweep value '" << piece << "' ignored\n";
      continue;
    }
    values.push_back(piece);
  }
  if (values.empty()) throw std::runtime_error("no sweep values given");

  RunConfig base = resolve_config(args);
  EventLog log = load_log(base);

  const std::string& results = base.get("results");
  fs::path dir = fs::path(results).parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  std::ofstream csv(results, std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write results '" + results + "'");
  csv << param << ",mrr,recall_at_10\n";

  for (const std::string& value : values) {
    RunConfig cfg = base;
    cfg.set(param, value);
    if (param == "train_fraction") {
      // hold the validation share, give the remainder to test
      double f = cfg.get_double("train_fraction");
      double v = cfg.get_double("val_fraction");
      double t = 1.0 - f - v;
      if (t <= 0.0) throw std::runtime_error("train_fraction " + value + " leaves no test data");
      cfg.set("test_fraction", std::to_string(t));
    }
    std::string run_dir =
        (fs::path(cfg.get("checkpoint_dir")) / ("sweep_" + param + "_" + value)).string();
    cfg.set("checkpoint_dir", run_dir);
    cfg.set("metrics", (fs::path(run_dir) / "metrics.jsonl").string());

    Split split = temporal_split(log, cfg.fractions());
    Model model = make_model(cfg.model_config(), log.num_users(), log.num_items(),
                             cfg.get_uint64("seed"));
    TrainConfig tc = cfg.train_config();
    TrainResult tr = train(model, log, split, tc);
    if (tr.aborted) throw std::runtime_error("sweep run diverged at " + param + "=" + value);

    // evaluate the best-validation model on the test split
    if (!tr.best_checkpoint_path.empty()) {
      model = load_checkpoint(tr.best_checkpoint_path).model;
    }
    RankingOutcome out = replay_evaluate(model, log, split.test, cfg.eval_mode());
    csv << value << "," << out.mrr << "," << out.recall_at_10 << "\n";
    csv.flush();
    std::cout << param << " = " << value << ": mrr = " << out.mrr
              << ", recall@10 = " << out.recall_at_10 << "\n";
  }
  write_resolved_next_to(base, results, "sweep");
  return 0;
}

int cmd_static_train(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  if (!cfg.is_static()) throw std::runtime_error("static-train needs mode = static");
  EventLog log = load_log(cfg);
  auto parts = random_split(log, cfg.fractions(), cfg.get_uint64("seed"));

  Model model = make_model(cfg.model_config(), log.num_users(), log.num_items(),
                           cfg.get_uint64("seed"));
  TrainConfig tc = cfg.train_config();
  fs::create_directories(tc.checkpoint_dir);
  write_resolved_next_to(cfg, (fs::path(tc.checkpoint_dir) / "x").string(), "static-train");

  TrainResult result = train_static(model, log, parts[0], parts[1], tc);
  if (result.aborted) {
    throw std::runtime_error("training aborted (" + result.abort_reason + ")");
  }
  std::cout << "epochs = " << result.epochs.size() << "\n";
  if (!result.epochs.empty()) {
    std::cout << "final_train_loss = " << result.epochs.back().train_loss << "\n"
              << "best_epoch = " << result.best_epoch << "\n"
              << "best_val_ap = " << result.best_metric << "\n";
  }
  std::cout << "best_checkpoint = " << result.best_checkpoint_path << "\n"
            << "final_checkpoint = " << result.final_checkpoint_path << "\n";
  return 0;
}

int cmd_static_eval(const CommonArgs& args, const std::string& checkpoint) {
  RunConfig cfg = resolve_config(args);
  if (!cfg.is_static()) throw std::runtime_error("static-eval needs mode = static");
  Checkpoint ck = load_checkpoint(checkpoint);
  EventLog log = load_log(cfg);

  StaticEvalResult out =
      static_link_prediction(ck.model, log, cfg.get_uint64("seed"), cfg.fractions());

  nlohmann::ordered_json j;
  j["split"] = "test";
  j["mode"] = "static";
  j["average_precision"] = out.average_precision;
  j["num_positives"] = out.num_positives;
  j["num_negatives"] = out.num_negatives;
  j["wall_seconds"] = out.wall_seconds;

  const std::string& results = cfg.get("results");
  fs::path dir = fs::path(results).parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  std::ofstream rf(results, std::ios::trunc);
  if (!rf) throw std::runtime_error("cannot write results '" + results + "'");
  rf << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  write_resolved_next_to(cfg, results, "static-eval");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temporal interaction prediction engine"};
  app.require_subcommand(1);

  CommonArgs ingest_args, train_args, eval_args, predict_args, sweep_args;
  CommonArgs static_train_args, static_eval_args;

  CLI::App* ingest = app.add_subcommand("ingest", "parse a CSV log and write the binary cache");
  add_config_options(ingest, ingest_args);

  CLI::App* train_cmd = app.add_subcommand("train", "train on the temporal split");
  add_config_options(train_cmd, train_args);

  CLI::App* evaluate = app.add_subcommand("evaluate", "replay-rank a held-out split");
  std::string eval_checkpoint, eval_split = "test";
  evaluate->add_option("--checkpoint", eval_checkpoint, "model checkpoint")->required();
  evaluate->add_option("--split", eval_split, "val or test [default: test]");
  add_config_options(evaluate, eval_args);

  CLI::App* predict = app.add_subcommand("predict", "rank items for one user at a time point");
  std::string predict_checkpoint, predict_user;
  double predict_time = 0.0;
  int predict_k = 10;
  predict->add_option("--checkpoint", predict_checkpoint, "model checkpoint")->required();
  predict->add_option("--user", predict_user, "original user id")->required();
  predict->add_option("--time", predict_time, "query timestamp")->required();
  predict->add_option("--topk", predict_k, "list length [default: 10]");
  add_config_options(predict, predict_args);

  CLI::App* sweep = app.add_subcommand("sweep", "train+evaluate across parameter values");
  std::string sweep_param, sweep_values;
  sweep->add_option("--param", sweep_param, "one of k, d, train_fraction")->required();
  sweep->add_option("--values", sweep_values, "comma-separated values")->required();
  add_config_options(sweep, sweep_args);

  CLI::App* static_train = app.add_subcommand("static-train", "train on a static network");
  add_config_options(static_train, static_train_args);

  CLI::App* static_eval =
      app.add_subcommand("static-eval", "link-prediction average precision");
  std::string static_checkpoint;
  static_eval->add_option("--checkpoint", static_checkpoint, "model checkpoint")->required();
  add_config_options(static_eval, static_eval_args);

  try {
    app.parse(argc, argv);
    if (ingest->parsed()) return cmd_ingest(ingest_args);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (evaluate->parsed()) return cmd_evaluate(eval_args, eval_checkpoint, eval_split);
    if (predict->parsed()) {
      return cmd_predict(predict_args, predict_checkpoint, predict_user, predict_time,
                         predict_k);
    }
    if (sweep->parsed()) return cmd_sweep(sweep_args, sweep_param, sweep_values);
    if (static_train->parsed()) return cmd_static_train(static_train_args);
    if (static_eval->parsed()) return cmd_static_eval(static_eval_args, static_checkpoint);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << msg << "\n";
    return 1;
  }
  return 0;
}
