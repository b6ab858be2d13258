#include "deepred/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "deepred/checkpoint.hpp"
#include "deepred/rng.hpp"
#include "json.hpp"

namespace deepred {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<Tensor> snapshot_values(std::span<Parameter* const> params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.push_back(p->value);
  return out;
}

void restore_values(std::span<Parameter* const> params, const std::vector<Tensor>& snap) {
  for (size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
}

// Everything the per-epoch loop shares between the temporal and static
// variants.
struct TrainLoop {
  Model& model;
  const TrainConfig& cfg;
  const TrainHooks* hooks;
  bool static_mode;

  std::vector<Parameter*> params;
  AdamState adam;
  Tape tape;
  std::ofstream metrics;
  TrainResult result;
  std::vector<Tensor> last_good;

  TrainLoop(Model& m, const TrainConfig& c, const TrainHooks* h, bool stat)
      : model(m),
        cfg(c),
        hooks(h),
        static_mode(stat),
        params(m.parameters()),
        adam(AdamState::init(params, c.beta1, c.beta2, c.epsilon)) {
    if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (cfg.learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be > 0");
    if (cfg.gamma < 0.0) throw std::invalid_argument("gamma must be >= 0");
    if (!cfg.checkpoint_dir.empty()) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
    }
    if (!cfg.metrics_path.empty()) {
      metrics.open(cfg.metrics_path, std::ios::trunc);
      if (!metrics) throw std::runtime_error("cannot open '" + cfg.metrics_path + "'");
    }
    last_good = snapshot_values(params);
  }

  std::string checkpoint_path(const std::string& name) const {
    return (std::filesystem::path(cfg.checkpoint_dir) / name).string();
  }

  void save(const std::string& name, std::string* out_path) {
    if (cfg.checkpoint_dir.empty()) return;
    std::string path = checkpoint_path(name);
    save_checkpoint(path, model, static_mode, &adam);
    if (out_path) *out_path = path;
  }

  // Returns the epoch's mean per-sample loss, or false on divergence.
  bool run_epoch(std::span<const TrainSample> samples, std::span<const size_t> order,
                 double* mean_loss) {
    double loss_sum = 0.0;
    std::vector<TrainSample> batch;
    batch.reserve(static_cast<size_t>(cfg.batch_size));
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      batch.clear();
      for (size_t i = start; i < stop; ++i) batch.push_back(samples[order[i]]);

      double value = 0.0;
      try {
        tape.reset();
        NodeId loss = batch_loss(tape, model, batch, cfg.gamma, static_mode);
        value = tape.value(loss).at(0, 0);
        for (Parameter* p : params) p->zero_grad();
        tape.backward(loss);
      } catch (const NonFiniteError& e) {
        result.aborted = true;
        result.abort_reason = e.what();
        return false;
      }
      if (!std::isfinite(value)) {
        result.aborted = true;
        result.abort_reason = "non-finite batch loss";
        return false;
      }
      // The padding row takes no part in any signature; keep it pinned.
      for (int c = 0; c < model.cfg.d; ++c) {
        model.embeddings.grad.at(model.padding_row(), c) = 0.0;
      }
      clip_global_norm(params, cfg.clip_norm);
      adam_step(params, adam, cfg.learning_rate);
      loss_sum += value * static_cast<double>(stop - start);
    }
    *mean_loss = loss_sum / static_cast<double>(order.size());
    return true;
  }

  void write_metrics(const EpochMetrics& em) {
    if (!metrics.is_open()) return;
    nlohmann::ordered_json line;
    line["epoch"] = em.epoch;
    line["train_loss"] = em.train_loss;
    if (static_mode) {
      line["val_ap"] = em.val_ap;
    } else {
      line["val_mrr"] = em.val_mrr;
      line["val_recall10"] = em.val_recall10;
    }
    line["wall_seconds"] = em.wall_seconds;
    metrics << line.dump() << "\n";
    metrics.flush();
  }

  void finish_epoch(const EpochMetrics& em, double selection_metric) {
    result.epochs.push_back(em);
    write_metrics(em);
    if (result.best_epoch < 0 || selection_metric > result.best_metric) {
      result.best_epoch = em.epoch;
      result.best_metric = selection_metric;
      save("checkpoint_best.dprd", &result.best_checkpoint_path);
    }
    if (cfg.checkpoint_every > 0 && em.epoch % cfg.checkpoint_every == 0) {
      save("checkpoint_epoch_" + std::to_string(em.epoch) + ".dprd", nullptr);
    }
    last_good = snapshot_values(params);
  }

  void finish_training() {
    if (result.aborted) restore_values(params, last_good);
    save("checkpoint_final.dprd", &result.final_checkpoint_path);
  }
};

}  // namespace

NodeId pair_loss(Tape& tape, NodeId user_embed, NodeId item_embed, double gamma) {
  NodeId diff = tape.sub(user_embed, item_embed);
  NodeId dist = tape.dot(diff, diff);
  // ||V^T V - I||_F^2 expands to (u.u - 1)^2 + 2 (u.i)^2 + (i.i - 1)^2.
  NodeId uu = tape.affine(tape.dot(user_embed, user_embed), 1.0, -1.0);
  NodeId ii = tape.affine(tape.dot(item_embed, item_embed), 1.0, -1.0);
  NodeId ui = tape.dot(user_embed, item_embed);
  NodeId reg = tape.add(tape.add(tape.mul(uu, uu), tape.affine(tape.mul(ui, ui), 2.0, 0.0)),
                        tape.mul(ii, ii));
  return tape.add(dist, tape.affine(reg, gamma, 0.0));
}

NodeId batch_loss(Tape& tape, const Model& model, std::span<const TrainSample> samples,
                  double gamma, bool static_mode) {
  if (samples.empty()) throw std::invalid_argument("empty batch");
  NodeId sum = -1;
  for (const TrainSample& s : samples) {
    ForwardNodes fw = static_mode ? forward_static(tape, model, s.user_history, s.item_history)
                                  : forward(tape, model, s.user_history, s.item_history);
    NodeId loss = pair_loss(tape, fw.user_embed, fw.item_embed, gamma);
    sum = (sum < 0) ? loss : tape.add(sum, loss);
  }
  return tape.affine(sum, 1.0 / static_cast<double>(samples.size()), 0.0);
}

TrainSample make_sample(const HistoryIndex& index, const Event& e, int k) {
  TrainSample s;
  s.user_history = index.user_history_before(e.user, e.time, k);
  s.item_history = index.item_history_before(e.item, e.time, k);
  s.event = e;
  return s;
}

TrainResult train(Model& model, const EventLog& log, const Split& split,
                  const TrainConfig& cfg, const TrainHooks* hooks) {
  if (split.train.size() == 0) throw std::invalid_argument("empty training partition");
  calibrate_delta_scale(model, split.train.events());

  TrainLoop loop(model, cfg, hooks, /*static_mode=*/false);
  HistoryIndex index(log);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();

    // Histories are identical every epoch; rebuilt rather than cached for
    // the epoch to keep peak memory at one epoch's worth. Events where
    // either participant has no prior history cannot form a pair loss and
    // are skipped; those entities still train through later counterpart
    // appearances.
    std::vector<TrainSample> samples;
    samples.reserve(split.train.size());
    for (const Event& e : split.train.events()) {
      TrainSample s = make_sample(index, e, model.cfg.k);
      if (s.user_history.valid_len == 0 || s.item_history.valid_len == 0) continue;
      samples.push_back(std::move(s));
    }
    if (samples.empty()) {
      throw std::invalid_argument("no training event has usable histories");
    }

    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (cfg.shuffle) {
      Rng rng(cfg.seed, "epoch-shuffle", static_cast<uint64_t>(epoch));
      shuffle(order, rng);
    }
    if (hooks && hooks->on_epoch_order) hooks->on_epoch_order(epoch, order);

    EpochMetrics em;
    em.epoch = epoch;
    if (!loop.run_epoch(samples, order, &em.train_loss)) break;

    RankingOutcome val = replay_evaluate(model, log, split.val, EvalMode::kExact);
    em.val_mrr = val.mrr;
    em.val_recall10 = val.recall_at_10;
    em.wall_seconds = seconds_since(t0);
    loop.finish_epoch(em, em.val_mrr);
  }

  loop.finish_training();
  return loop.result;
}

TrainResult train_static(Model& model, const EventLog& full_log, const EventLog& train_log,
                         const EventLog& val_log, const TrainConfig& cfg,
                         const TrainHooks* hooks) {
  if (train_log.size() == 0) throw std::invalid_argument("empty training partition");
  model.delta_scale = 1.0;  // deltas carry no signal in static mode

  TrainLoop loop(model, cfg, hooks, /*static_mode=*/true);
  HistoryIndex train_index(train_log);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();

    Rng hist_rng(cfg.seed, "static-histories", static_cast<uint64_t>(epoch));
    std::vector<TrainSample> samples;
    samples.reserve(train_log.size());
    for (const Event& e : train_log.events()) {
      TrainSample s;
      s.user_history = sample_history_static(train_index, CounterpartKind::kItem, e.user,
                                             model.cfg.k, hist_rng);
      s.item_history = sample_history_static(train_index, CounterpartKind::kUser, e.item,
                                             model.cfg.k, hist_rng);
      s.event = e;
      samples.push_back(std::move(s));
    }

    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (cfg.shuffle) {
      Rng rng(cfg.seed, "epoch-shuffle", static_cast<uint64_t>(epoch));
      shuffle(order, rng);
    }
    if (hooks && hooks->on_epoch_order) hooks->on_epoch_order(epoch, order);

    EpochMetrics em;
    em.epoch = epoch;
    if (!loop.run_epoch(samples, order, &em.train_loss)) break;

    em.val_ap = static_ap(model, full_log, train_index, val_log.events(), cfg.seed,
                          "static-val");
    em.wall_seconds = seconds_since(t0);
    loop.finish_epoch(em, em.val_ap);
  }

  loop.finish_training();
  return loop.result;
}

}  // namespace deepred
