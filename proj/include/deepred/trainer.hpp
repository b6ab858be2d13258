#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "deepred/adam.hpp"
#include "deepred/event_log.hpp"
#include "deepred/evaluator.hpp"
#include "deepred/model.hpp"

namespace deepred {

struct TrainConfig {
  int batch_size = 128;
  double learning_rate = 1e-3;
  int epochs = 5;
  double gamma = 0.01;  // anti-collapse regularization coefficient
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  uint64_t seed = 42;
  bool shuffle = true;
  int checkpoint_every = 1;
  double clip_norm = 5.0;
  std::string checkpoint_dir;  // empty: keep everything in memory
  std::string metrics_path;    // empty: no metrics log
};

// One self-contained optimization unit: the event plus both participants'
// histories at the event's timestamp (the event itself excluded). Samples
// carry everything the loss needs, which is what makes order-free batching
// legal.
struct TrainSample {
  History user_history;
  History item_history;
  Event event;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mrr = 0.0;
  double val_recall10 = 0.0;
  double val_ap = 0.0;  // static mode only
  double wall_seconds = 0.0;
};

// Test instrumentation: observes the sample order each epoch actually used.
struct TrainHooks {
  std::function<void(int epoch, std::span<const size_t> order)> on_epoch_order;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  int best_epoch = -1;  // 1-based; -1 when no epoch ran
  double best_metric = 0.0;
  bool aborted = false;
  std::string abort_reason;
  std::string best_checkpoint_path;
  std::string final_checkpoint_path;
};

// L2 distance plus the anti-collapse penalty:
//   ||u - i||^2 + gamma * ||V^T V - I_2||_F^2,  V = [u i]
NodeId pair_loss(Tape& tape, NodeId user_embed, NodeId item_embed, double gamma);

// Mean of pair losses over the batch, summed in index order. Throws on an
// empty batch.
NodeId batch_loss(Tape& tape, const Model& model, std::span<const TrainSample> samples,
                  double gamma, bool static_mode = false);

// Builds a training sample for one event with histories from `index`.
TrainSample make_sample(const HistoryIndex& index, const Event& e, int k);

// Mini-batch training on the temporal split. Ordering within an epoch is a
// plain shuffle (no temporal constraint); per epoch it records train loss
// and validation MRR/Recall@10 (exact-mode replay), checkpoints on schedule,
// and keeps the best-validation epoch. A non-finite loss aborts and restores
// the last epoch-end state. Deterministic under cfg.seed.
TrainResult train(Model& model, const EventLog& log, const Split& split,
                  const TrainConfig& cfg, const TrainHooks* hooks = nullptr);

// Static-network variant: per-epoch resampled k-histories from the training
// partition, lookup encoder, validation AP instead of MRR.
TrainResult train_static(Model& model, const EventLog& full_log, const EventLog& train_log,
                         const EventLog& val_log, const TrainConfig& cfg,
                         const TrainHooks* hooks = nullptr);

}  // namespace deepred
