#pragma once

#include <cstdint>
#include <vector>

#include "deepred/history.hpp"
#include "deepred/tape.hpp"

namespace deepred {

enum class DeltaTransform { kRaw, kLogDecay };
enum class Pooling { kMax, kMean };

struct ModelConfig {
  int d = 16;      // long-term embedding dimension
  int hidden = 0;  // recurrent state dimension; 0 means same as d
  int k = 5;       // history length
  DeltaTransform delta_transform = DeltaTransform::kRaw;
  Pooling pooling = Pooling::kMax;
  bool use_theta = false;

  int hidden_dim() const { return hidden > 0 ? hidden : d; }
};

// One gate's parameter set: separate terms for the counterpart embedding,
// the recency delta, and the recurrent state.
struct GruGate {
  Parameter w_input;  // hidden x d
  Parameter w_delta;  // hidden x 1
  Parameter w_state;  // hidden x hidden
  Parameter b_input;  // hidden x 1
  Parameter b_delta;  // hidden x 1
  Parameter b_state;  // hidden x 1
};

// Shared by the user and item encoders; exactly one instance per model.
struct GruParams {
  GruGate z, r, n;
};

// Long-term embeddings plus the shared encoder. Row u is user u, row U+i is
// item i, and row U+I is the all-zero padding row which never receives
// gradient updates.
struct Model {
  ModelConfig cfg;
  int num_users = 0;
  int num_items = 0;
  Parameter embeddings;  // (U + I + 1) x d
  GruParams gru;
  Parameter theta;  // hidden x hidden, in the graph only when cfg.use_theta
  // Mean inter-event gap of the training split; divides raw deltas before
  // they reach the encoder. 1.0 until calibrated.
  double delta_scale = 1.0;

  int user_row(int u) const { return u; }
  int item_row(int i) const { return num_users + i; }
  int padding_row() const { return num_users + num_items; }

  // Canonical parameter order (embeddings, gates z/r/n, theta last when
  // enabled); checkpointing, clipping, and the optimizer all follow it.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

Model make_model(const ModelConfig& cfg, int num_users, int num_items, uint64_t seed);

// Sets model.delta_scale from the mean gap between consecutive training
// events (1.0 when the split has fewer than two events or zero total span).
void calibrate_delta_scale(Model& model, std::span<const Event> train_events);

double transform_delta(const Model& model, double delta);

// The encoder input: long-term embeddings of the history counterparts as
// columns (oldest to newest), transformed deltas, and the validity mask.
// Padded slots contribute exact-zero columns with mask 0.
struct SignatureNodes {
  NodeId embeddings = -1;  // d x k
  std::vector<double> deltas;
  std::vector<uint8_t> mask;
};

SignatureNodes build_signature(Tape& tape, const Model& model, const History& history);

// Feature columns produced by an encoder, one per history slot.
struct EncodedNodes {
  NodeId features = -1;  // hidden x k
  std::vector<uint8_t> mask;
};

// Delta-aware recurrence over the signature. Padded leading steps leave the
// state unchanged and emit masked zero columns. The update is
//   z_j = sigmoid(W1z e_j + b1z + W2z delta_j + b2z + W3z h_{j-1} + b3z)
//   r_j = sigmoid(W1r e_j + b1r + W2r delta_j + b2r + W3r h_{j-1} + b3r)
//   n_j = tanh(W1n e_j + b1n + W2n delta_j + b2n + z_j * (W3n h_{j-1} + b3n))
//   h_j = (1 - r_j) * n_j + r_j * h_{j-1}
// with z gating the candidate's recurrent term and r interpolating. That
// role assignment is deliberate and guarded by a golden-vector test; do not
// "fix" it to the conventional gate roles.
EncodedNodes gru_encode(Tape& tape, const Model& model, const SignatureNodes& sig);

// Static-network encoder: the signature's embedding columns pass through
// unchanged (no recurrence, deltas unused).
EncodedNodes static_encode(Tape& tape, const Model& model, const History& history);

// tanh-bounded compatibility grid between the two feature sets; entry (j, m)
// is meaningful only when both positions are valid.
NodeId align(Tape& tape, const Model& model, const EncodedNodes& user_side,
             const EncodedNodes& item_side);

struct AttentionNodes {
  NodeId user_scores = -1;  // k_u x 1, valid per the user mask
  NodeId item_scores = -1;  // k_i x 1, valid per the item mask
};

// Per-position pooling over the alignment grid (max by default, masked mean
// as the alternative). Throws when either side has no valid position.
AttentionNodes attend(Tape& tape, NodeId alignment, const std::vector<uint8_t>& user_mask,
                      const std::vector<uint8_t>& item_mask, Pooling pooling);

// Attention-weighted sum of feature columns; padded columns get exactly zero
// weight.
NodeId project(Tape& tape, NodeId features, NodeId scores,
               const std::vector<uint8_t>& mask);

struct ForwardNodes {
  NodeId user_embed = -1;
  NodeId item_embed = -1;
  NodeId user_weights = -1;  // softmax weights, exposed for invariant checks
  NodeId item_weights = -1;
};

// Alignment -> attention -> projection over already-encoded feature sets.
// The two sides may have different history lengths.
ForwardNodes forward_from_features(Tape& tape, const Model& model,
                                   const EncodedNodes& user_side,
                                   const EncodedNodes& item_side);

// Full composition: signatures -> shared encoder -> alignment -> attention ->
// projections.
ForwardNodes forward(Tape& tape, const Model& model, const History& user_history,
                     const History& item_history);

// Static-mode composition (lookup encoder, same alignment/attention head).
ForwardNodes forward_static(Tape& tape, const Model& model, const History& user_history,
                            const History& item_history);

}  // namespace deepred
