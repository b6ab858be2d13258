#include "deepred/model.hpp"

#include <cmath>
#include <stdexcept>

#include "deepred/rng.hpp"

namespace deepred {

namespace {

void init_uniform(Parameter& p, double bound, Rng& rng) {
  for (double& v : p.value.data) v = (2.0 * rng.next_double() - 1.0) * bound;
}

GruGate make_gate(const char* name, int hidden, int d) {
  GruGate g;
  g.w_input = Parameter(std::string("w1") + name, hidden, d);
  g.w_delta = Parameter(std::string("w2") + name, hidden, 1);
  g.w_state = Parameter(std::string("w3") + name, hidden, hidden);
  g.b_input = Parameter(std::string("b1") + name, hidden, 1);
  g.b_delta = Parameter(std::string("b2") + name, hidden, 1);
  g.b_state = Parameter(std::string("b3") + name, hidden, 1);
  return g;
}

void gate_params(GruGate& g, std::vector<Parameter*>& out) {
  out.push_back(&g.w_input);
  out.push_back(&g.w_delta);
  out.push_back(&g.w_state);
  out.push_back(&g.b_input);
  out.push_back(&g.b_delta);
  out.push_back(&g.b_state);
}

}  // namespace

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  out.push_back(&embeddings);
  gate_params(gru.z, out);
  gate_params(gru.r, out);
  gate_params(gru.n, out);
  if (cfg.use_theta) out.push_back(&theta);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  auto mutable_list = const_cast<Model*>(this)->parameters();
  return {mutable_list.begin(), mutable_list.end()};
}

Model make_model(const ModelConfig& cfg, int num_users, int num_items, uint64_t seed) {
  if (cfg.d < 1 || cfg.hidden_dim() < 1 || cfg.k < 1) {
    throw std::invalid_argument("model config: d, hidden, and k must be >= 1");
  }
  Model m;
  m.cfg = cfg;
  m.num_users = num_users;
  m.num_items = num_items;
  int hidden = cfg.hidden_dim();

  m.embeddings = Parameter("embeddings", num_users + num_items + 1, cfg.d);
  Rng emb_rng(seed, "embedding-init");
  double std = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  for (int r = 0; r < num_users + num_items; ++r) {
    for (int c = 0; c < cfg.d; ++c) m.embeddings.value.at(r, c) = emb_rng.next_normal() * std;
  }
  // padding row stays all-zero

  m.gru.z = make_gate("z", hidden, cfg.d);
  m.gru.r = make_gate("r", hidden, cfg.d);
  m.gru.n = make_gate("n", hidden, cfg.d);
  Rng gru_rng(seed, "gru-init");
  double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (GruGate* g : {&m.gru.z, &m.gru.r, &m.gru.n}) {
    init_uniform(g->w_input, bound, gru_rng);
    init_uniform(g->w_delta, bound, gru_rng);
    init_uniform(g->w_state, bound, gru_rng);
    // biases start at zero
  }

  m.theta = Parameter("theta", hidden, hidden);
  for (int i = 0; i < hidden; ++i) m.theta.value.at(i, i) = 1.0;

  return m;
}

void calibrate_delta_scale(Model& model, std::span<const Event> train_events) {
  // History deltas are recency gaps of one entity, so the normalizer is the
  // mean gap between consecutive events of the same user or item; a global
  // event gap would be off by a factor of the entity count and saturate the
  // delta terms.
  model.delta_scale = 1.0;
  std::vector<double> last_user(static_cast<size_t>(model.num_users), -1.0);
  std::vector<double> last_item(static_cast<size_t>(model.num_items), -1.0);
  double sum = 0.0;
  size_t count = 0;
  for (const Event& e : train_events) {
    if (last_user[static_cast<size_t>(e.user)] >= 0.0) {
      sum += e.time - last_user[static_cast<size_t>(e.user)];
      ++count;
    }
    if (last_item[static_cast<size_t>(e.item)] >= 0.0) {
      sum += e.time - last_item[static_cast<size_t>(e.item)];
      ++count;
    }
    last_user[static_cast<size_t>(e.user)] = e.time;
    last_item[static_cast<size_t>(e.item)] = e.time;
  }
  if (count > 0 && sum > 0.0) model.delta_scale = sum / static_cast<double>(count);
}

double transform_delta(const Model& model, double delta) {
  switch (model.cfg.delta_transform) {
    case DeltaTransform::kRaw:
      return delta / model.delta_scale;
    case DeltaTransform::kLogDecay:
      return 1.0 / std::log(2.718281828459045235360287471353 + delta);
  }
  return delta;
}

SignatureNodes build_signature(Tape& tape, const Model& model, const History& history) {
  int k = history.k();
  if (k != model.cfg.k) {
    throw std::invalid_argument("history length " + std::to_string(k) +
                                " does not match configured k " +
                                std::to_string(model.cfg.k));
  }
  int v = history.valid_len;
  SignatureNodes sig;
  sig.deltas.assign(static_cast<size_t>(k), 0.0);
  sig.mask.assign(static_cast<size_t>(k), 0);

  std::vector<int> rows;
  rows.reserve(static_cast<size_t>(v));
  for (int j = k - v; j < k; ++j) {
    const HistoryEntry& e = history.entries[static_cast<size_t>(j)];
    int limit = history.counterpart_kind == CounterpartKind::kItem ? model.num_items
                                                                   : model.num_users;
    if (e.counterpart < 0 || e.counterpart >= limit) {
      throw std::invalid_argument("counterpart index " + std::to_string(e.counterpart) +
                                  " out of range [0," + std::to_string(limit) + ")");
    }
    rows.push_back(history.counterpart_kind == CounterpartKind::kItem
                       ? model.item_row(e.counterpart)
                       : model.user_row(e.counterpart));
    sig.deltas[static_cast<size_t>(j)] = transform_delta(model, e.delta);
    sig.mask[static_cast<size_t>(j)] = 1;
  }

  if (v == 0) {
    sig.embeddings = tape.zeros(model.cfg.d, k);
  } else {
    NodeId table = tape.param(const_cast<Parameter*>(&model.embeddings));
    NodeId gathered = tape.gather_columns(table, std::move(rows));
    if (v == k) {
      sig.embeddings = gathered;
    } else {
      NodeId pad = tape.zeros(model.cfg.d, k - v);
      NodeId parts[2] = {pad, gathered};
      sig.embeddings = tape.concat_columns(parts);
    }
  }
  return sig;
}

EncodedNodes gru_encode(Tape& tape, const Model& model, const SignatureNodes& sig) {
  int k = static_cast<int>(sig.mask.size());
  int hidden = model.cfg.hidden_dim();
  auto& gru = const_cast<Model&>(model).gru;

  NodeId state = tape.zeros(hidden, 1);
  std::vector<NodeId> columns(static_cast<size_t>(k));

  auto gate_pre = [&](GruGate& g, NodeId input, double delta) {
    NodeId input_term = tape.add(tape.matmul(tape.param(&g.w_input), input),
                                 tape.param(&g.b_input));
    NodeId delta_term = tape.add(tape.affine(tape.param(&g.w_delta), delta, 0.0),
                                 tape.param(&g.b_delta));
    NodeId state_term = tape.add(tape.matmul(tape.param(&g.w_state), state),
                                 tape.param(&g.b_state));
    return tape.add(tape.add(input_term, delta_term), state_term);
  };

  for (int j = 0; j < k; ++j) {
    if (!sig.mask[static_cast<size_t>(j)]) {
      columns[static_cast<size_t>(j)] = tape.zeros(hidden, 1);
      continue;
    }
    NodeId input = tape.column(sig.embeddings, j);
    double delta = sig.deltas[static_cast<size_t>(j)];
    NodeId z = tape.sigmoid(gate_pre(gru.z, input, delta));
    NodeId r = tape.sigmoid(gate_pre(gru.r, input, delta));
    NodeId candidate_state = tape.mul(
        z, tape.add(tape.matmul(tape.param(&gru.n.w_state), state), tape.param(&gru.n.b_state)));
    NodeId candidate_pre =
        tape.add(tape.add(tape.matmul(tape.param(&gru.n.w_input), input),
                          tape.param(&gru.n.b_input)),
                 tape.add(tape.add(tape.affine(tape.param(&gru.n.w_delta), delta, 0.0),
                                   tape.param(&gru.n.b_delta)),
                          candidate_state));
    NodeId candidate = tape.tanh(candidate_pre);
    state = tape.add(tape.mul(tape.affine(r, -1.0, 1.0), candidate), tape.mul(r, state));
    columns[static_cast<size_t>(j)] = state;
  }

  EncodedNodes out;
  out.features = tape.concat_columns(columns);
  out.mask = sig.mask;
  return out;
}

EncodedNodes static_encode(Tape& tape, const Model& model, const History& history) {
  SignatureNodes sig = build_signature(tape, model, history);
  EncodedNodes out;
  out.features = sig.embeddings;
  out.mask = std::move(sig.mask);
  return out;
}

NodeId align(Tape& tape, const Model& model, const EncodedNodes& user_side,
             const EncodedNodes& item_side) {
  NodeId user_t = tape.transpose(user_side.features);
  if (model.cfg.use_theta) {
    NodeId theta = tape.param(const_cast<Parameter*>(&model.theta));
    return tape.tanh(tape.matmul(tape.matmul(user_t, theta), item_side.features));
  }
  return tape.tanh(tape.matmul(user_t, item_side.features));
}

AttentionNodes attend(Tape& tape, NodeId alignment, const std::vector<uint8_t>& user_mask,
                      const std::vector<uint8_t>& item_mask, Pooling pooling) {
  AttentionNodes out;
  if (pooling == Pooling::kMax) {
    out.user_scores = tape.masked_max_rows(alignment, user_mask, item_mask).values;
    out.item_scores = tape.masked_max_cols(alignment, user_mask, item_mask).values;
  } else {
    out.user_scores = tape.masked_mean_rows(alignment, user_mask, item_mask);
    out.item_scores = tape.masked_mean_cols(alignment, user_mask, item_mask);
  }
  return out;
}

NodeId project(Tape& tape, NodeId features, NodeId scores,
               const std::vector<uint8_t>& mask) {
  return tape.matmul(features, tape.masked_softmax(scores, mask));
}

ForwardNodes forward_from_features(Tape& tape, const Model& model,
                                   const EncodedNodes& user_side,
                                   const EncodedNodes& item_side) {
  NodeId alignment = align(tape, model, user_side, item_side);
  AttentionNodes attention =
      attend(tape, alignment, user_side.mask, item_side.mask, model.cfg.pooling);

  ForwardNodes out;
  NodeId user_weights = tape.masked_softmax(attention.user_scores, user_side.mask);
  NodeId item_weights = tape.masked_softmax(attention.item_scores, item_side.mask);
  out.user_embed = tape.matmul(user_side.features, user_weights);
  out.item_embed = tape.matmul(item_side.features, item_weights);
  out.user_weights = user_weights;
  out.item_weights = item_weights;
  return out;
}

ForwardNodes forward(Tape& tape, const Model& model, const History& user_history,
                     const History& item_history) {
  EncodedNodes user_side = gru_encode(tape, model, build_signature(tape, model, user_history));
  EncodedNodes item_side = gru_encode(tape, model, build_signature(tape, model, item_history));
  return forward_from_features(tape, model, user_side, item_side);
}

ForwardNodes forward_static(Tape& tape, const Model& model, const History& user_history,
                            const History& item_history) {
  EncodedNodes user_side = static_encode(tape, model, user_history);
  EncodedNodes item_side = static_encode(tape, model, item_history);
  return forward_from_features(tape, model, user_side, item_side);
}

}  // namespace deepred
