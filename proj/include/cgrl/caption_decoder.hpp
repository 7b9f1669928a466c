#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "cgrl/autodiff.hpp"
#include "cgrl/consensus.hpp"
#include "cgrl/scene_graph.hpp"

namespace cgrl {

// Fused-gate LSTM cell, gate order i, f, g, o.
struct LstmParams {
  Parameter *w = nullptr, *b = nullptr;  // [4m, in+m], [4m]
  int hidden = 0;
};

inline LstmParams make_lstm(ParamStore& store, const std::string& prefix, int in_dim, int m,
                            Rng& rng) {
  LstmParams p;
  p.hidden = m;
  const int cols = in_dim + m;
  p.w = &store.add(prefix + "/w",
                   random_matrix(static_cast<std::size_t>(4 * m),
                                 static_cast<std::size_t>(cols), rng,
                                 1.0 / std::sqrt(static_cast<double>(cols))));
  Tensor bias = Tensor::zeros({static_cast<std::size_t>(4 * m)});
  // Forget gate bias starts at 1 so memory persists early in training.
  for (int i = m; i < 2 * m; ++i) bias.data[static_cast<std::size_t>(i)] = 1.0;
  p.b = &store.add(prefix + "/b", std::move(bias));
  return p;
}

struct LstmState {
  Var h, c;
};

inline LstmState zero_lstm_state(Tape& tape, int m) {
  return {tape.constant(Tensor::zeros({static_cast<std::size_t>(m)})),
          tape.constant(Tensor::zeros({static_cast<std::size_t>(m)}))};
}

inline LstmState lstm_step(Tape& tape, const LstmParams& p, Var x, const LstmState& prev) {
  const auto m = static_cast<std::size_t>(p.hidden);
  Var z = add(matmul(tape.param(*p.w), concat({x, prev.h})), tape.param(*p.b));
  Var gi = sigmoid(slice(z, 0, m));
  Var gf = sigmoid(slice(z, m, m));
  Var gg = tanh(slice(z, 2 * m, m));
  Var go = sigmoid(slice(z, 3 * m, m));
  Var c = add(mul(gf, prev.c), mul(gi, gg));
  Var h = mul(go, tanh(c));
  return {h, c};
}

// Additive attention head: score_i = v . tanh(Wq q + Wk x_i + b).
struct AttentionParams {
  Parameter *w_query = nullptr, *w_item = nullptr, *v = nullptr, *b = nullptr;
};

inline AttentionParams make_attention(ParamStore& store, const std::string& prefix, int query_dim,
                                      int item_dim, int attn_dim, Rng& rng) {
  AttentionParams p;
  p.w_query = &store.add(prefix + "/wq",
                         random_matrix(static_cast<std::size_t>(attn_dim),
                                       static_cast<std::size_t>(query_dim), rng,
                                       1.0 / std::sqrt(static_cast<double>(query_dim))));
  p.w_item = &store.add(prefix + "/wk",
                        random_matrix(static_cast<std::size_t>(attn_dim),
                                      static_cast<std::size_t>(item_dim), rng,
                                      1.0 / std::sqrt(static_cast<double>(item_dim))));
  p.v = &store.add(prefix + "/v", random_vector(static_cast<std::size_t>(attn_dim), rng, 0.1));
  p.b = &store.add(prefix + "/b", Tensor::zeros({static_cast<std::size_t>(attn_dim)}));
  return p;
}

inline Var attention_weights(Tape& tape, const AttentionParams& p, Var query,
                             const std::vector<Var>& items) {
  if (items.empty()) throw ShapeError("attention_weights: empty item list");
  Var q_proj = matmul(tape.param(*p.w_query), query);
  Var v_vec = tape.param(*p.v);
  Var bias = tape.param(*p.b);
  std::vector<Var> scores;
  scores.reserve(items.size());
  for (Var item : items) {
    Var pre = add(add(q_proj, matmul(tape.param(*p.w_item), item)), bias);
    scores.push_back(dot(v_vec, tanh(pre)));
  }
  return softmax(concat(scores));
}

// Two-layer top-down decoder: attention LSTM builds the query state, dual
// soft attention picks from the consensus vectors and the augmented regions,
// the language LSTM emits vocabulary logits.
struct DecoderParams {
  Parameter* word_emb = nullptr;  // [vocab, word_dim]
  LstmParams attn_cell;
  LstmParams lang_cell;
  AttentionParams consensus_att;
  AttentionParams region_att;
  Parameter *w_out = nullptr, *b_out = nullptr;
  int hidden = 0;
  int word_dim = 0;
  int vocab = 0;
  int consensus_dim = 0;
};

inline DecoderParams make_decoder(ParamStore& store, const std::string& prefix, int vocab,
                                  int word_dim, int m, int global_dim, int consensus_dim,
                                  int region_dim, int attn_dim, Rng& rng) {
  DecoderParams p;
  p.hidden = m;
  p.word_dim = word_dim;
  p.vocab = vocab;
  p.consensus_dim = consensus_dim;
  p.word_emb = &store.add(prefix + "/word_emb",
                          random_matrix(static_cast<std::size_t>(vocab),
                                        static_cast<std::size_t>(word_dim), rng, 0.1));
  p.attn_cell = make_lstm(store, prefix + "/attn_cell", global_dim + word_dim + m, m, rng);
  p.lang_cell = make_lstm(store, prefix + "/lang_cell", m + consensus_dim + region_dim, m, rng);
  p.consensus_att = make_attention(store, prefix + "/consensus_att", m, consensus_dim, attn_dim, rng);
  p.region_att = make_attention(store, prefix + "/region_att", m, region_dim, attn_dim, rng);
  p.w_out = &store.add(prefix + "/out/w",
                       random_matrix(static_cast<std::size_t>(vocab),
                                     static_cast<std::size_t>(m), rng,
                                     1.0 / std::sqrt(static_cast<double>(m))));
  p.b_out = &store.add(prefix + "/out/b", Tensor::zeros({static_cast<std::size_t>(vocab)}));
  return p;
}

struct DecoderState {
  LstmState attn;
  LstmState lang;
  int t = 0;
};

inline DecoderState initial_decoder_state(Tape& tape, const DecoderParams& p) {
  return {zero_lstm_state(tape, p.hidden), zero_lstm_state(tape, p.hidden), 0};
}

// Attention LSTM input: (global feature, previous word embedding, previous
// language hidden state).
inline Var attention_step(Tape& tape, const DecoderParams& p, DecoderState& state, Var global_feat,
                          int prev_token) {
  if (prev_token < 0 || prev_token >= p.vocab) {
    throw DataError("attention_step: token id " + std::to_string(prev_token) +
                    " outside vocabulary of size " + std::to_string(p.vocab));
  }
  Var word = row(tape.param(*p.word_emb), static_cast<std::size_t>(prev_token));
  Var input = concat({global_feat, word, state.lang.h});
  state.attn = lstm_step(tape, p.attn_cell, input, state.attn);
  state.t += 1;
  return state.attn.h;
}

struct DualAttention {
  Var attended_consensus;  // zero vector when consensus is disabled
  Var attended_regions;
  Var region_weights;
  Var consensus_weights;
};

// Scores the consensus triplet and the region set against the attention
// state. Without consensus (the w/o-CR ablation) the consensus summary is a
// constant zero and its reported weights a constant uniform; region handling
// is unchanged.
inline DualAttention dual_attention(Tape& tape, const DecoderParams& p, Var h_attn,
                                    const std::optional<ConsensusVars>& consensus,
                                    const std::vector<Var>& regions) {
  if (regions.empty()) throw ShapeError("dual_attention: empty region list");
  DualAttention out;
  if (consensus) {
    std::vector<Var> items = {consensus->u_o, consensus->u_a, consensus->u_r};
    out.consensus_weights = attention_weights(tape, p.consensus_att, h_attn, items);
    out.attended_consensus = attention_weighted_sum(tape, out.consensus_weights, items);
  } else {
    out.attended_consensus =
        tape.constant(Tensor::zeros({static_cast<std::size_t>(p.consensus_dim)}));
    out.consensus_weights = tape.constant(Tensor::full({3}, 1.0 / 3.0));
  }
  out.region_weights = attention_weights(tape, p.region_att, h_attn, regions);
  out.attended_regions = attention_weighted_sum(tape, out.region_weights, regions);
  return out;
}

// Language LSTM consumes (h_attn, attended consensus, attended regions) and
// projects to the word distribution.
inline std::pair<Var, Var> language_step(Tape& tape, const DecoderParams& p, DecoderState& state,
                                         Var h_attn, Var attended_consensus,
                                         Var attended_regions) {
  Var input = concat({h_attn, attended_consensus, attended_regions});
  state.lang = lstm_step(tape, p.lang_cell, input, state.lang);
  Var logits = add(matmul(tape.param(*p.w_out), state.lang.h), tape.param(*p.b_out));
  return {state.lang.h, softmax(logits)};
}

// Teacher-forced cross-entropy: -lambda * sum_t log p(y_t). Padding ids are
// excluded from the sum.
inline Var caption_loss(Tape& tape, const std::vector<Var>& distributions,
                        const std::vector<int>& gold, double lambda_caption, int vocab) {
  if (distributions.size() != gold.size()) {
    throw ShapeError("caption_loss: got " + std::to_string(distributions.size()) +
                     " distributions for " + std::to_string(gold.size()) + " tokens");
  }
  std::optional<Var> acc;
  for (std::size_t t = 0; t < gold.size(); ++t) {
    if (gold[t] == Vocabulary::kPad) continue;
    if (gold[t] < 0 || gold[t] >= vocab) {
      throw DataError("caption_loss: gold token " + std::to_string(gold[t]) +
                      " outside vocabulary");
    }
    Var p_gold = element(distributions[t], static_cast<std::size_t>(gold[t]));
    Var term = log(clamp(p_gold, kLogClamp, 1.0));
    acc = acc ? add(*acc, term) : term;
  }
  if (!acc) return tape.constant(Tensor::scalar(0.0));
  return scale(*acc, -lambda_caption);
}

struct DecodeResult {
  std::vector<int> tokens;                   // emitted ids, end token excluded
  std::vector<Tensor> region_attention;      // one row per emitted token
  std::vector<Tensor> consensus_attention;   // idem
};

inline int argmax_index(const Tensor& t) {
  int best = 0;
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t.data[i] > t.data[best]) best = static_cast<int>(i);
  }
  return best;
}

// Greedy decoding, hard-capped at max_len steps.
inline DecodeResult decode(Tape& tape, const DecoderParams& p, Var global_feat,
                           const std::optional<ConsensusVars>& consensus,
                           const std::vector<Var>& regions, int max_len = 20) {
  DecodeResult out;
  DecoderState state = initial_decoder_state(tape, p);
  int prev = Vocabulary::kBos;
  for (int t = 0; t < max_len; ++t) {
    Var h_attn = attention_step(tape, p, state, global_feat, prev);
    DualAttention att = dual_attention(tape, p, h_attn, consensus, regions);
    auto [h_lang, dist] = language_step(tape, p, state, h_attn, att.attended_consensus,
                                        att.attended_regions);
    (void)h_lang;
    const int next = argmax_index(tape.val(dist));
    if (next == Vocabulary::kEos) break;
    out.tokens.push_back(next);
    out.region_attention.push_back(tape.val(att.region_weights));
    out.consensus_attention.push_back(tape.val(att.consensus_weights));
    prev = next;
  }
  return out;
}

}  // namespace cgrl
