#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hsr/adam.hpp"
#include "hsr/corpus.hpp"
#include "hsr/graph.hpp"
#include "hsr/rng.hpp"
#include "hsr/tensor.hpp"
#include "hsr/vocab.hpp"

namespace hsr {

// Classification label for predictions that land outside the event set.
inline constexpr const char* kOtherLabel = "OTHER";

struct ModelConfig {
  int d_model = 96;
  int n_heads = 8;
  int n_layers = 2;
  int head_hidden = 128;
  double dropout = 0.1;
  int l_max = 200;
  int vocab_size = 0;
  // When set, elements 0 and 1 of every positional row hold the token-type
  // bit and the pair-shared relevance value and are frozen during training;
  // when clear the whole table is tunable (the ablation's second arm).
  bool fixed_positional = true;

  int d_ff() const { return 4 * d_model; }
  int d_head() const { return d_model / n_heads; }

  void validate() const {
    if (d_model < 2) throw ContractError("model config: d_model must be at least 2");
    if (n_heads < 1 || n_layers < 1 || head_hidden < 1)
      throw ContractError("model config: extents must be positive");
    if (d_model % n_heads != 0)
      throw ContractError("model config: d_model must be divisible by n_heads");
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw ContractError("model config: dropout must lie in [0, 1)");
    if (l_max < 2) throw ContractError("model config: l_max must be at least 2");
    if (vocab_size < 3) throw ContractError("model config: vocabulary too small");
  }
};

// The two reserved positional elements for position i: the token-type bit
// (0 at event positions, 1 at item positions) and a slowly varying relevance
// value shared by both members of interaction pair j = i/2 — sin(w*j) for
// even j, cos(w*j) for odd j, w = 0.1 rad.
inline std::pair<double, double> fixed_positional_elements(int i, int l_max) {
  if (i < 0 || i >= l_max) throw ContractError("fixed_positional_elements: position out of range");
  const double type_bit = (i % 2 == 0) ? 0.0 : 1.0;
  const int j = i / 2;
  const double w = 0.1;
  const double relevance = (j % 2 == 0) ? std::sin(w * j) : std::cos(w * j);
  return {type_bit, relevance};
}

template <class S>
struct LayerParams {
  Tensor<S> wq, wk, wv, wmh;    // attention projections, all d_model x d_model
  Tensor<S> ln1_g, ln1_b;       // post-attention layer norm
  Tensor<S> w1, b1, w2, b2;     // position-wise feed-forward
  Tensor<S> ln2_g, ln2_b;       // post-feed-forward layer norm
};

template <class S>
struct ModelParams {
  ModelConfig config;
  Tensor<S> tok;  // vocab_size x d_model token embeddings
  Tensor<S> pos;  // l_max x d_model positional embeddings
  std::vector<LayerParams<S>> layers;
  Tensor<S> head_w1, head_b1, head_w2, head_b2;  // output head, d -> hidden -> vocab

  explicit ModelParams(const ModelConfig& cfg) : config(cfg) {
    config.validate();
    const Index d = config.d_model;
    const Index ff = config.d_ff();
    tok = Tensor<S>::zeros({config.vocab_size, d});
    pos = Tensor<S>::zeros({config.l_max, d});
    layers.reserve(static_cast<std::size_t>(config.n_layers));
    for (int l = 0; l < config.n_layers; ++l) {
      LayerParams<S> lp;
      lp.wq = Tensor<S>::zeros({d, d});
      lp.wk = Tensor<S>::zeros({d, d});
      lp.wv = Tensor<S>::zeros({d, d});
      lp.wmh = Tensor<S>::zeros({d, d});
      lp.ln1_g = Tensor<S>::zeros({1, d});
      lp.ln1_b = Tensor<S>::zeros({1, d});
      lp.w1 = Tensor<S>::zeros({d, ff});
      lp.b1 = Tensor<S>::zeros({1, ff});
      lp.w2 = Tensor<S>::zeros({ff, d});
      lp.b2 = Tensor<S>::zeros({1, d});
      lp.ln2_g = Tensor<S>::zeros({1, d});
      lp.ln2_b = Tensor<S>::zeros({1, d});
      layers.push_back(std::move(lp));
    }
    head_w1 = Tensor<S>::zeros({d, config.head_hidden});
    head_b1 = Tensor<S>::zeros({1, config.head_hidden});
    head_w2 = Tensor<S>::zeros({config.head_hidden, config.vocab_size});
    head_b2 = Tensor<S>::zeros({1, config.vocab_size});
  }

  std::size_t n_tensors() const { return 2 + 12 * layers.size() + 4; }

  // Weights from N(0, 0.02^2); biases zero; layer-norm gains one. With
  // fixed_positional the two reserved elements of every positional row are
  // then written in place of their random draws.
  void init(RngStream& rng) {
    auto draw = [&rng](Tensor<S>& t) {
      for (Index i = 0; i < t.rows(); ++i)
        for (Index j = 0; j < t.cols(); ++j) t(i, j) = static_cast<S>(rng.normal(0.0, 0.02));
    };
    draw(tok);
    draw(pos);
    for (auto& lp : layers) {
      draw(lp.wq);
      draw(lp.wk);
      draw(lp.wv);
      draw(lp.wmh);
      lp.ln1_g.mat().setOnes();
      lp.ln1_b.mat().setZero();
      draw(lp.w1);
      lp.b1.mat().setZero();
      draw(lp.w2);
      lp.b2.mat().setZero();
      lp.ln2_g.mat().setOnes();
      lp.ln2_b.mat().setZero();
    }
    draw(head_w1);
    head_b1.mat().setZero();
    draw(head_w2);
    head_b2.mat().setZero();
    if (config.fixed_positional) write_fixed_positional();
  }

  void write_fixed_positional() {
    for (int i = 0; i < config.l_max; ++i) {
      auto [bit, rel] = fixed_positional_elements(i, config.l_max);
      pos(i, 0) = static_cast<S>(bit);
      pos(i, 1) = static_cast<S>(rel);
    }
  }

  template <class T>
  ModelParams<T> cast() const {
    ModelParams<T> out(config);
    out.tok = tok.template cast<T>();
    out.pos = pos.template cast<T>();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      out.layers[l].wq = layers[l].wq.template cast<T>();
      out.layers[l].wk = layers[l].wk.template cast<T>();
      out.layers[l].wv = layers[l].wv.template cast<T>();
      out.layers[l].wmh = layers[l].wmh.template cast<T>();
      out.layers[l].ln1_g = layers[l].ln1_g.template cast<T>();
      out.layers[l].ln1_b = layers[l].ln1_b.template cast<T>();
      out.layers[l].w1 = layers[l].w1.template cast<T>();
      out.layers[l].b1 = layers[l].b1.template cast<T>();
      out.layers[l].w2 = layers[l].w2.template cast<T>();
      out.layers[l].b2 = layers[l].b2.template cast<T>();
      out.layers[l].ln2_g = layers[l].ln2_g.template cast<T>();
      out.layers[l].ln2_b = layers[l].ln2_b.template cast<T>();
    }
    out.head_w1 = head_w1.template cast<T>();
    out.head_b1 = head_b1.template cast<T>();
    out.head_w2 = head_w2.template cast<T>();
    out.head_b2 = head_b2.template cast<T>();
    return out;
  }
};

// Enumerates parameters in the fixed serialization/optimization order; P is
// ModelParams<S> or const ModelParams<S>.
template <class P, class F>
void for_each_param(P& p, F&& f) {
  f("tok", p.tok);
  f("pos", p.pos);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& lp = p.layers[l];
    const std::string pre = "enc" + std::to_string(l) + ".";
    f(pre + "wq", lp.wq);
    f(pre + "wk", lp.wk);
    f(pre + "wv", lp.wv);
    f(pre + "wmh", lp.wmh);
    f(pre + "ln1.gain", lp.ln1_g);
    f(pre + "ln1.bias", lp.ln1_b);
    f(pre + "ff.w1", lp.w1);
    f(pre + "ff.b1", lp.b1);
    f(pre + "ff.w2", lp.w2);
    f(pre + "ff.b2", lp.b2);
    f(pre + "ln2.gain", lp.ln2_g);
    f(pre + "ln2.bias", lp.ln2_b);
  }
  f("head.w1", p.head_w1);
  f("head.b1", p.head_b1);
  f("head.w2", p.head_w2);
  f("head.b2", p.head_b2);
}

template <class S>
std::vector<NamedTensor<S>> named_tensors(ModelParams<S>& p) {
  std::vector<NamedTensor<S>> out;
  out.reserve(p.n_tensors());
  for_each_param(p, [&out](const std::string& name, Tensor<S>& t) { out.push_back({name, &t}); });
  return out;
}

// Builds the network as tape nodes over borrowed parameters. One instance per
// Graph. When `grad_sinks` is given (aligned with the for_each_param order),
// parameter gradients accumulate there across backward() calls from any
// number of graphs.
template <class S>
class ModelGraph {
 public:
  ModelGraph(Graph<S>& g, const ModelParams<S>& params, std::span<Tensor<S>> grad_sinks = {})
      : g_(&g), p_(&params) {
    if (!grad_sinks.empty() && grad_sinks.size() != params.n_tensors())
      throw ContractError("model graph: grad sink count mismatch");
    std::size_t i = 0;
    for_each_param(params, [&](const std::string&, const Tensor<S>& t) {
      Tensor<S>* sink = grad_sinks.empty() ? nullptr : &grad_sinks[i];
      leaves_.push_back(g_->leaf(&t, sink));
      ++i;
    });
  }

  NodeId leaf_id(std::size_t i) const { return leaves_.at(i); }

  // token embedding + positional rows
  NodeId embed(std::span<const int> ids) {
    if (ids.empty()) throw ContractError("embed: empty sequence");
    if (static_cast<int>(ids.size()) > p_->config.l_max)
      throw ContractError("embed: sequence longer than l_max");
    NodeId tok_rows = g_->gather_rows(tok_id(), {ids.begin(), ids.end()});
    NodeId pos_rows = g_->slice_rows(pos_id(), 0, static_cast<Index>(ids.size()));
    return g_->add(tok_rows, pos_rows);
  }

  // Additive attention bias from a padding indicator: -1e9 down every padded
  // column. Empty optional when nothing is padded.
  static std::optional<Tensor<S>> make_pad_bias(std::span<const std::uint8_t> pad) {
    if (pad.empty() || std::find(pad.begin(), pad.end(), std::uint8_t(1)) == pad.end())
      return std::nullopt;
    const Index L = static_cast<Index>(pad.size());
    Tensor<S> bias = Tensor<S>::zeros({L, L});
    for (Index c = 0; c < L; ++c)
      if (pad[static_cast<std::size_t>(c)]) bias.mat().col(c).setConstant(S(-1e9));
    return bias;
  }

  // Multi-headed self-attention with per-head 1/sqrt(d_head) scaling,
  // optional pad bias before the softmax, and the final W^MH projection.
  NodeId attention(NodeId x, int layer, const Tensor<S>* pad_bias) {
    const auto& L = layer_ids(layer);
    NodeId q = g_->matmul(x, L.wq);
    NodeId k = g_->matmul(x, L.wk);
    NodeId v = g_->matmul(x, L.wv);
    const int dh = p_->config.d_head();
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    std::vector<NodeId> heads;
    heads.reserve(static_cast<std::size_t>(p_->config.n_heads));
    for (int h = 0; h < p_->config.n_heads; ++h) {
      NodeId qh = g_->slice_cols(q, h * dh, dh);
      NodeId kh = g_->slice_cols(k, h * dh, dh);
      NodeId vh = g_->slice_cols(v, h * dh, dh);
      NodeId scores = g_->scale(g_->matmul_nt(qh, kh), scale);
      if (pad_bias != nullptr) scores = g_->add_const(scores, *pad_bias);
      heads.push_back(g_->matmul(g_->softmax_rows(scores), vh));
    }
    return g_->matmul(g_->concat_cols(heads), L.wmh);
  }

  // position-wise feed-forward: GeLU(x w1 + b1) w2 + b2
  NodeId feed_forward(NodeId x, int layer) {
    const auto& L = layer_ids(layer);
    NodeId h = g_->gelu(g_->add_rowvec(g_->matmul(x, L.w1), L.b1));
    return g_->add_rowvec(g_->matmul(h, L.w2), L.b2);
  }

  // One post-norm encoder layer:
  //   x <- LayerNorm(x + Dropout(Attention(x)));  x <- LayerNorm(x + Dropout(FF(x)))
  NodeId encoder_layer(NodeId x, int layer, const Tensor<S>* pad_bias, bool train,
                       RngStream* rng) {
    const auto& L = layer_ids(layer);
    const S rate = static_cast<S>(p_->config.dropout);
    NodeId a = attention(x, layer, pad_bias);
    x = g_->layer_norm(g_->add(x, drop(a, rate, train, rng)), L.ln1_g, L.ln1_b);
    NodeId f = feed_forward(x, layer);
    return g_->layer_norm(g_->add(x, drop(f, rate, train, rng)), L.ln2_g, L.ln2_b);
  }

  NodeId encode(NodeId h0, std::span<const std::uint8_t> pad, bool train, RngStream* rng) {
    const Index rows = g_->value(h0).rows();
    if (!pad.empty() && static_cast<Index>(pad.size()) != rows)
      throw DimensionError("encode: pad mask length mismatch");
    std::optional<Tensor<S>> bias = make_pad_bias(pad);
    NodeId x = h0;
    for (int l = 0; l < p_->config.n_layers; ++l)
      x = encoder_layer(x, l, bias ? &*bias : nullptr, train, rng);
    return x;
  }

  // vocabulary logits at the listed row positions of the encoder output
  NodeId scores_at(NodeId hn, std::vector<int> positions) {
    NodeId rows = g_->gather_rows(hn, std::move(positions));
    NodeId h = g_->gelu(g_->add_rowvec(g_->matmul(rows, head_w1_id()), head_b1_id()));
    return g_->add_rowvec(g_->matmul(h, head_w2_id()), head_b2_id());
  }

 private:
  static constexpr std::size_t kPerLayer = 12;

  struct LayerIds {
    NodeId wq, wk, wv, wmh, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;
  };

  NodeId tok_id() const { return leaves_[0]; }
  NodeId pos_id() const { return leaves_[1]; }
  LayerIds layer_ids(int layer) const {
    if (layer < 0 || layer >= p_->config.n_layers)
      throw ContractError("model graph: layer index out of range");
    const std::size_t b = 2 + kPerLayer * static_cast<std::size_t>(layer);
    return {leaves_[b],     leaves_[b + 1], leaves_[b + 2], leaves_[b + 3],
            leaves_[b + 4], leaves_[b + 5], leaves_[b + 6], leaves_[b + 7],
            leaves_[b + 8], leaves_[b + 9], leaves_[b + 10], leaves_[b + 11]};
  }
  NodeId head_w1_id() const { return leaves_[leaves_.size() - 4]; }
  NodeId head_b1_id() const { return leaves_[leaves_.size() - 3]; }
  NodeId head_w2_id() const { return leaves_[leaves_.size() - 2]; }
  NodeId head_b2_id() const { return leaves_[leaves_.size() - 1]; }

  NodeId drop(NodeId x, S rate, bool train, RngStream* rng) {
    if (!train || rate == S(0)) return x;
    if (rng == nullptr) throw ContractError("encode: training dropout needs an rng stream");
    return g_->dropout(x, rate, *rng, true);
  }

  Graph<S>* g_;
  const ModelParams<S>* p_;
  std::vector<NodeId> leaves_;
};

// Evaluation-mode encoder pass over one sequence; returns the final hidden
// states (L x d_model).
template <class S>
Tensor<S> encoder_states(const ModelParams<S>& params, std::span<const int> ids,
                         std::span<const std::uint8_t> pad = {}) {
  Graph<S> g;
  ModelGraph<S> m(g, params);
  NodeId hn = m.encode(m.embed(ids), pad, false, nullptr);
  return g.value(hn);
}

// For the current query: which item tokens already saw their prerequisite
// event earlier in this user's (model-visible) sequence.
struct DependencyBoostContext {
  int event_id = -1;                // the governing event token
  std::vector<int> eligible_items;  // item token ids, ascending, unique
};

// Builds the context for predicting the item of `next_event`. Returns empty
// when the event has no prerequisite (no boost applies). Unknown event names
// throw ContractError.
inline std::optional<DependencyBoostContext> make_boost_context(std::span<const int> history,
                                                                const std::string& next_event,
                                                                const EventConfig& config,
                                                                const Vocabulary& vocab) {
  const int event_id = vocab.event_id(next_event);
  const auto prereq = config.prerequisite(next_event);
  if (!prereq) return std::nullopt;
  const int prereq_id = vocab.event_id(*prereq);
  DependencyBoostContext ctx;
  ctx.event_id = event_id;
  for (std::size_t i = 0; i + 1 < history.size(); i += 2)
    if (history[i] == prereq_id && vocab.is_item(history[i + 1]))
      ctx.eligible_items.push_back(history[i + 1]);
  std::sort(ctx.eligible_items.begin(), ctx.eligible_items.end());
  ctx.eligible_items.erase(std::unique(ctx.eligible_items.begin(), ctx.eligible_items.end()),
                           ctx.eligible_items.end());
  return ctx;
}

// Adds exactly +1 to the pre-softmax score of every eligible item id.
template <class S>
void apply_boost(std::span<S> scores, const DependencyBoostContext& ctx) {
  for (int id : ctx.eligible_items) {
    if (id < 0 || id >= static_cast<int>(scores.size()))
      throw ContractError("apply_boost: eligible id outside the vocabulary");
    scores[static_cast<std::size_t>(id)] += S(1);
  }
}

template <class S>
struct ScoredPosition {
  std::vector<S> scores;  // pre-softmax, boost already applied
  std::vector<S> probs;   // softmax of scores
};

// Full evaluation-mode scoring of one masked position: embed, encode, head,
// optional dependency boost, softmax. The boost is only legal at item
// positions (odd indices).
template <class S>
ScoredPosition<S> output_scores(const ModelParams<S>& params, std::span<const int> ids,
                                int masked_pos, const DependencyBoostContext* boost = nullptr) {
  if (masked_pos < 0 || masked_pos >= static_cast<int>(ids.size()))
    throw ContractError("output_scores: masked position out of range");
  if (boost != nullptr && masked_pos % 2 == 0)
    throw ContractError("output_scores: dependency boost at an event position");
  Graph<S> g;
  ModelGraph<S> m(g, params);
  NodeId hn = m.encode(m.embed(ids), {}, false, nullptr);
  NodeId logits = m.scores_at(hn, {masked_pos});
  const auto& row = g.value(logits);

  ScoredPosition<S> out;
  out.scores.assign(row.data(), row.data() + row.cols());
  if (boost != nullptr) apply_boost<S>(out.scores, *boost);
  Tensor<S> t(MatrixX<S>(Eigen::Map<const MatrixX<S>>(out.scores.data(), 1,
                                                      static_cast<Index>(out.scores.size()))));
  Tensor<S> p = softmax(t, -1);
  out.probs.assign(p.data(), p.data() + p.size());
  return out;
}

// Item tokens ordered by score descending, ties by ascending token id;
// returns the top min(k, #items).
template <class S>
std::vector<int> rank_item_tokens(std::span<const S> scores, const Vocabulary& vocab, int k) {
  if (k < 1) throw ContractError("rank_item_tokens: k must be positive");
  if (static_cast<int>(scores.size()) != vocab.size())
    throw DimensionError("rank_item_tokens: score vector size differs from vocabulary");
  std::vector<int> ids(static_cast<std::size_t>(vocab.n_items()));
  std::iota(ids.begin(), ids.end(), vocab.first_item_id());
  std::sort(ids.begin(), ids.end(), [&scores](int a, int b) {
    const S sa = scores[static_cast<std::size_t>(a)];
    const S sb = scores[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  });
  ids.resize(std::min<std::size_t>(ids.size(), static_cast<std::size_t>(k)));
  return ids;
}

// Ranks candidate items for the next event of the given type. The dependency
// boost is derived from the model-visible history; events without a
// prerequisite rank unboosted, and use_boost=false disables boosting outright.
template <class S>
std::vector<int> predict_item(const ModelParams<S>& params, std::span<const int> history,
                              const std::string& next_event, const EventConfig& config,
                              const Vocabulary& vocab, int k, bool use_boost = true) {
  if (k < 1) throw ContractError("predict_item: k must be positive");
  const int event_id = vocab.event_id(next_event);
  EvalInput ev = make_eval_input(history, event_id, Vocabulary::kPadId, PredictMode::Item,
                                 params.config.l_max);
  const std::span<const int> visible(ev.ids.data(), ev.ids.size() - 2);
  const auto ctx =
      use_boost ? make_boost_context(visible, next_event, config, vocab) : std::nullopt;
  ScoredPosition<S> sp = output_scores(params, ev.ids, ev.masked_pos, ctx ? &*ctx : nullptr);
  return rank_item_tokens<S>(sp.scores, vocab, k);
}

// Predicts the event type for the next interaction with `next_item`: argmax
// over the full vocabulary, mapped to OTHER when it is not an event token.
template <class S>
std::string predict_event_type(const ModelParams<S>& params, std::span<const int> history,
                               const std::string& next_item, const Vocabulary& vocab) {
  const int item_tok = vocab.item_id(next_item);
  EvalInput ev = make_eval_input(history, Vocabulary::kPadId, item_tok, PredictMode::Event,
                                 params.config.l_max);
  ScoredPosition<S> sp = output_scores(params, ev.ids, ev.masked_pos);
  const auto it = std::max_element(sp.scores.begin(), sp.scores.end());
  const int arg = static_cast<int>(it - sp.scores.begin());
  return vocab.is_event(arg) ? vocab.decode(arg) : std::string(kOtherLabel);
}

}  // namespace hsr
