#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hsr/adam.hpp"
#include "hsr/corpus.hpp"
#include "hsr/graph.hpp"
#include "hsr/model.hpp"
#include "hsr/rng.hpp"

namespace hsr {

// Stream tags: every random stream in the system derives from one base seed
// and one of these, so init / shuffle / mask / dropout / synth never alias.
inline constexpr std::uint64_t kSeedInit = 1;
inline constexpr std::uint64_t kSeedShuffle = 2;
inline constexpr std::uint64_t kSeedMask = 3;
inline constexpr std::uint64_t kSeedDropout = 4;
inline constexpr std::uint64_t kSeedSynth = 5;

struct TrainConfig {
  double mask_prob = 0.4;
  int epochs = 50;
  int batch_size = 256;
  double lr = 1e-3;
  std::uint64_t seed = 42;

  void validate() const {
    if (!(mask_prob > 0.0 && mask_prob < 1.0))
      throw ContractError("train config: mask_prob must lie in (0, 1)");
    if (epochs < 0) throw ContractError("train config: epochs must be non-negative");
    if (batch_size < 1) throw ContractError("train config: batch_size must be positive");
    if (!(lr > 0.0)) throw ContractError("train config: lr must be positive");
  }
};

// Mean negative log-softmax probability of the true token over rows whose
// label is not the sentinel -1. `logits` may be batch x L x V or rows x V;
// labels follow the flattened row order.
template <class S>
S masked_ce_loss(const Tensor<S>& logits, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != logits.rows())
    throw DimensionError("masked_ce_loss: one label per logit row required");
  S loss = S(0);
  Index m = 0;
  for (Index r = 0; r < logits.rows(); ++r) {
    const int lb = labels[static_cast<std::size_t>(r)];
    if (lb < 0) continue;
    if (lb >= logits.cols()) throw ContractError("masked_ce_loss: label out of vocabulary");
    const S mx = logits.mat().row(r).maxCoeff();
    const S z = (logits.mat().row(r).array() - mx).exp().sum();
    loss += std::log(z) - (logits(r, lb) - mx);
    ++m;
  }
  if (m == 0) throw ContractError("masked_ce_loss: no labeled rows in batch");
  return loss / S(m);
}

template <class S>
struct SequencePass {
  S loss = S(0);   // mean masked NLL over this sequence's masked positions
  int masked = 0;  // number of masked positions
  int hits = 0;    // masked positions whose argmax equals the label
};

// Forward (and optionally backward) for one masked sequence. `labels` carries
// the original ids at masked positions and -1 elsewhere. With a nonzero
// backward_seed, gradients of (backward_seed * loss) accumulate into `sinks`;
// weighting each sequence by masked_i / masked_total reproduces the exact
// batch-mean masked cross-entropy gradient.
template <class S>
SequencePass<S> masked_sequence_pass(const ModelParams<S>& params, std::span<Tensor<S>> sinks,
                                     std::span<const int> input, std::span<const int> labels,
                                     S backward_seed, bool train, RngStream* dropout_rng) {
  if (input.size() != labels.size())
    throw DimensionError("masked_sequence_pass: input/label length mismatch");
  std::vector<int> positions;
  std::vector<int> mlab;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) {
      positions.push_back(static_cast<int>(i));
      mlab.push_back(labels[i]);
    }
  }
  if (positions.empty()) throw ContractError("masked_sequence_pass: nothing masked");

  Graph<S> g;
  ModelGraph<S> m(g, params, sinks);
  NodeId hn = m.encode(m.embed(input), {}, train, dropout_rng);
  NodeId logits = m.scores_at(hn, positions);
  NodeId loss = g.masked_ce(logits, mlab);

  SequencePass<S> out;
  out.loss = g.value(loss).scalar();
  out.masked = static_cast<int>(positions.size());
  const auto& lv = g.value(logits);
  for (Index r = 0; r < lv.rows(); ++r) {
    Index arg = 0;
    lv.mat().row(r).maxCoeff(&arg);
    if (static_cast<int>(arg) == mlab[static_cast<std::size_t>(r)]) ++out.hits;
  }
  if (backward_seed != S(0)) g.backward(loss, backward_seed);
  return out;
}

struct EpochStats {
  double loss = 0.0;      // mean of batch losses
  double accuracy = 0.0;  // masked-token argmax accuracy over the epoch
};

// Cloze training: per epoch, shuffle, remask with that epoch's derived
// streams, and take one Adam step per batch. The two reserved positional
// columns stay bit-identical when the config pins them. Throws NumericError
// with epoch/batch coordinates if the loss ever leaves the finite range.
template <class S>
std::vector<EpochStats> train(
    ModelParams<S>& params, std::span<const UserSequence> sequences, const TrainConfig& cfg,
    const std::function<void(int, const EpochStats&)>& on_epoch = nullptr) {
  cfg.validate();
  params.config.validate();
  if (sequences.empty()) throw ContractError("train: empty training set");

  std::vector<NamedTensor<S>> named = named_tensors(params);
  std::vector<Tensor<S>> sinks;
  sinks.reserve(named.size());
  std::size_t pos_index = 0;
  for (std::size_t i = 0; i < named.size(); ++i) {
    sinks.push_back(Tensor<S>::zeros(named[i].tensor->shape()));
    if (named[i].name == "pos") pos_index = i;
  }
  AdamConfig<S> acfg;
  acfg.lr = static_cast<S>(cfg.lr);
  AdamState<S> state(acfg, named);

  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const int n_batches =
      static_cast<int>((sequences.size() + cfg.batch_size - 1) / cfg.batch_size);

  std::vector<EpochStats> trace;
  trace.reserve(static_cast<std::size_t>(cfg.epochs));
  std::vector<int> input, labels;
  std::vector<std::vector<int>> batch_inputs, batch_labels;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::uint64_t epoch_seed = cfg.seed ^ static_cast<std::uint64_t>(epoch);
    RngStream shuffle_rng(derive_seed(epoch_seed, kSeedShuffle));
    RngStream mask_rng(derive_seed(epoch_seed, kSeedMask));
    RngStream dropout_rng(derive_seed(epoch_seed, kSeedDropout));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    long hits = 0, total = 0;
    for (int b = 0; b < n_batches; ++b) {
      const std::size_t begin = static_cast<std::size_t>(b) * cfg.batch_size;
      const std::size_t end = std::min(begin + cfg.batch_size, sequences.size());
      batch_inputs.clear();
      batch_labels.clear();
      int m_total = 0;
      for (std::size_t i = begin; i < end; ++i) {
        mask_tokens(sequences[order[i]].tokens, cfg.mask_prob, mask_rng, input, labels);
        batch_inputs.push_back(input);
        batch_labels.push_back(labels);
        for (int lb : labels) m_total += lb >= 0 ? 1 : 0;
      }

      for (auto& sink : sinks) sink.mat().setZero();
      double batch_loss = 0.0;
      try {
        for (std::size_t i = 0; i < batch_inputs.size(); ++i) {
          int m_i = 0;
          for (int lb : batch_labels[i]) m_i += lb >= 0 ? 1 : 0;
          const S w = static_cast<S>(m_i) / static_cast<S>(m_total);
          SequencePass<S> pass =
              masked_sequence_pass<S>(params, sinks, batch_inputs[i], batch_labels[i], w, true,
                                      &dropout_rng);
          batch_loss += static_cast<double>(w) * static_cast<double>(pass.loss);
          hits += pass.hits;
          total += pass.masked;
        }
        if (!std::isfinite(batch_loss))
          throw NumericError("batch loss left the finite range");
        if (params.config.fixed_positional) {
          sinks[pos_index].mat().col(0).setZero();
          sinks[pos_index].mat().col(1).setZero();
        }
        adam_step<S>(named, sinks, state);
      } catch (const NumericError& e) {
        throw NumericError("train: epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(b) + ": " + e.what());
      }
      epoch_loss += batch_loss;
    }

    EpochStats stats;
    stats.loss = epoch_loss / n_batches;
    stats.accuracy = total > 0 ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
    trace.push_back(stats);
    if (on_epoch) on_epoch(epoch, stats);
  }
  return trace;
}

}  // namespace hsr
