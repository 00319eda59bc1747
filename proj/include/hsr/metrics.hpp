#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hsr/corpus.hpp"
#include "hsr/model.hpp"
#include "hsr/training.hpp"
#include "hsr/vocab.hpp"

namespace hsr {

// Fraction of users whose target appears in their top-k list.
double hit_rate_at_k(std::span<const std::vector<int>> ranked, std::span<const int> targets,
                     int k);

// Mean of 1/log2(rank+1) over users, 0 when the target misses the top-k; with
// one relevant item per user the ideal DCG is 1, so this is already
// normalized. NDCG@1 coincides with HR@1 by construction.
double ndcg_at_k(std::span<const std::vector<int>> ranked, std::span<const int> targets, int k);

// Counts indexed by (true event class, predicted class). Predictions may land
// in any true class column or the trailing OTHER column; OTHER never appears
// as a true class.
struct ConfusionTable {
  std::vector<std::string> classes;       // the event names, configuration order
  std::vector<std::vector<long>> counts;  // classes.size() rows, classes.size()+1 columns

  explicit ConfusionTable(std::vector<std::string> event_classes);
  void add(const std::string& true_event, const std::string& predicted);
  long total() const;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct ClassificationReport {
  std::vector<std::string> classes;
  std::vector<std::vector<long>> confusion;
  std::vector<ClassMetrics> per_class;
  ClassMetrics macro;  // unweighted mean over the event classes
};

// Per-class precision/recall/F1 with the 0-convention on empty denominators;
// the macro row averages the event classes only (OTHER can contribute only
// missed recall, never scored predictions).
ClassificationReport classification_metrics(const ConfusionTable& table);

// Every catalog item ordered by training interaction count descending, ties
// by ascending token id; the same list serves every user.
std::vector<int> pop_baseline(std::span<const UserSequence> train, const Vocabulary& vocab);

// Anything that can answer the two next-interaction queries; lets the
// evaluation loop run identically over the model and the POP baseline.
class ItemRanker {
 public:
  virtual ~ItemRanker() = default;
  virtual std::vector<int> rank_items(std::span<const int> history, const std::string& next_event,
                                      int k) const = 0;
  virtual std::string classify_event(std::span<const int> history,
                                     const std::string& next_item) const = 0;
};

class ModelRanker final : public ItemRanker {
 public:
  ModelRanker(const ModelParams<float>& params, const EventConfig& events,
              const Vocabulary& vocab, bool use_boost = true)
      : params_(&params), events_(&events), vocab_(&vocab), use_boost_(use_boost) {}

  std::vector<int> rank_items(std::span<const int> history, const std::string& next_event,
                              int k) const override {
    return predict_item(*params_, history, next_event, *events_, *vocab_, k, use_boost_);
  }

  std::string classify_event(std::span<const int> history,
                             const std::string& next_item) const override {
    return predict_event_type(*params_, history, next_item, *vocab_);
  }

 private:
  const ModelParams<float>* params_;
  const EventConfig* events_;
  const Vocabulary* vocab_;
  bool use_boost_;
};

// Popularity baseline: one global ranking for everyone; event queries get the
// most frequent training event type.
class PopRanker final : public ItemRanker {
 public:
  PopRanker(std::span<const UserSequence> train, const Vocabulary& vocab);

  std::vector<int> rank_items(std::span<const int> history, const std::string& next_event,
                              int k) const override;
  std::string classify_event(std::span<const int> history,
                             const std::string& next_item) const override;

 private:
  std::vector<int> ranking_;
  std::string majority_event_;
};

struct MetricsReport {
  std::vector<int> ks;
  std::map<std::string, double> ranking;  // "hr@k" / "ndcg@k" per requested k
  ClassificationReport classification;
  int n_users = 0;
};

// Runs both test modes over every held-out interaction: item ranking against
// the true next event type, and event classification against the true next
// item. Deterministic given the ranker and the test set.
MetricsReport evaluate(const ItemRanker& ranker, std::span<const TestCase> test,
                       const EventConfig& events, const Vocabulary& vocab,
                       std::span<const int> ks = {});

// Key-sorted JSON for byte-level reproducibility; config_echo and seed are
// recorded verbatim.
std::string report_to_json(const MetricsReport& report,
                           const std::map<std::string, double>& config_echo, std::uint64_t seed);

struct AblationRun {
  std::uint64_t seed = 0;
  MetricsReport fixed;
  MetricsReport tunable;
  double f1_delta = 0.0;  // fixed-variant macro F1 minus tunable-variant macro F1
};

// Trains twin models per seed — identical except whether positional elements
// 0 and 1 are pinned — and evaluates both.
std::vector<AblationRun> ablation_compare(std::span<const UserSequence> train_set,
                                          std::span<const TestCase> test, const ModelConfig& base,
                                          const TrainConfig& tcfg, const EventConfig& events,
                                          const Vocabulary& vocab,
                                          std::span<const std::uint64_t> seeds);

}  // namespace hsr
