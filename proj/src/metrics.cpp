#include "hsr/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace hsr {

namespace {

void check_aligned(std::span<const std::vector<int>> ranked, std::span<const int> targets,
                   int k) {
  if (k < 1) throw ContractError("ranking metric: k must be positive");
  if (ranked.empty()) throw ContractError("ranking metric: empty test set");
  if (ranked.size() != targets.size())
    throw DimensionError("ranking metric: lists and targets are not aligned");
}

// 1-based rank of target within the first k entries, 0 when absent
int rank_within_k(const std::vector<int>& list, int target, int k) {
  const int limit = std::min<int>(k, static_cast<int>(list.size()));
  for (int i = 0; i < limit; ++i)
    if (list[static_cast<std::size_t>(i)] == target) return i + 1;
  return 0;
}

}  // namespace

double hit_rate_at_k(std::span<const std::vector<int>> ranked, std::span<const int> targets,
                     int k) {
  check_aligned(ranked, targets, k);
  long hits = 0;
  for (std::size_t u = 0; u < ranked.size(); ++u)
    if (rank_within_k(ranked[u], targets[u], k) > 0) ++hits;
  return static_cast<double>(hits) / static_cast<double>(ranked.size());
}

double ndcg_at_k(std::span<const std::vector<int>> ranked, std::span<const int> targets, int k) {
  check_aligned(ranked, targets, k);
  double sum = 0.0;
  for (std::size_t u = 0; u < ranked.size(); ++u) {
    const int rank = rank_within_k(ranked[u], targets[u], k);
    if (rank > 0) sum += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
  }
  return sum / static_cast<double>(ranked.size());
}

ConfusionTable::ConfusionTable(std::vector<std::string> event_classes)
    : classes(std::move(event_classes)) {
  if (classes.empty()) throw ContractError("confusion table: no classes");
  counts.assign(classes.size(), std::vector<long>(classes.size() + 1, 0));
}

void ConfusionTable::add(const std::string& true_event, const std::string& predicted) {
  const auto row = std::find(classes.begin(), classes.end(), true_event);
  if (row == classes.end())
    throw ContractError("confusion table: unknown true class '" + true_event + "'");
  std::size_t col = classes.size();  // the OTHER column
  if (const auto it = std::find(classes.begin(), classes.end(), predicted); it != classes.end())
    col = static_cast<std::size_t>(it - classes.begin());
  else if (predicted != kOtherLabel)
    throw ContractError("confusion table: unknown predicted class '" + predicted + "'");
  counts[static_cast<std::size_t>(row - classes.begin())][col] += 1;
}

long ConfusionTable::total() const {
  long t = 0;
  for (const auto& row : counts)
    for (long c : row) t += c;
  return t;
}

ClassificationReport classification_metrics(const ConfusionTable& table) {
  if (table.total() == 0) throw ContractError("classification_metrics: empty table");
  const std::size_t n = table.classes.size();
  ClassificationReport report;
  report.classes = table.classes;
  report.confusion = table.counts;
  report.per_class.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    long tp = table.counts[c][c];
    long fn = -tp, fp = -tp;
    for (std::size_t j = 0; j <= n; ++j) fn += table.counts[c][j];
    for (std::size_t r = 0; r < n; ++r) fp += table.counts[r][c];
    ClassMetrics& m = report.per_class[c];
    m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    report.macro.precision += m.precision / static_cast<double>(n);
    report.macro.recall += m.recall / static_cast<double>(n);
    report.macro.f1 += m.f1 / static_cast<double>(n);
  }
  return report;
}

std::vector<int> pop_baseline(std::span<const UserSequence> train, const Vocabulary& vocab) {
  if (train.empty()) throw ContractError("pop_baseline: empty training set");
  std::vector<long> count(static_cast<std::size_t>(vocab.size()), 0);
  for (const auto& seq : train)
    for (std::size_t i = 1; i < seq.tokens.size(); i += 2)
      count[static_cast<std::size_t>(seq.tokens[i])] += 1;
  std::vector<int> ids(static_cast<std::size_t>(vocab.n_items()));
  std::iota(ids.begin(), ids.end(), vocab.first_item_id());
  std::sort(ids.begin(), ids.end(), [&count](int a, int b) {
    const long ca = count[static_cast<std::size_t>(a)];
    const long cb = count[static_cast<std::size_t>(b)];
    return ca != cb ? ca > cb : a < b;
  });
  return ids;
}

PopRanker::PopRanker(std::span<const UserSequence> train, const Vocabulary& vocab)
    : ranking_(pop_baseline(train, vocab)) {
  std::vector<long> count(static_cast<std::size_t>(vocab.size()), 0);
  for (const auto& seq : train)
    for (std::size_t i = 0; i < seq.tokens.size(); i += 2)
      count[static_cast<std::size_t>(seq.tokens[i])] += 1;
  int best = 2;  // the first event token id
  for (int id = 2; id < vocab.first_item_id(); ++id)
    if (count[static_cast<std::size_t>(id)] > count[static_cast<std::size_t>(best)]) best = id;
  majority_event_ = vocab.decode(best);
}

std::vector<int> PopRanker::rank_items(std::span<const int>, const std::string&, int k) const {
  if (k < 1) throw ContractError("pop ranker: k must be positive");
  std::vector<int> out = ranking_;
  out.resize(std::min<std::size_t>(out.size(), static_cast<std::size_t>(k)));
  return out;
}

std::string PopRanker::classify_event(std::span<const int>, const std::string&) const {
  return majority_event_;
}

MetricsReport evaluate(const ItemRanker& ranker, std::span<const TestCase> test,
                       const EventConfig& events, const Vocabulary& vocab,
                       std::span<const int> ks) {
  if (test.empty()) throw ContractError("evaluate: empty test set");
  static const std::vector<int> kDefaultKs{1, 5, 10};
  std::vector<int> kset(ks.begin(), ks.end());
  if (kset.empty()) kset = kDefaultKs;
  const int k_max = *std::max_element(kset.begin(), kset.end());

  for (const auto& tc : test) {
    if (!vocab.is_event(tc.target_event) || !vocab.is_item(tc.target_item))
      throw ContractError("evaluate: vocabulary mismatch for user " + tc.user_id);
    for (int id : tc.history)
      if (id < 0 || id >= vocab.size())
        throw ContractError("evaluate: vocabulary mismatch for user " + tc.user_id);
  }

  std::vector<std::vector<int>> ranked;
  std::vector<int> targets;
  ranked.reserve(test.size());
  targets.reserve(test.size());
  ConfusionTable table(events.events);
  for (const auto& tc : test) {
    ranked.push_back(ranker.rank_items(tc.history, vocab.decode(tc.target_event), k_max));
    targets.push_back(tc.target_item);
    table.add(vocab.decode(tc.target_event),
              ranker.classify_event(tc.history, vocab.item_name(tc.target_item)));
  }

  MetricsReport report;
  report.ks = kset;
  for (int k : kset) {
    report.ranking["hr@" + std::to_string(k)] = hit_rate_at_k(ranked, targets, k);
    report.ranking["ndcg@" + std::to_string(k)] = ndcg_at_k(ranked, targets, k);
  }
  report.classification = classification_metrics(table);
  report.n_users = static_cast<int>(test.size());
  return report;
}

std::string report_to_json(const MetricsReport& report,
                           const std::map<std::string, double>& config_echo,
                           std::uint64_t seed) {
  nlohmann::json j;
  j["ranking"] = report.ranking;
  nlohmann::json cls;
  cls["classes"] = report.classification.classes;
  std::vector<std::string> columns = report.classification.classes;
  columns.emplace_back(kOtherLabel);
  cls["columns"] = columns;
  cls["confusion"] = report.classification.confusion;
  nlohmann::json per;
  for (std::size_t c = 0; c < report.classification.classes.size(); ++c) {
    const ClassMetrics& m = report.classification.per_class[c];
    per[report.classification.classes[c]] = {
        {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
  }
  cls["per_class"] = per;
  cls["macro"] = {{"precision", report.classification.macro.precision},
                  {"recall", report.classification.macro.recall},
                  {"f1", report.classification.macro.f1}};
  j["classification"] = cls;
  j["n_users"] = report.n_users;
  j["config"] = config_echo;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

std::vector<AblationRun> ablation_compare(std::span<const UserSequence> train_set,
                                          std::span<const TestCase> test, const ModelConfig& base,
                                          const TrainConfig& tcfg, const EventConfig& events,
                                          const Vocabulary& vocab,
                                          std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ContractError("ablation_compare: at least one seed required");
  std::vector<AblationRun> runs;
  runs.reserve(seeds.size());
  for (std::uint64_t seed : seeds) {
    AblationRun run;
    run.seed = seed;
    for (const bool fixed : {true, false}) {
      ModelConfig cfg = base;
      cfg.fixed_positional = fixed;
      ModelParams<float> params(cfg);
      RngStream init_rng(derive_seed(seed, kSeedInit));
      params.init(init_rng);
      TrainConfig tc = tcfg;
      tc.seed = seed;
      train(params, train_set, tc);
      ModelRanker ranker(params, events, vocab);
      MetricsReport report = evaluate(ranker, test, events, vocab);
      (fixed ? run.fixed : run.tunable) = report;
    }
    run.f1_delta = run.fixed.classification.macro.f1 - run.tunable.classification.macro.f1;
    runs.push_back(std::move(run));
  }
  return runs;
}

}  // namespace hsr
