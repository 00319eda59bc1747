#include "hsr/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

#include "hsr/tensor.hpp"

namespace hsr {

void SynthConfig::validate() const {
  if (n_users < 1) throw ContractError("synth config: n_users must be positive");
  if (n_items < 1) throw ContractError("synth config: n_items must be positive");
  if (n_tracks < 1) throw ContractError("synth config: n_tracks must be positive");
  if (track_length < 1) throw ContractError("synth config: track_length must be positive");
  if (static_cast<long long>(n_tracks) * track_length > n_items)
    throw ContractError("synth config: tracks do not fit inside the item set");
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(p_like) || !prob(p_dislike) || !prob(p_noise))
    throw ContractError("synth config: probabilities must lie in [0, 1]");
  if (p_like + p_dislike > 1.0)
    throw ContractError("synth config: p_like + p_dislike must not exceed 1");
}

EventConfig synth_event_config() {
  EventConfig config;
  config.events = {"r", "+", "-"};
  config.dependencies = {{"+", "r"}, {"-", "r"}};
  return config;
}

namespace {

std::string padded_id(char prefix, int index, int max_index) {
  int width = 1;
  for (int v = max_index; v >= 10; v /= 10) ++width;
  std::string digits = std::to_string(index);
  std::string out(1, prefix);
  out.append(width - digits.size(), '0');
  out += digits;
  return out;
}

}  // namespace

std::vector<InteractionRecord> generate(const SynthConfig& config) {
  config.validate();
  std::vector<std::string> item_names(config.n_items);
  for (int i = 0; i < config.n_items; ++i)
    item_names[i] = padded_id('c', i, config.n_items - 1);

  std::vector<InteractionRecord> records;
  records.reserve(static_cast<std::size_t>(config.n_users) * config.track_length * 3);
  for (int u = 0; u < config.n_users; ++u) {
    RngStream rng(derive_seed(config.seed, static_cast<std::uint64_t>(u)));
    const std::string user = padded_id('u', u, config.n_users - 1);

    std::vector<int> tracks{static_cast<int>(rng.next_below(config.n_tracks))};
    if (config.n_tracks > 1 && rng.bernoulli(0.5)) {
      int second = static_cast<int>(rng.next_below(config.n_tracks - 1));
      if (second >= tracks[0]) ++second;
      tracks.push_back(second);
    }

    // Per-user affinity: a shared exponent warps both probabilities in
    // opposite directions while keeping the 0 and 1 endpoints exact.
    const double gamma = std::exp(rng.uniform01() * 2.0 * std::log(2.0) - std::log(2.0));
    double p_like_u = std::pow(config.p_like, gamma);
    double p_dislike_u = std::pow(config.p_dislike, 1.0 / gamma);
    if (const double s = p_like_u + p_dislike_u; s > 1.0) {
      p_like_u /= s;
      p_dislike_u /= s;
    }

    std::vector<int> noise_pool;
    for (int i = 0; i < config.n_items; ++i) {
      bool on_track = false;
      for (int t : tracks)
        on_track = on_track || (i >= t * config.track_length && i < (t + 1) * config.track_length);
      if (!on_track) noise_pool.push_back(i);
    }

    std::int64_t t = 0;
    auto emit = [&](int item, const char* event) {
      t += 1 + static_cast<std::int64_t>(rng.next_below(100));
      records.push_back({user, item_names[item], event, t});
    };
    for (int track : tracks) {
      for (int step = 0; step < config.track_length; ++step) {
        if (!noise_pool.empty() && rng.bernoulli(config.p_noise))
          emit(noise_pool[rng.next_below(noise_pool.size())], "r");
        const int item = track * config.track_length + step;
        emit(item, "r");
        const double draw = rng.uniform01();
        if (draw < p_like_u)
          emit(item, "+");
        else if (draw < p_like_u + p_dislike_u)
          emit(item, "-");
      }
    }
  }
  return records;
}

void write_corpus_csv(std::span<const InteractionRecord> records, std::ostream& out) {
  out << "user_id,item_id,event_type,timestamp\n";
  for (const auto& r : records)
    out << r.user_id << ',' << r.item_id << ',' << r.event_type << ',' << r.timestamp << '\n';
}

void write_corpus_csv_file(std::span<const InteractionRecord> records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("write_corpus_csv: cannot open " + path);
  write_corpus_csv(records, out);
  if (!out) throw FormatError("write_corpus_csv: write failed for " + path);
}

}  // namespace hsr
