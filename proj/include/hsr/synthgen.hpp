#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hsr/corpus.hpp"

namespace hsr {

// Grammar-constrained interaction log generator: users walk one or two item
// "tracks" in order, registering for each item and sometimes liking or
// disliking it right after, so every '+'/'-' provably follows an 'r' on the
// same item.
struct SynthConfig {
  int n_users = 2000;
  int n_items = 60;
  int n_tracks = 6;
  int track_length = 10;
  double p_like = 0.5;
  double p_dislike = 0.15;
  double p_noise = 0.05;  // chance of an off-track registration between steps
  std::uint64_t seed = 42;

  // counts positive, probabilities in [0,1] with p_like+p_dislike <= 1,
  // tracks fitting inside the item set
  void validate() const;
};

// The event alphabet the generator emits, with '+'/'-' requiring a prior 'r'.
EventConfig synth_event_config();

// Deterministic in config.seed; per-user streams are derived from it, and
// per-user timestamps strictly increase.
std::vector<InteractionRecord> generate(const SynthConfig& config);

void write_corpus_csv(std::span<const InteractionRecord> records, std::ostream& out);
void write_corpus_csv_file(std::span<const InteractionRecord> records, const std::string& path);

}  // namespace hsr
