#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsr/rng.hpp"
#include "hsr/vocab.hpp"

namespace hsr {

struct InteractionRecord {
  std::string user_id;
  std::string item_id;
  std::string event_type;
  std::int64_t timestamp = 0;
};

// The event set E plus the prerequisite relation between event types: an
// event may be declared to require another event on the same item earlier in
// the user's history ("+" requires "r", say).
struct EventConfig {
  std::vector<std::string> events;
  std::map<std::string, std::string> dependencies;  // event -> prerequisite event

  bool has_event(const std::string& e) const;
  std::optional<std::string> prerequisite(const std::string& e) const;

  // events nonempty and unique, never "OTHER"; every dependency endpoint a
  // known event; the prerequisite relation acyclic
  void validate() const;

  static EventConfig from_json(const std::string& text);
  static EventConfig from_json_file(const std::string& path);
  std::string to_json() const;
};

// user id -> that user's interactions, stably sorted by timestamp
using UserRecords = std::map<std::string, std::vector<InteractionRecord>>;

struct RejectedRow {
  int line = 0;
  std::string reason;
};

// Parses `user_id,item_id,event_type,timestamp` CSV. Malformed rows always
// raise FormatError with their line number. Rows with an event type outside
// the configured set are collected into `rejected` when given, otherwise they
// raise as well.
UserRecords ingest(std::istream& in, const EventConfig& config,
                   std::vector<RejectedRow>* rejected = nullptr);
UserRecords ingest_file(const std::string& path, const EventConfig& config,
                        std::vector<RejectedRow>* rejected = nullptr);

// Vocabulary over the configured events and every item observed in `records`.
Vocabulary build_vocab(const UserRecords& records, const EventConfig& config);

// One user's interleaved token sequence: even positions are event tokens,
// odd positions the item they acted on. Always even length.
struct UserSequence {
  std::string user_id;
  std::vector<int> tokens;

  std::size_t n_interactions() const { return tokens.size() / 2; }
};

// Interleaves a user's time-sorted records as [e1, i1, e2, i2, ...]; when the
// result would exceed l_max tokens the oldest whole interactions are dropped.
UserSequence encode_user(const std::string& user_id, std::span<const InteractionRecord> records,
                         const Vocabulary& vocab, int l_max);

struct TestCase {
  std::string user_id;
  std::vector<int> history;  // the user's sequence minus the held-out pair
  int target_event = 0;      // token ids of the held-out interaction
  int target_item = 0;
};

struct Split {
  std::vector<UserSequence> train;
  std::vector<TestCase> test;  // one per kept user, aligned with train
};

// Per-user holdout of the final interaction. Users with fewer than two
// interactions are excluded from both sides.
Split split_leave_one_out(const std::vector<UserSequence>& sequences);

// Cloze-style masking of one sequence: each non-pad token is independently
// replaced by <mask> with probability p; labels carry the original ids and
// -1 elsewhere. If the draw masks nothing, one position is force-masked so
// every row contributes to the loss.
void mask_tokens(std::span<const int> seq, double p, RngStream& rng, std::vector<int>& input,
                 std::vector<int>& labels);

struct MaskedBatch {
  int batch = 0;
  int length = 0;                 // longest sequence in the batch
  std::vector<int> input;         // batch*length row-major token ids
  std::vector<int> labels;        // original ids at masked positions, -1 elsewhere
  std::vector<std::uint8_t> pad;  // 1 at <pad> positions

  std::span<const int> input_row(int b) const {
    return {input.data() + static_cast<std::size_t>(b) * length, static_cast<std::size_t>(length)};
  }
  std::span<const int> label_row(int b) const {
    return {labels.data() + static_cast<std::size_t>(b) * length, static_cast<std::size_t>(length)};
  }
  std::span<const std::uint8_t> pad_row(int b) const {
    return {pad.data() + static_cast<std::size_t>(b) * length, static_cast<std::size_t>(length)};
  }
};

// Masks every listed sequence and right-pads to the longest one.
MaskedBatch make_masked_batch(std::span<const UserSequence> sequences, double p, RngStream& rng);

enum class PredictMode { Item, Event };

struct EvalInput {
  std::vector<int> ids;
  int masked_pos = 0;
};

// Appends the query pair to the history with the queried half replaced by
// <mask>; truncates whole pairs from the front when l_max would be exceeded.
EvalInput make_eval_input(std::span<const int> history, int event_id, int item_id,
                          PredictMode mode, int l_max);

}  // namespace hsr
