#include "hsr/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hsr/tensor.hpp"

namespace hsr {

bool EventConfig::has_event(const std::string& e) const {
  return std::find(events.begin(), events.end(), e) != events.end();
}

std::optional<std::string> EventConfig::prerequisite(const std::string& e) const {
  auto it = dependencies.find(e);
  if (it == dependencies.end()) return std::nullopt;
  return it->second;
}

void EventConfig::validate() const {
  if (events.empty()) throw ContractError("event config: empty event set");
  std::set<std::string> seen;
  for (const auto& e : events) {
    if (e.empty()) throw ContractError("event config: empty event name");
    if (e == "OTHER") throw ContractError("event config: event name 'OTHER' is reserved");
    if (!seen.insert(e).second) throw ContractError("event config: duplicate event '" + e + "'");
  }
  for (const auto& [event, prereq] : dependencies) {
    if (!has_event(event))
      throw ContractError("event config: dependency on unknown event '" + event + "'");
    if (!has_event(prereq))
      throw ContractError("event config: unknown prerequisite '" + prereq + "' for '" + event +
                          "'");
  }
  // The prerequisite relation is a partial function, so a cycle shows up as a
  // chain from some event back to itself.
  for (const auto& [start, _] : dependencies) {
    std::set<std::string> visited{start};
    std::string cur = start;
    while (true) {
      auto it = dependencies.find(cur);
      if (it == dependencies.end()) break;
      cur = it->second;
      if (!visited.insert(cur).second)
        throw ContractError("event config: dependency cycle through '" + cur + "'");
    }
  }
}

EventConfig EventConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("event config: ") + e.what());
  }
  EventConfig config;
  try {
    config.events = j.at("events").get<std::vector<std::string>>();
    if (j.contains("dependencies"))
      config.dependencies = j.at("dependencies").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("event config: ") + e.what());
  }
  config.validate();
  return config;
}

EventConfig EventConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("event config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

std::string EventConfig::to_json() const {
  nlohmann::json j;
  j["events"] = events;
  j["dependencies"] = dependencies;
  return j.dump(2) + "\n";
}

namespace {

constexpr const char* kHeader = "user_id,item_id,event_type,timestamp";

// Splits a data row on commas; none of the fields carry embedded commas.
std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

UserRecords ingest(std::istream& in, const EventConfig& config,
                   std::vector<RejectedRow>* rejected) {
  config.validate();
  std::string line;
  if (!std::getline(in, line)) throw FormatError("ingest: empty input");
  if (strip_cr(line) != kHeader)
    throw FormatError("ingest: line 1: expected header '" + std::string(kHeader) + "'");

  UserRecords records;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_fields(line);
    const std::string where = "ingest: line " + std::to_string(lineno) + ": ";
    if (fields.size() != 4)
      throw FormatError(where + "expected 4 fields, got " + std::to_string(fields.size()));
    if (fields[0].empty()) throw FormatError(where + "empty user_id");
    if (fields[1].empty()) throw FormatError(where + "empty item_id");

    std::int64_t ts = 0;
    const auto* first = fields[3].data();
    const auto* last = first + fields[3].size();
    auto [ptr, ec] = std::from_chars(first, last, ts);
    if (ec != std::errc() || ptr != last)
      throw FormatError(where + "malformed timestamp '" + fields[3] + "'");

    if (!config.has_event(fields[2])) {
      if (rejected == nullptr)
        throw FormatError(where + "unknown event type '" + fields[2] + "'");
      rejected->push_back({lineno, "unknown event type '" + fields[2] + "'"});
      continue;
    }
    records[fields[0]].push_back({fields[0], fields[1], fields[2], ts});
  }
  for (auto& [_, recs] : records) {
    std::stable_sort(recs.begin(), recs.end(),
                     [](const InteractionRecord& a, const InteractionRecord& b) {
                       return a.timestamp < b.timestamp;
                     });
  }
  return records;
}

UserRecords ingest_file(const std::string& path, const EventConfig& config,
                        std::vector<RejectedRow>* rejected) {
  std::ifstream in(path);
  if (!in) throw FormatError("ingest: cannot open " + path);
  return ingest(in, config, rejected);
}

Vocabulary build_vocab(const UserRecords& records, const EventConfig& config) {
  config.validate();
  if (records.empty()) throw ContractError("build_vocab: empty corpus");
  std::set<std::string> items;
  for (const auto& [_, recs] : records)
    for (const auto& r : recs) items.insert(r.item_id);
  return Vocabulary::build(config.events, {items.begin(), items.end()});
}

UserSequence encode_user(const std::string& user_id, std::span<const InteractionRecord> records,
                         const Vocabulary& vocab, int l_max) {
  if (l_max < 2) throw ContractError("encode_user: l_max must be at least 2");
  if (records.empty()) throw ContractError("encode_user: no records for user " + user_id);
  const std::size_t max_pairs = static_cast<std::size_t>(l_max) / 2;
  const std::size_t skip = records.size() > max_pairs ? records.size() - max_pairs : 0;
  UserSequence seq;
  seq.user_id = user_id;
  seq.tokens.reserve(2 * (records.size() - skip));
  for (std::size_t i = skip; i < records.size(); ++i) {
    seq.tokens.push_back(vocab.event_id(records[i].event_type));
    seq.tokens.push_back(vocab.item_id(records[i].item_id));
  }
  return seq;
}

Split split_leave_one_out(const std::vector<UserSequence>& sequences) {
  Split split;
  for (const auto& seq : sequences) {
    if (seq.tokens.size() < 4) continue;  // needs one interaction to hold out and one to keep
    UserSequence head;
    head.user_id = seq.user_id;
    head.tokens.assign(seq.tokens.begin(), seq.tokens.end() - 2);
    TestCase tc;
    tc.user_id = seq.user_id;
    tc.history = head.tokens;
    tc.target_event = seq.tokens[seq.tokens.size() - 2];
    tc.target_item = seq.tokens[seq.tokens.size() - 1];
    split.train.push_back(std::move(head));
    split.test.push_back(std::move(tc));
  }
  return split;
}

void mask_tokens(std::span<const int> seq, double p, RngStream& rng, std::vector<int>& input,
                 std::vector<int>& labels) {
  if (!(p > 0.0 && p < 1.0)) throw ContractError("mask_tokens: p must lie in (0, 1)");
  if (seq.empty()) throw ContractError("mask_tokens: empty sequence");
  input.assign(seq.begin(), seq.end());
  labels.assign(seq.size(), -1);
  std::vector<std::size_t> candidates;
  candidates.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (seq[i] != Vocabulary::kPadId) candidates.push_back(i);
  if (candidates.empty()) throw ContractError("mask_tokens: all-pad sequence");

  bool any = false;
  for (std::size_t i : candidates) {
    if (rng.bernoulli(p)) {
      labels[i] = seq[i];
      input[i] = Vocabulary::kMaskId;
      any = true;
    }
  }
  if (!any) {
    std::size_t i = candidates[rng.next_below(candidates.size())];
    labels[i] = seq[i];
    input[i] = Vocabulary::kMaskId;
  }
}

MaskedBatch make_masked_batch(std::span<const UserSequence> sequences, double p, RngStream& rng) {
  if (sequences.empty()) throw ContractError("make_masked_batch: empty batch");
  std::size_t length = 0;
  for (const auto& s : sequences) length = std::max(length, s.tokens.size());
  if (length == 0) throw ContractError("make_masked_batch: all sequences empty");

  MaskedBatch batch;
  batch.batch = static_cast<int>(sequences.size());
  batch.length = static_cast<int>(length);
  batch.input.assign(sequences.size() * length, Vocabulary::kPadId);
  batch.labels.assign(sequences.size() * length, -1);
  batch.pad.assign(sequences.size() * length, 1);

  std::vector<int> input, labels;
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    mask_tokens(sequences[b].tokens, p, rng, input, labels);
    const std::size_t base = b * length;
    for (std::size_t i = 0; i < input.size(); ++i) {
      batch.input[base + i] = input[i];
      batch.labels[base + i] = labels[i];
      batch.pad[base + i] = 0;
    }
  }
  return batch;
}

EvalInput make_eval_input(std::span<const int> history, int event_id, int item_id,
                          PredictMode mode, int l_max) {
  if (l_max < 2) throw ContractError("make_eval_input: l_max must be at least 2");
  if (history.size() % 2 != 0)
    throw ContractError("make_eval_input: history must hold whole interactions");
  const std::size_t max_hist_pairs = static_cast<std::size_t>(l_max - 2) / 2;
  const std::size_t pairs = history.size() / 2;
  const std::size_t skip = 2 * (pairs > max_hist_pairs ? pairs - max_hist_pairs : 0);

  EvalInput out;
  out.ids.assign(history.begin() + skip, history.end());
  switch (mode) {
    case PredictMode::Item:
      out.ids.push_back(event_id);
      out.ids.push_back(Vocabulary::kMaskId);
      out.masked_pos = static_cast<int>(out.ids.size()) - 1;
      break;
    case PredictMode::Event:
      out.ids.push_back(Vocabulary::kMaskId);
      out.ids.push_back(item_id);
      out.masked_pos = static_cast<int>(out.ids.size()) - 2;
      break;
    default:
      throw ContractError("make_eval_input: unknown prediction mode");
  }
  return out;
}

}  // namespace hsr
