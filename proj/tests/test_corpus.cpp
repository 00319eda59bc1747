#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hsr/corpus.hpp"
#include "hsr/rng.hpp"
#include "hsr/tensor.hpp"
#include "hsr/vocab.hpp"

using namespace hsr;

namespace {

EventConfig config_rpm() {
  EventConfig c;
  c.events = {"r", "+", "-"};
  c.dependencies = {{"+", "r"}, {"-", "r"}};
  return c;
}

UserRecords ingest_text(const std::string& text, const EventConfig& config,
                        std::vector<RejectedRow>* rejected = nullptr) {
  std::istringstream in(text);
  return ingest(in, config, rejected);
}

constexpr const char* kHeader = "user_id,item_id,event_type,timestamp\n";

}  // namespace

TEST_CASE("event config: validation rejects malformed sets") {
  EventConfig ok = config_rpm();
  CHECK_NOTHROW(ok.validate());

  EventConfig empty;
  CHECK_THROWS_AS(empty.validate(), ContractError);

  EventConfig dup;
  dup.events = {"r", "r"};
  CHECK_THROWS_AS(dup.validate(), ContractError);

  EventConfig reserved;
  reserved.events = {"r", "OTHER"};
  CHECK_THROWS_AS(reserved.validate(), ContractError);

  EventConfig unknown_event = config_rpm();
  unknown_event.dependencies["x"] = "r";
  CHECK_THROWS_AS(unknown_event.validate(), ContractError);

  EventConfig unknown_prereq = config_rpm();
  unknown_prereq.dependencies["+"] = "x";
  CHECK_THROWS_AS(unknown_prereq.validate(), ContractError);

  EventConfig cycle;
  cycle.events = {"a", "b"};
  cycle.dependencies = {{"a", "b"}, {"b", "a"}};
  CHECK_THROWS_AS(cycle.validate(), ContractError);

  EventConfig self_loop;
  self_loop.events = {"a"};
  self_loop.dependencies = {{"a", "a"}};
  CHECK_THROWS_AS(self_loop.validate(), ContractError);
}

TEST_CASE("event config: prerequisite lookup and JSON round trip") {
  EventConfig c = config_rpm();
  CHECK(c.prerequisite("+") == std::string("r"));
  CHECK(c.prerequisite("-") == std::string("r"));
  CHECK(!c.prerequisite("r").has_value());
  CHECK(c.has_event("+"));
  CHECK(!c.has_event("x"));

  EventConfig back = EventConfig::from_json(c.to_json());
  CHECK(back.events == c.events);
  CHECK(back.dependencies == c.dependencies);
}

TEST_CASE("event config: parses the canonical JSON document") {
  EventConfig c =
      EventConfig::from_json(R"({"events":["r","+","-"],"dependencies":{"+":"r","-":"r"}})");
  CHECK(c.events == std::vector<std::string>{"r", "+", "-"});
  CHECK(c.prerequisite("-") == std::string("r"));

  CHECK_THROWS_AS(EventConfig::from_json("not json"), FormatError);
  CHECK_THROWS_AS(EventConfig::from_json(R"({"dependencies":{}})"), FormatError);
  CHECK_THROWS_AS(EventConfig::from_json_file("/nonexistent/events.json"), FormatError);
}

TEST_CASE("ingest: two rows for one user arrive time-sorted") {
  UserRecords r = ingest_text(std::string(kHeader) + "u1,c2,r,10\nu1,c2,+,20\n", config_rpm());
  REQUIRE(r.size() == 1);
  const auto& recs = r.at("u1");
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].event_type == "r");
  CHECK(recs[0].item_id == "c2");
  CHECK(recs[0].timestamp == 10);
  CHECK(recs[1].event_type == "+");
  CHECK(recs[1].timestamp == 20);
}

TEST_CASE("ingest: equal timestamps keep file order") {
  UserRecords r = ingest_text(
      std::string(kHeader) + "u1,a,r,5\nu1,b,r,5\nu1,c,r,5\nu1,d,r,4\n", config_rpm());
  const auto& recs = r.at("u1");
  REQUIRE(recs.size() == 4);
  CHECK(recs[0].item_id == "d");
  CHECK(recs[1].item_id == "a");
  CHECK(recs[2].item_id == "b");
  CHECK(recs[3].item_id == "c");
}

TEST_CASE("ingest: shuffled multi-user file matches a reference stable sort") {
  RngStream rng(33);
  std::vector<InteractionRecord> rows;
  for (int i = 0; i < 60; ++i) {
    rows.push_back({"u" + std::to_string(rng.next_below(3)), "c" + std::to_string(i % 7), "r",
                    static_cast<std::int64_t>(rng.next_below(20))});
  }
  std::string text = kHeader;
  for (const auto& r : rows)
    text += r.user_id + "," + r.item_id + ",r," + std::to_string(r.timestamp) + "\n";
  UserRecords got = ingest_text(text, config_rpm());

  // reference: bucket per user in file order, stable-sort by timestamp
  UserRecords expect;
  for (const auto& r : rows) expect[r.user_id].push_back(r);
  for (auto& [_, recs] : expect)
    std::stable_sort(recs.begin(), recs.end(),
                     [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });

  REQUIRE(got.size() == expect.size());
  for (const auto& [user, recs] : expect) {
    const auto& g = got.at(user);
    REQUIRE(g.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      CHECK(g[i].item_id == recs[i].item_id);
      CHECK(g[i].timestamp == recs[i].timestamp);
    }
  }
}

TEST_CASE("ingest: malformed input raises format errors with line numbers") {
  const EventConfig cfg = config_rpm();
  CHECK_THROWS_WITH_AS(ingest_text("", cfg), "ingest: empty input", FormatError);
  CHECK_THROWS_AS(ingest_text("wrong,header\n", cfg), FormatError);
  CHECK_THROWS_WITH_AS(ingest_text(std::string(kHeader) + "u1,c1,r\n", cfg),
                       "ingest: line 2: expected 4 fields, got 3", FormatError);
  CHECK_THROWS_WITH_AS(ingest_text(std::string(kHeader) + "u1,c1,r,1\n,c1,r,2\n", cfg),
                       "ingest: line 3: empty user_id", FormatError);
  CHECK_THROWS_WITH_AS(ingest_text(std::string(kHeader) + "u1,,r,1\n", cfg),
                       "ingest: line 2: empty item_id", FormatError);
  CHECK_THROWS_WITH_AS(ingest_text(std::string(kHeader) + "u1,c1,r,later\n", cfg),
                       "ingest: line 2: malformed timestamp 'later'", FormatError);
  CHECK_THROWS_WITH_AS(ingest_text(std::string(kHeader) + "u1,c1,r,12x\n", cfg),
                       "ingest: line 2: malformed timestamp '12x'", FormatError);
  CHECK_THROWS_AS(ingest_file("/nonexistent/corpus.csv", cfg), FormatError);
}

TEST_CASE("ingest: unknown events throw by default, or land in the rejected list") {
  const std::string text = std::string(kHeader) + "u1,c1,r,1\nu1,c1,zap,2\nu1,c1,+,3\n";
  CHECK_THROWS_WITH_AS(ingest_text(text, config_rpm()),
                       "ingest: line 3: unknown event type 'zap'", FormatError);

  std::vector<RejectedRow> rejected;
  UserRecords r = ingest_text(text, config_rpm(), &rejected);
  CHECK(r.at("u1").size() == 2);
  REQUIRE(rejected.size() == 1);
  CHECK(rejected[0].line == 3);
  CHECK(rejected[0].reason == "unknown event type 'zap'");
}

TEST_CASE("ingest: tolerates CRLF line endings and blank lines") {
  UserRecords r = ingest_text("user_id,item_id,event_type,timestamp\r\nu1,c1,r,1\r\n\nu1,c2,r,2\n",
                              config_rpm());
  CHECK(r.at("u1").size() == 2);
}

TEST_CASE("build_vocab: covers configured events plus every observed item") {
  UserRecords r = ingest_text(std::string(kHeader) + "u1,c2,r,1\nu2,c1,r,1\nu2,c2,+,2\n",
                              config_rpm());
  Vocabulary v = build_vocab(r, config_rpm());
  CHECK(v.size() == 2 + 3 + 2);
  CHECK(v.item_id("c1") == 5);
  CHECK(v.item_id("c2") == 6);
  CHECK_THROWS_AS(build_vocab(UserRecords{}, config_rpm()), ContractError);
}

TEST_CASE("encode_user: interleaves events and items in time order") {
  const EventConfig cfg = config_rpm();
  UserRecords r = ingest_text(std::string(kHeader) + "u1,c1,r,1\nu1,c1,+,2\n", cfg);
  Vocabulary v = build_vocab(r, cfg);
  UserSequence seq = encode_user("u1", r.at("u1"), v, 200);
  const std::vector<int> expect{v.event_id("r"), v.item_id("c1"), v.event_id("+"),
                                v.item_id("c1")};
  CHECK(seq.tokens == expect);
  CHECK(seq.n_interactions() == 2);
}

TEST_CASE("encode_user: keeps the newest interactions when l_max is exceeded") {
  const EventConfig cfg = config_rpm();
  std::string text = kHeader;
  for (int i = 0; i < 120; ++i)
    text += "u1,m" + std::to_string(i) + ",r," + std::to_string(i) + "\n";
  UserRecords r = ingest_text(text, cfg);
  Vocabulary v = build_vocab(r, cfg);
  UserSequence seq = encode_user("u1", r.at("u1"), v, 200);
  REQUIRE(seq.tokens.size() == 200);
  // oldest 20 interactions dropped: the first kept pair is m20
  CHECK(seq.tokens[1] == v.item_id("m20"));
  CHECK(seq.tokens[199] == v.item_id("m119"));
  CHECK_THROWS_AS(encode_user("u1", r.at("u1"), v, 1), ContractError);
}

TEST_CASE("encode_user: parity invariant holds for random corpora") {
  RngStream rng(17);
  const EventConfig cfg = config_rpm();
  const char* events[] = {"r", "+", "-"};
  std::string text = kHeader;
  for (int i = 0; i < 300; ++i)
    text += "u" + std::to_string(rng.next_below(5)) + ",c" + std::to_string(rng.next_below(12)) +
            "," + events[rng.next_below(3)] + "," + std::to_string(rng.next_below(1000)) + "\n";
  UserRecords r = ingest_text(text, cfg);
  Vocabulary v = build_vocab(r, cfg);
  for (const auto& [user, recs] : r) {
    UserSequence seq = encode_user(user, recs, v, 40);  // force truncation for big users
    CHECK(seq.tokens.size() % 2 == 0);
    CHECK(seq.tokens.size() <= 40);
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
      if (i % 2 == 0)
        CHECK(v.is_event(seq.tokens[i]));
      else
        CHECK(v.is_item(seq.tokens[i]));
    }
  }
}

TEST_CASE("split: holds out the final interaction per user, excluding singletons") {
  const EventConfig cfg = config_rpm();
  UserRecords r = ingest_text(std::string(kHeader) +
                                  "u1,c1,r,1\nu1,c2,r,2\nu1,c2,+,3\n"  // 3 interactions
                                  "u2,c1,r,1\n"                        // 1 interaction: excluded
                                  "u3,c3,r,1\nu3,c3,-,2\n",            // 2 interactions
                              cfg);
  Vocabulary v = build_vocab(r, cfg);
  std::vector<UserSequence> seqs;
  for (const auto& [user, recs] : r) seqs.push_back(encode_user(user, recs, v, 200));
  Split split = split_leave_one_out(seqs);

  REQUIRE(split.train.size() == 2);
  REQUIRE(split.test.size() == 2);
  CHECK(split.train[0].user_id == "u1");
  CHECK(split.train[0].tokens.size() == 4);
  CHECK(split.test[0].target_event == v.event_id("+"));
  CHECK(split.test[0].target_item == v.item_id("c2"));
  CHECK(split.test[1].user_id == "u3");
  CHECK(split.test[1].target_event == v.event_id("-"));

  // train history + held-out pair reconstructs the original sequence
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    std::vector<int> rebuilt = split.train[i].tokens;
    rebuilt.push_back(split.test[i].target_event);
    rebuilt.push_back(split.test[i].target_item);
    const auto orig = std::find_if(seqs.begin(), seqs.end(), [&](const UserSequence& s) {
      return s.user_id == split.test[i].user_id;
    });
    CHECK(rebuilt == orig->tokens);
    CHECK(split.test[i].history == split.train[i].tokens);
  }
}

TEST_CASE("mask_tokens: forced masking guarantees exactly one mask at tiny p") {
  const std::vector<int> seq{2, 5, 3, 6, 2, 7};
  RngStream rng(9);
  std::vector<int> input, labels;
  for (int trial = 0; trial < 50; ++trial) {
    mask_tokens(seq, 1e-12, rng, input, labels);
    int masked = 0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (labels[i] >= 0) {
        ++masked;
        CHECK(input[i] == Vocabulary::kMaskId);
        CHECK(labels[i] == seq[i]);
      } else {
        CHECK(input[i] == seq[i]);
      }
    }
    CHECK(masked == 1);
  }
}

TEST_CASE("mask_tokens: empirical rate at p=0.4 concentrates within [0.38, 0.42]") {
  RngStream rng(10);
  std::vector<int> seq(100);
  for (std::size_t i = 0; i < seq.size(); ++i) seq[i] = 2 + static_cast<int>(i % 9);
  std::vector<int> input, labels;
  long masked = 0, total = 0;
  for (int s = 0; s < 1200; ++s) {  // 120k candidate tokens
    mask_tokens(seq, 0.4, rng, input, labels);
    for (int lb : labels) masked += lb >= 0 ? 1 : 0;
    total += static_cast<long>(seq.size());
  }
  const double rate = static_cast<double>(masked) / static_cast<double>(total);
  CHECK(total >= 100000);
  CHECK(rate >= 0.38);
  CHECK(rate <= 0.42);
}

TEST_CASE("mask_tokens: pad positions are never masked; p is validated") {
  const std::vector<int> seq{2, 5, 0, 0};
  RngStream rng(11);
  std::vector<int> input, labels;
  for (int trial = 0; trial < 200; ++trial) {
    mask_tokens(seq, 0.9, rng, input, labels);
    CHECK(labels[2] == -1);
    CHECK(labels[3] == -1);
    CHECK(input[2] == 0);
    CHECK(input[3] == 0);
  }
  CHECK_THROWS_AS(mask_tokens(seq, 0.0, rng, input, labels), ContractError);
  CHECK_THROWS_AS(mask_tokens(seq, 1.0, rng, input, labels), ContractError);
  const std::vector<int> empty;
  CHECK_THROWS_AS(mask_tokens(empty, 0.4, rng, input, labels), ContractError);
  const std::vector<int> all_pad{0, 0};
  CHECK_THROWS_AS(mask_tokens(all_pad, 0.4, rng, input, labels), ContractError);
}

TEST_CASE("make_masked_batch: right-pads to the longest sequence") {
  std::vector<UserSequence> seqs(3);
  seqs[0].tokens = {2, 5, 3, 5};
  seqs[1].tokens = {2, 6};
  seqs[2].tokens = {2, 7, 2, 8, 2, 9};
  RngStream rng(12);
  MaskedBatch batch = make_masked_batch(seqs, 0.4, rng);
  CHECK(batch.batch == 3);
  CHECK(batch.length == 6);
  for (int b = 0; b < 3; ++b) {
    const auto in = batch.input_row(b);
    const auto lb = batch.label_row(b);
    const auto pd = batch.pad_row(b);
    const std::size_t n = seqs[static_cast<std::size_t>(b)].tokens.size();
    for (std::size_t i = 0; i < 6; ++i) {
      if (i >= n) {
        CHECK(pd[i] == 1);
        CHECK(in[i] == Vocabulary::kPadId);
        CHECK(lb[i] == -1);
      } else {
        CHECK(pd[i] == 0);
        // masked positions show <mask> and carry the original id as label
        if (lb[i] >= 0) {
          CHECK(in[i] == Vocabulary::kMaskId);
          CHECK(lb[i] == seqs[static_cast<std::size_t>(b)].tokens[i]);
        } else {
          CHECK(in[i] == seqs[static_cast<std::size_t>(b)].tokens[i]);
        }
      }
    }
  }
  CHECK_THROWS_AS(make_masked_batch({}, 0.4, rng), ContractError);
}

TEST_CASE("make_eval_input: appends the query pair with the asked half masked") {
  // history [r, c1] as token ids with the layout used throughout: r=2, c1=5
  const std::vector<int> history{2, 5};
  EvalInput item_mode = make_eval_input(history, 3, Vocabulary::kPadId, PredictMode::Item, 200);
  CHECK(item_mode.ids == std::vector<int>{2, 5, 3, 1});
  CHECK(item_mode.masked_pos == 3);

  EvalInput event_mode = make_eval_input(history, Vocabulary::kPadId, 5, PredictMode::Event, 200);
  CHECK(event_mode.ids == std::vector<int>{2, 5, 1, 5});
  CHECK(event_mode.masked_pos == 2);
}

TEST_CASE("make_eval_input: drops the oldest pairs to make room for the query") {
  std::vector<int> history;
  for (int i = 0; i < 10; ++i) {
    history.push_back(2);
    history.push_back(100 + i);
  }
  EvalInput ev = make_eval_input(history, 3, Vocabulary::kPadId, PredictMode::Item, 10);
  REQUIRE(ev.ids.size() == 10);
  CHECK(ev.ids[1] == 106);  // oldest six pairs dropped
  CHECK(ev.ids[8] == 3);
  CHECK(ev.ids[9] == Vocabulary::kMaskId);
  CHECK(ev.masked_pos == 9);

  const std::vector<int> odd{2};
  CHECK_THROWS_AS(make_eval_input(odd, 3, 0, PredictMode::Item, 10), ContractError);
  CHECK_THROWS_AS(make_eval_input(history, 3, 0, PredictMode::Item, 1), ContractError);
}
