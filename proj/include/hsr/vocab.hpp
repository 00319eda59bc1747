#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hsr {

enum class TokenKind { Special, Event, Item };

// Token table with the fixed layout: <pad>=0, <mask>=1, event tokens in
// configuration order, then item tokens sorted ascending by item id. Item
// tokens are stored as "i:<item_id>" so the event and item namespaces can
// never collide.
class Vocabulary {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kMaskId = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kMaskToken = "<mask>";

  Vocabulary() = default;

  // `events` in configuration order; `item_ids` raw external ids, sorted and
  // de-duplicated here.
  static Vocabulary build(std::span<const std::string> events,
                          std::vector<std::string> item_ids);

  int size() const { return static_cast<int>(tokens_.size()); }
  int n_events() const { return n_events_; }
  int n_items() const { return size() - n_events_ - 2; }
  int first_item_id() const { return 2 + n_events_; }

  // token string -> id; throws ContractError for unknown tokens
  int encode(std::string_view token) const;
  bool contains(std::string_view token) const;

  // id -> token string; throws ContractError for out-of-range ids
  const std::string& decode(int id) const;

  TokenKind kind(int id) const;
  bool is_event(int id) const { return id >= 0 && id < size() && kind(id) == TokenKind::Event; }
  bool is_item(int id) const { return id >= 0 && id < size() && kind(id) == TokenKind::Item; }

  // convenience over the raw external names
  int event_id(std::string_view event) const { return encode(event); }
  int item_id(std::string_view external_item) const;
  bool has_item(std::string_view external_item) const;
  // "i:c7" -> "c7"; throws unless id is item-kind
  std::string item_name(int id) const;

  // external item ids in vocabulary order (ascending token id)
  std::vector<std::string> item_names() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int n_events_ = 0;
};

}  // namespace hsr
