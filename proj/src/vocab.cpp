#include "hsr/vocab.hpp"

#include <algorithm>

#include "hsr/tensor.hpp"

namespace hsr {

Vocabulary Vocabulary::build(std::span<const std::string> events,
                             std::vector<std::string> item_ids) {
  Vocabulary v;
  v.tokens_.push_back(kPadToken);
  v.tokens_.push_back(kMaskToken);
  for (const auto& e : events) {
    if (e.empty()) throw ContractError("vocabulary: empty event token");
    v.tokens_.push_back(e);
  }
  v.n_events_ = static_cast<int>(events.size());

  std::sort(item_ids.begin(), item_ids.end());
  item_ids.erase(std::unique(item_ids.begin(), item_ids.end()), item_ids.end());
  for (const auto& it : item_ids) v.tokens_.push_back("i:" + it);

  for (int id = 0; id < static_cast<int>(v.tokens_.size()); ++id) {
    auto [pos, fresh] = v.index_.emplace(v.tokens_[static_cast<std::size_t>(id)], id);
    if (!fresh) throw ContractError("vocabulary: duplicate token " + pos->first);
  }
  return v;
}

int Vocabulary::encode(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) throw ContractError("vocabulary: unknown token " + std::string(token));
  return it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

const std::string& Vocabulary::decode(int id) const {
  if (id < 0 || id >= size()) throw ContractError("vocabulary: id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

TokenKind Vocabulary::kind(int id) const {
  if (id < 0 || id >= size()) throw ContractError("vocabulary: id out of range");
  if (id < 2) return TokenKind::Special;
  if (id < 2 + n_events_) return TokenKind::Event;
  return TokenKind::Item;
}

int Vocabulary::item_id(std::string_view external_item) const {
  return encode("i:" + std::string(external_item));
}

bool Vocabulary::has_item(std::string_view external_item) const {
  return contains("i:" + std::string(external_item));
}

std::string Vocabulary::item_name(int id) const {
  if (kind(id) != TokenKind::Item) throw ContractError("vocabulary: not an item token");
  return tokens_[static_cast<std::size_t>(id)].substr(2);
}

std::vector<std::string> Vocabulary::item_names() const {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(n_items()));
  for (int id = first_item_id(); id < size(); ++id) out.push_back(item_name(id));
  return out;
}

}  // namespace hsr
