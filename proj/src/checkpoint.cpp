#include "hsr/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <map>

#include <json.hpp>

namespace hsr {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'H', 'S', 'R', '1'};

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},         {"n_heads", c.n_heads},
          {"n_layers", c.n_layers},       {"head_hidden", c.head_hidden},
          {"dropout", c.dropout},         {"l_max", c.l_max},
          {"vocab_size", c.vocab_size},   {"fixed_positional", c.fixed_positional}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.l_max = j.at("l_max").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.fixed_positional = j.at("fixed_positional").get<bool>();
  return c;
}

void put_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u32(std::ostream& out, std::uint32_t v) { put_bytes(out, &v, 4); }
void put_u64(std::ostream& out, std::uint64_t v) { put_bytes(out, &v, 8); }

std::string shape_str(const std::vector<Index>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Offset-tracking reader so every failure names the byte it happened at.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw FormatError("checkpoint: truncated at offset " + std::to_string(off_));
    off_ += n;
  }

  std::uint32_t u32() {
    std::uint32_t v = 0;
    bytes(&v, 4);
    return v;
  }

  std::uint64_t u64() {
    std::uint64_t v = 0;
    bytes(&v, 8);
    return v;
  }

  std::string str(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  std::uint64_t offset() const { return off_; }

  bool at_eof() {
    in_.peek();
    return in_.eof();
  }

 private:
  std::istream& in_;
  std::uint64_t off_ = 0;
};

}  // namespace

void save_checkpoint(const ModelParams<float>& params, const EventConfig& events,
                     std::span<const std::string> items, std::uint64_t seed, int epoch,
                     const std::string& path) {
  nlohmann::json meta;
  meta["version"] = kCheckpointVersion;
  meta["config"] = config_to_json(params.config);
  meta["events"] = events.events;
  meta["dependencies"] = events.dependencies;
  meta["items"] = std::vector<std::string>(items.begin(), items.end());
  meta["seed"] = seed;
  meta["epoch"] = epoch;
  const std::string meta_bytes = meta.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("checkpoint: cannot open " + path + " for writing");
  put_bytes(out, kMagic, 4);
  put_u64(out, meta_bytes.size());
  put_bytes(out, meta_bytes.data(), meta_bytes.size());
  put_u32(out, static_cast<std::uint32_t>(params.n_tensors()));
  for_each_param(params, [&out](const std::string& name, const Tensor<float>& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    put_bytes(out, name.data(), name.size());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (Index e : t.shape()) put_u64(out, static_cast<std::uint64_t>(e));
    put_bytes(out, t.data(), static_cast<std::size_t>(t.size()) * sizeof(float));
  });
  out.flush();
  if (!out) throw FormatError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path);
  Reader r(in);

  char magic[4] = {};
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic))
    throw FormatError("checkpoint: bad magic at offset 0");

  const std::uint64_t meta_len = r.u64();
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.str(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: corrupt metadata: ") + e.what());
  }

  EventConfig events;
  ModelConfig config;
  std::vector<std::string> items;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::uint32_t version = 0;
  try {
    version = meta.at("version").get<std::uint32_t>();
    if (version != kCheckpointVersion)
      throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    config = config_from_json(meta.at("config"));
    events.events = meta.at("events").get<std::vector<std::string>>();
    events.dependencies = meta.at("dependencies").get<std::map<std::string, std::string>>();
    items = meta.at("items").get<std::vector<std::string>>();
    seed = meta.at("seed").get<std::uint64_t>();
    epoch = meta.at("epoch").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: corrupt metadata: ") + e.what());
  }
  events.validate();
  config.validate();
  const int expected_vocab = 2 + static_cast<int>(events.events.size() + items.size());
  if (config.vocab_size != expected_vocab)
    throw FormatError("checkpoint: vocabulary size mismatch: config says " +
                      std::to_string(config.vocab_size) + ", metadata lists " +
                      std::to_string(expected_vocab) + " tokens");

  ModelParams<float> params(config);
  std::map<std::string, Tensor<float>*> slots;
  for_each_param(params,
                 [&slots](const std::string& name, Tensor<float>& t) { slots[name] = &t; });

  const std::uint32_t n_tensors = r.u32();
  if (n_tensors != slots.size())
    throw FormatError("checkpoint: expected " + std::to_string(slots.size()) + " tensors, found " +
                      std::to_string(n_tensors));
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = r.str(r.u32());
    auto it = slots.find(name);
    if (it == slots.end()) throw FormatError("checkpoint: unexpected tensor '" + name + "'");
    Tensor<float>* t = it->second;
    slots.erase(it);
    const std::uint32_t rank = r.u32();
    std::vector<Index> shape(rank);
    for (auto& e : shape) e = static_cast<Index>(r.u64());
    if (shape != t->shape())
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                        ", expected " + t->shape_str());
    r.bytes(t->data(), static_cast<std::size_t>(t->size()) * sizeof(float));
  }
  if (!slots.empty())
    throw FormatError("checkpoint: missing tensor '" + slots.begin()->first + "'");
  if (!r.at_eof())
    throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.offset()));

  return Checkpoint{std::move(events), std::move(items), seed, epoch, std::move(params)};
}

Vocabulary checkpoint_vocab(const Checkpoint& ckpt) {
  return Vocabulary::build(ckpt.events.events, ckpt.items);
}

}  // namespace hsr
