#pragma once

// Model checkpoint file.
//
// Layout (all integers little-endian):
//
//   offset 0   8 bytes   magic "RSCKPT01"
//   offset 8   u64       header length H in bytes
//   offset 16  H bytes   UTF-8 JSON header:
//                          {"format": "rankscope.checkpoint", "version": 1,
//                           "config": {...EncoderConfig...},
//                           "rank": null | r,
//                           "tensors": [{"name": ..., "shape": [...]}, ...]}
//   offset 16+H          payload: every tensor listed in the header, in
//                        header order, as IEEE-754 binary64 little-endian
//                        values in row-major order.
//
// The payload stores the exact bit patterns, so save -> load is lossless.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>

#include "json.hpp"
#include "rankscope/model.hpp"

namespace rankscope {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline nlohmann::ordered_json to_json(const EncoderConfig& c) {
  return {{"depth", c.depth},     {"d_model", c.d_model},     {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},       {"n_classes", c.n_classes}, {"seq_len", c.seq_len},
          {"layernorm_eps", c.layernorm_eps}};
}

template <class Json>
EncoderConfig encoder_config_from_json(const Json& j, EncoderConfig c = {}) {
  auto get = [&](const char* key, auto& field) {
    using T = std::remove_reference_t<decltype(field)>;
    if (!j.contains(key)) return;
    if (std::is_unsigned_v<T> && !j.at(key).is_number_unsigned())
      throw ConfigError(std::string("model: '") + key + "' must be a non-negative integer");
    field = j.at(key).template get<T>();
  };
  get("depth", c.depth);
  get("d_model", c.d_model);
  get("n_heads", c.n_heads);
  get("d_ff", c.d_ff);
  get("n_classes", c.n_classes);
  get("seq_len", c.seq_len);
  get("layernorm_eps", c.layernorm_eps);
  return c;
}

/// Untrained model with the right structure; all values zero.
inline Model model_skeleton(const EncoderConfig& cfg, std::optional<std::size_t> rank) {
  Model m = build_teacher(cfg, 0);
  if (rank) m = factorize_student(m, *rank, StudentInit::Random, 0);
  return m;
}

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 8)) throw FormatError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline constexpr char kCheckpointMagic[9] = "RSCKPT01";

inline Model read_payload(std::istream& is, const nlohmann::json& header);

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Model& m) {
  nlohmann::ordered_json header;
  header["format"] = "rankscope.checkpoint";
  header["version"] = 1;
  header["config"] = to_json(m.config);
  header["rank"] = m.rank ? nlohmann::ordered_json(*m.rank) : nlohmann::ordered_json(nullptr);
  auto params = m.parameters();
  header["tensors"] = nlohmann::ordered_json::array();
  for (const auto& p : params) header["tensors"].push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  const std::string h = header.dump();
  os.write(detail::kCheckpointMagic, 8);
  detail::put_u64(os, h.size());
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& p : params)
    for (double v : p.tensor.values()) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
}

inline Model read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
    throw FormatError("checkpoint: bad magic (not a rankscope checkpoint)");
  const auto hlen = detail::get_u64(is);
  if (hlen > (1u << 26)) throw FormatError("checkpoint: implausible header length");
  std::string h(hlen, '\0');
  if (!is.read(h.data(), static_cast<std::streamsize>(hlen))) throw FormatError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(h);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }
  if (header.value("format", "") != "rankscope.checkpoint" || header.value("version", 0) != 1)
    throw FormatError("checkpoint: unsupported format or version");
  try {
    return detail::read_payload(is, header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header field: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid architecture: ") + e.what());
  }
}

namespace detail {

inline Model read_payload(std::istream& is, const nlohmann::json& header) {
  const EncoderConfig cfg = encoder_config_from_json(header.at("config"));
  std::optional<std::size_t> rank;
  if (!header.at("rank").is_null()) rank = header.at("rank").get<std::size_t>();
  Model m = model_skeleton(cfg, rank);

  std::map<std::string, Tensor*> slots;
  m.visit_params([&](const std::string& name, Tensor& t) { slots[name] = &t; });
  const auto& tensors = header.at("tensors");
  if (tensors.size() != slots.size()) throw FormatError("checkpoint: tensor count does not match the architecture");
  for (const auto& entry : tensors) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    auto it = slots.find(name);
    if (it == slots.end()) throw FormatError("checkpoint: unexpected tensor '" + name + "'");
    if (it->second->shape() != shape)
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                        shape_str(it->second->shape()));
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = std::bit_cast<double>(detail::get_u64(is));
    *it->second = Tensor(shape, std::move(values), true);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes after payload");
  return m;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Model& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_checkpoint(os, m);
  if (!os) throw std::runtime_error("failed writing '" + path + "'");
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace rankscope
