#include "flatsurr/models/checkpoint.hpp"

#include <json.hpp>

#include "flatsurr/core/binary_io.hpp"

namespace flatsurr {

namespace {

bool is_running_stat(const std::string& name) {
  auto ends_with = [&](const std::string& suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".running_mean") || ends_with(".running_var");
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  const auto& p = ckpt.params;
  nlohmann::json meta = {{"epoch", ckpt.meta.epoch},
                         {"seed", ckpt.meta.seed},
                         {"optimizer", ckpt.meta.optimizer},
                         {"config_hash", ckpt.meta.config_hash},
                         {"fingerprint", p.fingerprint}};
  const std::string meta_text = meta.dump();
  io::Writer w;
  w.str("FSKP");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(meta_text.size()));
  w.str(meta_text);
  w.u32(static_cast<std::uint32_t>(p.count()));
  for (std::size_t i = 0; i < p.count(); ++i) {
    const auto& name = p.names[i];
    if (name.size() > 0xFFFF) throw FormatError("tensor name too long: " + name);
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.str(name);
    const auto& t = p.tensors[i];
    if (t.rank() > 255) throw FormatError("tensor rank too large");
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (Index d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (Index k = 0; k < t.size(); ++k) w.f32(t[k]);
  }
  return w.buffer();
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  io::Reader r(bytes, "checkpoint");
  if (r.str(4) != "FSKP") throw BadMagic("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t meta_len = r.u32();
  const nlohmann::json meta = nlohmann::json::parse(r.str(meta_len));
  Checkpoint ckpt;
  ckpt.meta.epoch = meta.at("epoch").get<int>();
  ckpt.meta.seed = meta.at("seed").get<std::uint64_t>();
  ckpt.meta.optimizer = meta.at("optimizer").get<std::string>();
  ckpt.meta.config_hash = meta.at("config_hash").get<std::string>();
  ckpt.params.fingerprint = meta.at("fingerprint").get<std::string>();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    std::string name = r.str(name_len);
    const std::uint8_t rank = r.u8();
    Shape shape;
    for (std::uint8_t k = 0; k < rank; ++k) shape.push_back(static_cast<Index>(r.u32()));
    const Index n = shape_numel(shape);
    r.need(static_cast<std::size_t>(n) * 4);
    VectorX<float> data(n);
    for (Index k = 0; k < n; ++k) data[k] = r.f32();
    ckpt.params.trainable.push_back(!is_running_stat(name));
    ckpt.params.names.push_back(std::move(name));
    ckpt.params.tensors.emplace_back(std::move(shape), std::move(data));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  io::write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

Checkpoint load_checkpoint(const std::string& path, const Graph& graph) {
  Checkpoint ckpt = load_checkpoint(path);
  const std::string expect = graph.fingerprint();
  if (ckpt.params.fingerprint != expect)
    throw FingerprintMismatch("checkpoint '" + path + "' has architecture fingerprint " + ckpt.params.fingerprint +
                              ", expected " + expect);
  check_params(graph, ckpt.params);
  for (std::size_t i = 0; i < graph.params().size(); ++i) {
    if (ckpt.params.names[i] != graph.params()[i].name)
      throw FingerprintMismatch("checkpoint tensor '" + ckpt.params.names[i] + "' does not match '" +
                                graph.params()[i].name + "'");
    ckpt.params.trainable[i] = graph.params()[i].trainable();
  }
  return ckpt;
}

}  // namespace flatsurr
