#include "checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "binary_io.hpp"
#include "errors.hpp"

namespace uniprofile {

namespace {
constexpr char kMagic[4] = {'U', 'P', 'C', 'K'};
}

const NamedTensor& Checkpoint::at(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw ParseError("checkpoint has no tensor '" + name + "'");
}

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  io::LeWriter w(out);
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(Checkpoint::kVersion);
  w.put_string(ckpt.metadata.dump());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    std::uint64_t count = 1;
    for (auto d : t.shape) count *= d;
    if (count != t.data.size())
      throw ShapeError("checkpoint tensor '" + t.name + "' data does not match shape");
    w.put_string(t.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.put<std::uint64_t>(d);
    w.put_floats(t.data.data(), t.data.size());
  }
  out.close();
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  io::LeReader r(in, "checkpoint");
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw ParseError("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kVersion)
    throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  try {
    ckpt.metadata = nlohmann::json::parse(r.get_string());
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("checkpoint: bad metadata: ") + ex.what());
  }
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = r.get_string(1 << 16);
    const auto ndim = r.get<std::uint32_t>();
    if (ndim > 8) throw ParseError("checkpoint: tensor rank out of range");
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.shape.push_back(r.get<std::uint64_t>());
      count *= t.shape.back();
    }
    if (count > (1ull << 32)) throw ParseError("checkpoint: tensor too large");
    t.data.resize(count);
    r.get_floats(t.data.data(), count);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

}  // namespace uniprofile
