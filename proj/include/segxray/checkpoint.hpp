#pragma once

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "segxray/model.hpp"

namespace segxray {

struct TrainMeta {
  uint64_t seed = 0;
  int epochs = 0;
  double dropout = 0.0;
  double final_loss = 0.0;
  double final_val_dice_wt = -1.0;
};

// Parameters in graph declaration order; shapes are derivable from the arch
// spec alone, so the file stores raw value blobs only.
struct Checkpoint {
  ArchSpec arch;
  TrainMeta meta;
  std::vector<Tensor> params;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<uint8_t>& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

struct ByteReader {
  const std::vector<uint8_t>& b;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > b.size()) throw CheckpointError("checkpoint file truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 8;
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline std::string checkpoint_text(const ArchSpec& a, const TrainMeta& m) {
  std::ostringstream os;
  os << "family=" << family_name(a.family) << "\n"
     << "depth=" << a.depth << "\n"
     << "base_channels=" << a.base_channels << "\n"
     << "in_channels=" << a.in_channels << "\n"
     << "out_channels=" << a.out_channels << "\n"
     << "train_seed=" << m.seed << "\n"
     << "train_epochs=" << m.epochs << "\n"
     << "train_dropout=" << detail::fmt_double(m.dropout) << "\n"
     << "final_loss=" << detail::fmt_double(m.final_loss) << "\n"
     << "final_val_dice_wt=" << detail::fmt_double(m.final_val_dice_wt) << "\n";
  return os.str();
}

inline void parse_checkpoint_text(const std::string& text, ArchSpec& a, TrainMeta& m) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed checkpoint header line: " + line);
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "family") a.family = parse_family(val);
    else if (key == "depth") a.depth = std::stoi(val);
    else if (key == "base_channels") a.base_channels = std::stoi(val);
    else if (key == "in_channels") a.in_channels = std::stoi(val);
    else if (key == "out_channels") a.out_channels = std::stoi(val);
    else if (key == "train_seed") m.seed = std::stoull(val);
    else if (key == "train_epochs") m.epochs = std::stoi(val);
    else if (key == "train_dropout") m.dropout = std::stod(val);
    else if (key == "final_loss") m.final_loss = std::stod(val);
    else if (key == "final_val_dice_wt") m.final_val_dice_wt = std::stod(val);
    else throw CheckpointError("unknown checkpoint header key: " + key);
  }
  a.validate();
}

inline Checkpoint checkpoint_from_model(const Model& m, TrainMeta meta = {}) {
  Checkpoint c;
  c.arch = m.spec;
  c.meta = meta;
  for (int id : m.graph.parameters()) c.params.push_back(m.graph.value(id));
  return c;
}

template <typename T>
ModelT<T> instantiate_model(const Checkpoint& c) {
  ModelT<T> m = build_model_t<T>(c.arch, 0);
  const std::vector<int> ids = m.graph.parameters();
  if (ids.size() != c.params.size())
    throw CheckpointError("checkpoint holds " + std::to_string(c.params.size()) +
                          " parameters, architecture expects " + std::to_string(ids.size()));
  for (size_t i = 0; i < ids.size(); ++i) {
    if (c.params[i].shape() != m.graph.value(ids[i]).shape())
      throw CheckpointError("parameter " + std::to_string(i) + " shape mismatch");
    if constexpr (std::is_same_v<T, float>)
      m.graph.node(ids[i]).value = c.params[i];
    else
      m.graph.node(ids[i]).value = c.params[i].template cast<T>();
  }
  return m;
}

constexpr uint32_t kCheckpointVersion = 1;

// Layout: "SEGX" | u32 version | u64 text length | text | u32 param count |
// f32 little-endian blobs in declaration order | u32 crc32 of everything
// after the magic.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::vector<uint8_t> body;
  detail::put_u32(body, kCheckpointVersion);
  const std::string text = checkpoint_text(c.arch, c.meta);
  detail::put_u64(body, text.size());
  body.insert(body.end(), text.begin(), text.end());
  detail::put_u32(body, static_cast<uint32_t>(c.params.size()));
  for (const Tensor& p : c.params)
    for (int64_t i = 0; i < p.size(); ++i) {
      uint32_t bits;
      const float v = p[i];
      std::memcpy(&bits, &v, 4);
      detail::put_u32(body, bits);
    }
  const uint32_t crc =
      static_cast<uint32_t>(crc32(0L, body.data(), static_cast<uInt>(body.size())));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingFileError("cannot write checkpoint file " + path.string());
  out.write("SEGX", 4);
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  std::vector<uint8_t> tail;
  detail::put_u32(tail, crc);
  out.write(reinterpret_cast<const char*>(tail.data()), 4);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("checkpoint file not found: " + path.string());
  std::vector<uint8_t> all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (all.size() < 12 || std::memcmp(all.data(), "SEGX", 4) != 0)
    throw CheckpointError("not a checkpoint file: " + path.string());

  const std::vector<uint8_t> body(all.begin() + 4, all.end() - 4);
  detail::ByteReader tail_rd{all, all.size() - 4};
  const uint32_t stored_crc = tail_rd.u32();
  const uint32_t crc =
      static_cast<uint32_t>(crc32(0L, body.data(), static_cast<uInt>(body.size())));
  if (crc != stored_crc) throw CheckpointError("checkpoint checksum mismatch: " + path.string());

  detail::ByteReader rd{body, 0};
  const uint32_t version = rd.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint format version " + std::to_string(version) +
                          " not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  const uint64_t text_len = rd.u64();
  const std::string text = rd.bytes(text_len);

  Checkpoint c;
  parse_checkpoint_text(text, c.arch, c.meta);

  // shapes come from the architecture, not the file
  Model ref = build_model_t<float>(c.arch, 0);
  const std::vector<int> ids = ref.graph.parameters();
  const uint32_t count = rd.u32();
  if (count != ids.size())
    throw CheckpointError("checkpoint parameter count mismatch");
  for (int id : ids) {
    Tensor p(ref.graph.value(id).shape());
    for (int64_t i = 0; i < p.size(); ++i) {
      const uint32_t bits = rd.u32();
      float v;
      std::memcpy(&v, &bits, 4);
      p[i] = v;
    }
    c.params.push_back(std::move(p));
  }
  if (rd.pos != body.size()) throw CheckpointError("trailing bytes in checkpoint file");
  return c;
}

inline uint32_t file_crc32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open " + path.string());
  uint32_t crc = static_cast<uint32_t>(crc32(0L, Z_NULL, 0));
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    crc = static_cast<uint32_t>(
        crc32(crc, reinterpret_cast<const Bytef*>(buf), static_cast<uInt>(in.gcount())));
  }
  return crc;
}

}  // namespace segxray
