#include "stratgen/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

namespace stratgen {

namespace {

constexpr char kMagic[8] = {'S', 'G', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ofstream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

struct Reader {
  std::ifstream in;
  std::string path;

  Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw IoError("checkpoint: cannot open " + p);
  }

  void read_exact(void* dst, size_t n, const std::string& field) {
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
      throw IoError("checkpoint: truncated while reading " + field + " in " + path);
  }

  uint32_t get_u32(const std::string& field) {
    unsigned char b[4];
    read_exact(b, 4, field);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
  }

  uint64_t get_u64(const std::string& field) {
    unsigned char b[8];
    read_exact(b, 8, field);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }

  std::string get_string(const std::string& field) {
    uint32_t len = get_u32(field + " length");
    if (len > (1u << 24)) throw IoError("checkpoint: unreasonable " + field + " length");
    std::string s(len, '\0');
    if (len) read_exact(s.data(), len, field);
    return s;
  }
};

void read_header(Reader& r, std::string& kind, std::string& config) {
  char magic[8];
  r.read_exact(magic, 8, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("checkpoint: bad magic in " + r.path + " (not a checkpoint file)");
  uint32_t version = r.get_u32("version");
  if (version != kVersion)
    throw IoError("checkpoint: unknown format version " + std::to_string(version) + " in " +
                  r.path + " (expected " + std::to_string(kVersion) + ")");
  kind = r.get_string("kind");
  config = r.get_string("config");
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& kind,
                     const std::string& config_text, const std::vector<Parameter*>& params) {
  std::set<std::string> names;
  for (const Parameter* p : params)
    if (!names.insert(p->name).second)
      throw ContractError("checkpoint: duplicate parameter name '" + p->name + "'");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, 8);
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(kind.size()));
  out.write(kind.data(), static_cast<std::streamsize>(kind.size()));
  put_u32(out, static_cast<uint32_t>(config_text.size()));
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  put_u32(out, static_cast<uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put_u32(out, static_cast<uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put_u32(out, static_cast<uint32_t>(p->tensor.shape.size()));
    for (int d : p->tensor.shape) put_u32(out, static_cast<uint32_t>(d));
    const uint64_t bytes = static_cast<uint64_t>(p->tensor.size()) * 4;
    put_u64(out, bytes);
    out.write(reinterpret_cast<const char*>(p->tensor.ptr()),
              static_cast<std::streamsize>(bytes));
  }
  if (!out) throw IoError("checkpoint: short write to " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  Reader r(path);
  Checkpoint ck;
  read_header(r, ck.kind, ck.config_text);
  const uint32_t count = r.get_u32("array count");
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string("array name");
    uint32_t ndim = r.get_u32("ndim of '" + name + "'");
    if (ndim > 8) throw IoError("checkpoint: unreasonable rank for '" + name + "'");
    Shape shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d)
      shape[d] = static_cast<int>(r.get_u32("dims of '" + name + "'"));
    const int64_t n = shape_numel(shape);
    const uint64_t bytes = r.get_u64("payload length of '" + name + "'");
    if (bytes != static_cast<uint64_t>(n) * 4)
      throw IoError("checkpoint: payload length of '" + name + "' does not match its shape " +
                    shape_str(shape));
    Tensor t = Tensor::zeros(shape);
    r.read_exact(t.ptr(), bytes, "payload of '" + name + "'");
    ck.arrays.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

void load_checkpoint_into(const std::string& path, const std::string& expected_kind,
                          const std::vector<Parameter*>& params) {
  Checkpoint ck = read_checkpoint(path);
  if (ck.kind != expected_kind)
    throw IoError("checkpoint: kind mismatch in " + path + ": file holds '" + ck.kind +
                  "', expected '" + expected_kind + "'");
  if (ck.arrays.size() != params.size())
    throw IoError("checkpoint: " + path + " holds " + std::to_string(ck.arrays.size()) +
                  " arrays, model expects " + std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& [name, tensor] = ck.arrays[i];
    if (name != params[i]->name)
      throw IoError("checkpoint: array " + std::to_string(i) + " is '" + name +
                    "', model expects '" + params[i]->name + "'");
    if (tensor.shape != params[i]->tensor.shape)
      throw IoError("checkpoint: shape of '" + name + "' is " + shape_str(tensor.shape) +
                    ", model expects " + shape_str(params[i]->tensor.shape));
    *params[i]->tensor.data = *tensor.data;
  }
}

std::string checkpoint_kind(const std::string& path) {
  Reader r(path);
  std::string kind, config;
  read_header(r, kind, config);
  return kind;
}

std::string checkpoint_config(const std::string& path) {
  Reader r(path);
  std::string kind, config;
  read_header(r, kind, config);
  return config;
}

}  // namespace stratgen
