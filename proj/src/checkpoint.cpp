#include "mmtod/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mmtod {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
uint32_t read_u32(std::istream& is) {
  uint32_t v;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
uint64_t read_u64(std::istream& is) {
  uint64_t v;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::string read_str(std::istream& is) {
  uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}

}  // namespace

void save_checkpoint_file(const Checkpoint& ck, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kMagic, 4);
  write_u32(f, kVersion);
  write_str(f, ck.kind);
  write_u64(f, ck.config_hash);
  write_str(f, ck.meta.dump());
  write_u32(f, static_cast<uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    write_str(f, name);
    write_u32(f, static_cast<uint32_t>(t.ndim()));
    for (int d : t.shape()) write_u32(f, static_cast<uint32_t>(d));
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint_file(const std::string& path, const std::string& expected_kind) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  uint32_t version = read_u32(f);
  if (version != kVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " +
                             std::to_string(version) + " in " + path);
  Checkpoint ck;
  ck.kind = read_str(f);
  if (!expected_kind.empty() && ck.kind != expected_kind)
    throw std::runtime_error("load_checkpoint: " + path + " holds a '" + ck.kind +
                             "' checkpoint, expected '" + expected_kind + "'");
  ck.config_hash = read_u64(f);
  ck.meta = nlohmann::json::parse(read_str(f));
  uint32_t n = read_u32(f);
  for (uint32_t i = 0; i < n; ++i) {
    std::string name = read_str(f);
    uint32_t ndim = read_u32(f);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_u32(f));
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(double)));
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  if (!f) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return ck;
}

void pack_params(Checkpoint& ck, const std::string& prefix, const ParamList& params) {
  for (const auto* p : params) ck.tensors[prefix + "/" + p->name] = p->value;
}

void unpack_params(const Checkpoint& ck, const std::string& prefix, const ParamList& params) {
  for (auto* p : params) {
    auto it = ck.tensors.find(prefix + "/" + p->name);
    if (it == ck.tensors.end())
      throw std::runtime_error("checkpoint missing tensor " + prefix + "/" + p->name);
    if (it->second.shape() != p->value.shape())
      throw std::runtime_error("checkpoint tensor shape mismatch for " + prefix + "/" +
                               p->name);
    p->value = it->second;
  }
}

void pack_state(Checkpoint& ck, const std::string& prefix,
                const std::map<std::string, Tensor>& state) {
  for (const auto& [name, t] : state) ck.tensors[prefix + "/" + name] = t;
}

void unpack_state(const Checkpoint& ck, const std::string& prefix,
                  std::map<std::string, Tensor>& state) {
  state.clear();
  std::string p = prefix + "/";
  for (const auto& [name, t] : ck.tensors)
    if (name.rfind(p, 0) == 0) state[name.substr(p.size())] = t;
}

uint64_t hash_string(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace mmtod
