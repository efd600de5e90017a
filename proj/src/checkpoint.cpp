#include "t2i/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace t2i {

namespace {

constexpr char kMagic[8] = {'T', '2', 'I', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <class U>
  void pod(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(U));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}
  template <class U>
  U pod() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, buf.data() + pos, sizeof(U));
    pos += sizeof(U);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint truncated at byte " + std::to_string(pos));
  }
  bool done() const { return pos == buf.size(); }

 private:
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
};

}  // namespace

std::int64_t Checkpoint::meta_value(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  throw std::runtime_error("checkpoint: missing metadata '" + key + "'");
}

const CheckpointGroup& Checkpoint::group(const std::string& name) const {
  for (const auto& g : groups)
    if (g.name == name) return g;
  throw std::runtime_error("checkpoint: missing parameter group '" + name + "'");
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.out.insert(w.out.end(), kMagic, kMagic + 8);
  w.pod(kCheckpointVersion);
  w.pod(c.step);
  w.pod(c.seed);
  w.pod(static_cast<std::uint32_t>(c.meta.size()));
  for (const auto& [k, v] : c.meta) {
    w.str(k);
    w.pod(v);
  }
  w.pod(static_cast<std::uint32_t>(c.groups.size()));
  for (const auto& g : c.groups) {
    w.str(g.name);
    w.pod(static_cast<std::uint8_t>(g.params.frozen() ? 1 : 0));
    w.pod(static_cast<std::uint32_t>(g.params.size()));
    for (const auto& t : g.params.tensors()) {
      w.str(t.name);
      w.pod(static_cast<std::uint32_t>(t.shape.rank()));
      for (int d : t.shape.dims()) w.pod(static_cast<std::int32_t>(d));
      for (float v : t.data) w.pod(v);
    }
  }
  return std::move(w.out);
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.need(8);
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw std::runtime_error("not a checkpoint file (bad magic)");
  for (int i = 0; i < 8; ++i) r.pod<char>();
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.step = r.pod<std::uint64_t>();
  c.seed = r.pod<std::uint64_t>();
  const auto nmeta = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str();
    c.meta.emplace_back(std::move(k), r.pod<std::int64_t>());
  }
  const auto ngroups = r.pod<std::uint32_t>();
  for (std::uint32_t gi = 0; gi < ngroups; ++gi) {
    CheckpointGroup g;
    g.name = r.str();
    const bool frozen = r.pod<std::uint8_t>() != 0;
    const auto ntensors = r.pod<std::uint32_t>();
    for (std::uint32_t ti = 0; ti < ntensors; ++ti) {
      std::string name = r.str();
      const auto rank = r.pod<std::uint32_t>();
      if (rank > 8) throw std::runtime_error("checkpoint: implausible rank for " + name);
      std::vector<int> dims;
      for (std::uint32_t k = 0; k < rank; ++k) {
        const auto d = r.pod<std::int32_t>();
        if (d <= 0) throw std::runtime_error("checkpoint: bad dimension for " + name);
        dims.push_back(d);
      }
      Shape shape(std::move(dims));
      r.need(shape.numel() * sizeof(float));
      std::vector<float> data(shape.numel());
      for (auto& v : data) v = r.pod<float>();
      g.params.add(std::move(name), std::move(shape), std::move(data));
    }
    if (frozen) g.params.freeze();
    c.groups.push_back(std::move(g));
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace t2i
