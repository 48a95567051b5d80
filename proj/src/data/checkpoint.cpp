#include "ninv/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <fstream>
#include <sstream>

namespace ninv {

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw ConsistencyError("checkpoint has no tensor named '" + name + "'");
}

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_string(std::vector<unsigned char>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

std::uint32_t crc_of(const unsigned char* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

class Reader {
 public:
  Reader(const std::vector<unsigned char>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw FormatError("truncated checkpoint payload");
  }

  const std::vector<unsigned char>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::string full_descriptor(const Checkpoint& ckpt) {
  std::string d = ckpt.architecture;
  d += " seed=" + std::to_string(ckpt.seed);
  for (const auto& [k, v] : ckpt.metadata) {
    if (k.find_first_of(" =") != std::string::npos || v.find(' ') != std::string::npos || v.empty()) {
      throw ContractError("checkpoint metadata '" + k + "' must be a non-empty token without spaces");
    }
    d += " meta." + k + "=" + v;
  }
  return d;
}

}  // namespace

std::map<std::string, std::string> parse_descriptor(const std::string& descriptor) {
  std::map<std::string, std::string> fields;
  std::istringstream in(descriptor);
  std::string token;
  bool first = true;
  while (in >> token) {
    const auto eq = token.find('=');
    if (first && eq == std::string::npos) {
      fields[""] = token;
    } else if (eq == std::string::npos || eq == 0) {
      throw FormatError("malformed descriptor token '" + token + "'");
    } else {
      fields[token.substr(0, eq)] = token.substr(eq + 1);
    }
    first = false;
  }
  return fields;
}

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<unsigned char> out = {'N', 'I', 'N', 'V'};
  put_u32(out, ckpt.version);
  put_string(out, full_descriptor(ckpt));
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    put_string(out, t.name);
    put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
    for (auto d : t.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  put_u32(out, crc_of(out.data(), out.size()));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4 || bytes[0] != 'N' || bytes[1] != 'I' || bytes[2] != 'N' || bytes[3] != 'V') {
    throw CheckpointMagicError("not a checkpoint: magic bytes do not read NINV");
  }
  if (bytes.size() < 12) throw FormatError("truncated checkpoint");
  const std::size_t body = bytes.size() - 4;
  Checkpoint ckpt;
  {
    Reader r(bytes, body);
    r.u32();  // magic
    ckpt.version = r.u32();
  }
  if (ckpt.version != kCheckpointVersion) {
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= std::uint32_t{bytes[body + i]} << (8 * i);
  if (stored != crc_of(bytes.data(), body)) throw CheckpointCrcError("checkpoint CRC32 mismatch");

  Reader r(bytes, body);
  r.u32();
  r.u32();
  std::istringstream tokens(r.str());
  std::string token, arch;
  while (tokens >> token) {
    if (token.rfind("seed=", 0) == 0) {
      ckpt.seed = std::stoull(token.substr(5));
    } else if (token.rfind("meta.", 0) == 0 && token.find('=') != std::string::npos) {
      const auto eq = token.find('=');
      ckpt.metadata[token.substr(5, eq - 5)] = token.substr(eq + 1);
    } else {
      arch += (arch.empty() ? "" : " ") + token;
    }
  }
  ckpt.architecture = arch;

  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str();
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    std::vector<float> values(shape_numel(shape));
    for (auto& v : values) v = std::bit_cast<float>(r.u32());
    t.value = Tensor(shape, std::move(values));
    ckpt.tensors.push_back(std::move(t));
  }
  if (r.pos() != body) throw FormatError("trailing bytes after checkpoint tensors");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  return decode_checkpoint(bytes);
}

}  // namespace ninv
