#include "bssard/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace bssard {

namespace fs = std::filesystem;

namespace {

void put(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string buf) : buf_(std::move(buf)) {}

  std::uint64_t get(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw Error(ErrorCode::kCheckpointCorrupt, "truncated checkpoint");
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedTable* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tables) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  for (const auto& t : tables) {
    if (t.name.rfind(prefix, 0) == 0) return true;
  }
  return false;
}

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  std::string buf = "BSCK";
  put(buf, kCheckpointVersion, 2);
  const std::string header = ckpt.meta.dump();
  put(buf, header.size(), 4);
  buf += header;
  put(buf, ckpt.tables.size(), 4);
  for (const auto& t : ckpt.tables) {
    put(buf, t.name.size(), 2);
    buf += t.name;
    put(buf, t.shape.size(), 1);
    std::size_t count = 1;
    for (auto d : t.shape) {
      put(buf, d, 4);
      count *= d;
    }
    if (count != t.data.size()) throw Error(ErrorCode::kShapeMismatch, "table " + t.name + " size");
    for (float f : t.data) {
      std::uint32_t bits = 0;
      std::memcpy(&bits, &f, sizeof(bits));
      put(buf, bits, 4);
    }
  }
  // Write-then-rename so a crash never leaves a half-written checkpoint behind.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error(ErrorCode::kIo, "short write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "rename to " + path.string() + ": " + ec.message());
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str());
  if (r.bytes(4) != "BSCK") throw Error(ErrorCode::kCheckpointCorrupt, "bad magic in " + path.string());
  const auto version = r.get(2);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kUnknownVersion, "checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto header_len = r.get(4);
  try {
    ckpt.meta = nlohmann::json::parse(r.bytes(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCheckpointCorrupt, std::string("header: ") + e.what());
  }
  const auto count = r.get(4);
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTable t;
    t.name = r.bytes(r.get(2));
    const auto rank = r.get(1);
    std::size_t n = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      t.shape.push_back(static_cast<std::uint32_t>(r.get(4)));
      n *= t.shape.back();
    }
    t.data.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const auto bits = static_cast<std::uint32_t>(r.get(4));
      std::memcpy(&t.data[k], &bits, sizeof(float));
    }
    ckpt.tables.push_back(std::move(t));
  }
  if (!r.done()) throw Error(ErrorCode::kCheckpointCorrupt, "trailing bytes in " + path.string());
  return ckpt;
}

}  // namespace bssard
