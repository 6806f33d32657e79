#include "gawwn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace gawwn {

namespace {

constexpr std::string_view kMagic = "GAWWNCK1";

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::string_view take(std::uint64_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError("checkpoint: " + msg + " at byte offset " + std::to_string(pos_));
  }

 private:
  void need(std::uint64_t n, const char* what) const {
    if (n > remaining()) fail(std::string("truncated while reading ") + what);
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& nt : tensors)
    if (nt.name == name) return &nt.tensor;
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  std::string out(kMagic);
  put_u64(out, checkpoint.tensors.size());
  for (const auto& [name, tensor] : checkpoint.tensors) {
    put_u64(out, name.size());
    out += name;
    put_u64(out, tensor.rank());
    for (std::size_t e : tensor.shape()) put_u64(out, e);
    for (double v : tensor.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  out += checkpoint.meta.dump();
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.remaining() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic)
    in.fail("bad magic (expected GAWWNCK1)");
  in.take(kMagic.size(), "magic");
  Checkpoint ck;
  const std::uint64_t count = in.u64("tensor count");
  if (count > in.remaining()) in.fail("implausible tensor count " + std::to_string(count));
  ck.tensors.reserve(count);
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::uint64_t name_len = in.u64("name length");
    std::string name(in.take(name_len, "tensor name"));
    const std::uint64_t rank = in.u64("rank");
    if (rank == 0 || rank > 16) in.fail("invalid rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint64_t r = 0; r < rank; ++r) {
      const std::uint64_t e = in.u64("extent");
      if (e == 0 || e > in.remaining() || numel > in.remaining() / e)
        in.fail("invalid extent for tensor '" + name + "'");
      numel *= e;
      shape.push_back(e);
    }
    std::vector<double> values(numel);
    for (auto& v : values) v = std::bit_cast<double>(in.u64("tensor data"));
    ck.tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  const std::size_t trailer_at = in.offset();
  const auto trailer = in.take(in.remaining(), "metadata");
  try {
    ck.meta = nlohmann::json::parse(trailer);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint: malformed metadata trailer starting at byte offset " +
                      std::to_string(trailer_at) + ": " + e.what());
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  const std::string bytes = encode_checkpoint(checkpoint);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace gawwn
