#include <cstring>
#include <fstream>
#include <limits>

#include "lotnext/error.hpp"
#include "lotnext/train.hpp"

namespace lotnext {

namespace {

constexpr char kMagic[12] = {'L', 'O', 'T', 'N', 'E', 'X', 'T', '-', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}

  template <typename T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}

  template <typename T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) corrupt();
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (1u << 20)) corrupt();
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) corrupt();
    return s;
  }
  [[noreturn]] void corrupt() const { throw CheckpointError("corrupt or truncated checkpoint: " + path_); }

 private:
  std::ifstream& in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  static_assert(std::numeric_limits<double>::is_iec559);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write checkpoint " + path.string());
  Writer w(f);
  f.write(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(ckpt.version);
  w.pod<std::uint64_t>(ckpt.config.size());
  for (const auto& [k, v] : ckpt.config) {
    w.str(k);
    w.str(v);
  }
  w.pod<std::uint64_t>(ckpt.user_digest);
  w.pod<std::uint64_t>(ckpt.poi_digest);
  w.pod<std::int32_t>(ckpt.epoch);
  w.pod<std::int32_t>(ckpt.n_users);
  w.pod<std::int32_t>(ckpt.n_pois);
  w.pod<std::uint64_t>(ckpt.arrays.size());
  for (const auto& [name, m] : ckpt.arrays) {
    w.str(name);
    w.pod<std::int64_t>(m.rows());
    w.pod<std::int64_t>(m.cols());
    f.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!f) throw CheckpointError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError("checkpoint not found: " + path.string());
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot read checkpoint " + path.string());
  Reader r(f, path.string());

  char magic[sizeof(kMagic)] = {};
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a lotnext checkpoint: " + path.string());
  }
  Checkpoint c;
  c.version = r.pod<std::uint32_t>();
  if (c.version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(c.version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto n_config = r.pod<std::uint64_t>();
  if (n_config > 10000) r.corrupt();
  for (std::uint64_t i = 0; i < n_config; ++i) {
    auto k = r.str();
    auto v = r.str();
    c.config.emplace_back(std::move(k), std::move(v));
  }
  c.user_digest = r.pod<std::uint64_t>();
  c.poi_digest = r.pod<std::uint64_t>();
  c.epoch = r.pod<std::int32_t>();
  c.n_users = r.pod<std::int32_t>();
  c.n_pois = r.pod<std::int32_t>();
  const auto n_arrays = r.pod<std::uint64_t>();
  if (n_arrays > 100000) r.corrupt();
  for (std::uint64_t i = 0; i < n_arrays; ++i) {
    auto name = r.str();
    const auto rows = r.pod<std::int64_t>();
    const auto cols = r.pod<std::int64_t>();
    if (rows < 0 || cols < 0 || rows * cols > (std::int64_t{1} << 32)) r.corrupt();
    Matrix m(rows, cols);
    f.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!f) r.corrupt();
    c.arrays.emplace_back(std::move(name), std::move(m));
  }
  if (f.peek() != std::char_traits<char>::eof()) r.corrupt();
  return c;
}

void verify_vocabulary(const Checkpoint& ckpt, const Dataset& ds) {
  if (ckpt.n_users != ds.n_users() || ckpt.user_digest != ds.users.digest()) {
    throw CheckpointError("user vocabulary differs from the one the checkpoint was trained on");
  }
  if (ckpt.n_pois != ds.n_pois() || ckpt.poi_digest != ds.pois.digest()) {
    throw CheckpointError("poi vocabulary differs from the one the checkpoint was trained on");
  }
}

}  // namespace lotnext
