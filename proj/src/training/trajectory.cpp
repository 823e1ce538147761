#include "bcr/training/trajectory.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace bcr::training {

namespace {

constexpr char kMagic[8] = {'B', 'C', 'R', 'T', 'R', 'A', 'J', '1'};

// Payload layout (little-endian):
//   u64 task_seed, f32 reward, u32 tag length, tag bytes,
//   u32 n_prompt, i32 prompt[n_prompt], u32 n_tokens, i32 tokens[n_tokens],
//   f32 sampled_logp[n_tokens],
//   per token: u32 k, then k x (i32 id, f32 logp)
class Buffer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  std::vector<char> bytes;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size) : data_(data), size_(size) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > size_) throw std::runtime_error("trajectory record truncated");
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    if (pos_ + n > size_) throw std::runtime_error("trajectory record truncated");
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == size_; }

 private:
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace

double Trajectory::stored_mass(std::size_t j) const {
  double m = 0.0;
  for (const auto& e : topk.at(j)) m += std::exp(static_cast<double>(e.logp));
  return m;
}

TrajectoryWriter::TrajectoryWriter(const std::filesystem::path& dir, int top_k, nlohmann::json extra)
    : dir_(dir), top_k_(top_k), extra_(std::move(extra)) {
  std::filesystem::create_directories(dir_);
  out_.open(dir_ / "trajectories.bin", std::ios::binary | std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot write " + (dir_ / "trajectories.bin").string());
  out_.write(kMagic, sizeof(kMagic));
  flush();
}

TrajectoryWriter::~TrajectoryWriter() {
  try {
    flush();
  } catch (...) {
  }
}

void TrajectoryWriter::append(const Trajectory& t) {
  if (t.topk.size() != t.tokens.size() || t.sampled_logp.size() != t.tokens.size()) {
    throw std::invalid_argument("TrajectoryWriter: per-token lists do not match the token count");
  }
  Buffer b;
  b.put<std::uint64_t>(t.task_seed);
  b.put<float>(t.reward);
  b.put<std::uint32_t>(static_cast<std::uint32_t>(t.teacher_tag.size()));
  b.bytes.insert(b.bytes.end(), t.teacher_tag.begin(), t.teacher_tag.end());
  b.put<std::uint32_t>(static_cast<std::uint32_t>(t.prompt.size()));
  for (int id : t.prompt) b.put<std::int32_t>(id);
  b.put<std::uint32_t>(static_cast<std::uint32_t>(t.tokens.size()));
  for (int id : t.tokens) b.put<std::int32_t>(id);
  for (float lp : t.sampled_logp) b.put<float>(lp);
  for (const auto& list : t.topk) {
    b.put<std::uint32_t>(static_cast<std::uint32_t>(list.size()));
    for (const auto& e : list) {
      b.put<std::int32_t>(e.id);
      b.put<float>(e.logp);
    }
  }
  const auto len = static_cast<std::uint32_t>(b.bytes.size());
  out_.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out_.write(b.bytes.data(), static_cast<std::streamsize>(b.bytes.size()));
  if (!out_) throw std::runtime_error("TrajectoryWriter: write failed");
  ++count_;
}

void TrajectoryWriter::flush() {
  out_.flush();
  nlohmann::json side = extra_.is_object() ? extra_ : nlohmann::json::object();
  side["format_version"] = kTrajectoryFormatVersion;
  side["count"] = count_;
  side["top_k"] = top_k_;
  std::ofstream s(dir_ / "trajectories.json");
  s << side.dump(1) << '\n';
}

LoadedTrajectories load_trajectories(const std::filesystem::path& dir) {
  LoadedTrajectories out;
  {
    std::ifstream s(dir / "trajectories.json");
    if (!s) throw std::runtime_error("missing " + (dir / "trajectories.json").string());
    out.manifest = nlohmann::json::parse(s);
  }
  if (out.manifest.value("format_version", -1) != kTrajectoryFormatVersion) {
    throw std::runtime_error("unsupported trajectory format version in " + dir.string());
  }
  std::ifstream in(dir / "trajectories.bin", std::ios::binary);
  if (!in) throw std::runtime_error("missing " + (dir / "trajectories.bin").string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error((dir / "trajectories.bin").string() + " is not a trajectory store");
  }
  std::uint32_t len = 0;
  while (in.read(reinterpret_cast<char*>(&len), sizeof(len))) {
    std::vector<char> buf(len);
    if (!in.read(buf.data(), len)) throw std::runtime_error("trajectory store truncated");
    Reader r(buf.data(), buf.size());
    Trajectory t;
    t.task_seed = r.get<std::uint64_t>();
    t.reward = r.get<float>();
    t.teacher_tag = r.str(r.get<std::uint32_t>());
    t.prompt.resize(r.get<std::uint32_t>());
    for (int& id : t.prompt) id = r.get<std::int32_t>();
    t.tokens.resize(r.get<std::uint32_t>());
    for (int& id : t.tokens) id = r.get<std::int32_t>();
    t.sampled_logp.resize(t.tokens.size());
    for (float& lp : t.sampled_logp) lp = r.get<float>();
    t.topk.resize(t.tokens.size());
    for (auto& list : t.topk) {
      list.resize(r.get<std::uint32_t>());
      for (auto& e : list) {
        e.id = r.get<std::int32_t>();
        e.logp = r.get<float>();
      }
    }
    if (!r.done()) throw std::runtime_error("trajectory record has trailing bytes");
    out.trajectories.push_back(std::move(t));
  }
  return out;
}

}  // namespace bcr::training
