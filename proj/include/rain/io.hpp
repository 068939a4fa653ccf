#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "rain/core.hpp"
#include "rain/stream.hpp"

namespace rain {

inline constexpr std::array<char, 4> kFrameMagic{'R', 'A', 'I', 'N'};
inline constexpr std::uint32_t kFrameVersion = 1;

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
  static_assert(std::is_unsigned_v<U>);
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, sizeof(U));
}

template <class U>
U get_le(std::istream& is) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw Error("frame file truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace detail

/// Binary frame stream: "RAIN", u32 version, u32 d, u64 count, then
/// count * d little-endian float32. The count is patched on close.
class FrameFileWriter {
 public:
  FrameFileWriter(const std::string& path, std::uint32_t d) : out_(path, std::ios::binary | std::ios::trunc), d_(d) {
    if (!out_) throw Error("cannot open " + path + " for writing");
    out_.write(kFrameMagic.data(), 4);
    detail::put_le(out_, kFrameVersion);
    detail::put_le(out_, d_);
    detail::put_le(out_, std::uint64_t{0});
  }
  FrameFileWriter(const FrameFileWriter&) = delete;
  FrameFileWriter& operator=(const FrameFileWriter&) = delete;
  ~FrameFileWriter() {
    try {
      close();
    } catch (...) {
    }
  }

  void write(const Frame& f) {
    if (f.size() != static_cast<Eigen::Index>(d_)) throw ShapeError("frame dimension mismatch on write");
    for (Eigen::Index j = 0; j < f.size(); ++j)
      detail::put_le(out_, std::bit_cast<std::uint32_t>(static_cast<float>(f[j])));
    ++count_;
  }

  void close() {
    if (!out_.is_open()) return;
    out_.seekp(12);
    detail::put_le(out_, count_);
    out_.close();
    if (out_.fail()) throw Error("failed to finish frame file");
  }

  std::uint64_t count() const { return count_; }

 private:
  std::ofstream out_;
  std::uint32_t d_;
  std::uint64_t count_ = 0;
};

inline std::vector<Frame> read_frame_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kFrameMagic) throw Error(path + ": not a frame file");
  const auto version = detail::get_le<std::uint32_t>(in);
  if (version != kFrameVersion) throw Error(path + ": unsupported frame file version " + std::to_string(version));
  const auto d = detail::get_le<std::uint32_t>(in);
  const auto count = detail::get_le<std::uint64_t>(in);
  std::vector<Frame> frames(count, Frame(d));
  for (auto& f : frames)
    for (std::uint32_t j = 0; j < d; ++j) f[j] = std::bit_cast<float>(detail::get_le<std::uint32_t>(in));
  return frames;
}

inline void write_frames_csv(std::ostream& os, const std::vector<Frame>& frames) {
  const Eigen::Index d = frames.empty() ? 0 : frames.front().size();
  os << "index";
  for (Eigen::Index j = 0; j < d; ++j) os << ",x" << j;
  os << '\n' << std::setprecision(std::numeric_limits<float>::max_digits10);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    os << i;
    for (Eigen::Index j = 0; j < d; ++j) os << ',' << static_cast<float>(frames[i][j]);
    os << '\n';
  }
}

inline void write_step_ndjson(std::ostream& os, const StepRecord& r) {
  os << "{\"iteration\":" << r.iteration << ",\"pile_len\":" << r.pile_len << ",\"popped\":" << r.popped
     << ",\"t0\":" << r.t0 << ",\"step_wall_nanos\":" << r.step_wall_nanos
     << ",\"denoiser_nanos\":" << r.denoiser_nanos << "}\n";
}

}  // namespace rain
