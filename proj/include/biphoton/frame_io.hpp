#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace biphoton {

// One binarized ROI image, row-major, one bit per pixel, each row padded to a
// whole byte, least significant bit first.
class BitFrame {
 public:
  BitFrame() = default;
  BitFrame(int width, int height)
      : width_(width), height_(height), stride_((width + 7) / 8),
        bytes_(static_cast<std::size_t>(stride_) * static_cast<std::size_t>(height), 0) {}

  int width() const { return width_; }
  int height() const { return height_; }
  int stride() const { return stride_; }

  bool get(int x, int y) const { return (bytes_[index(y) + (x >> 3)] >> (x & 7)) & 1u; }
  void set(int x, int y) { bytes_[index(y) + (x >> 3)] |= static_cast<std::uint8_t>(1u << (x & 7)); }
  void clear() { std::fill(bytes_.begin(), bytes_.end(), std::uint8_t{0}); }

  std::span<std::uint8_t> bytes() { return bytes_; }
  std::span<const std::uint8_t> bytes() const { return bytes_; }

  // Linear pixel indices (y*width + x) of set bits, ascending.
  void lit_pixels(std::vector<std::uint32_t>& out) const;
  std::size_t lit_count() const;

  bool operator==(const BitFrame&) const = default;

 private:
  std::size_t index(int y) const { return static_cast<std::size_t>(y) * static_cast<std::size_t>(stride_); }

  int width_ = 0;
  int height_ = 0;
  int stride_ = 0;
  std::vector<std::uint8_t> bytes_;
};

inline constexpr std::size_t kFrameHeaderSize = 32;
inline constexpr std::uint16_t kFrameFormatVersion = 1;

struct FrameFileHeader {
  std::uint16_t version = kFrameFormatVersion;
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::uint64_t frame_count = 0;
  bool threshold_applied = true;

  std::size_t frame_bytes() const { return static_cast<std::size_t>((width + 7) / 8) * height; }
};

// Streams frames to a file; the frame count in the header is patched on close.
class FrameWriter {
 public:
  FrameWriter(const std::filesystem::path& path, int width, int height);
  ~FrameWriter();
  FrameWriter(const FrameWriter&) = delete;
  FrameWriter& operator=(const FrameWriter&) = delete;

  void write(const BitFrame& frame);
  void close();
  std::uint64_t frames_written() const { return count_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  int width_, height_;
  std::uint64_t count_ = 0;
  bool closed_ = false;
};

class FrameReader {
 public:
  explicit FrameReader(const std::filesystem::path& path);

  const FrameFileHeader& header() const { return header_; }
  std::uint64_t frame_count() const { return header_.frame_count; }
  std::uint64_t position() const { return next_; }

  // Reads the next frame into `frame` (resized as needed); false at the end.
  bool next(BitFrame& frame);

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  FrameFileHeader header_;
  std::uint64_t next_ = 0;
};

void encode_frame_header(const FrameFileHeader& h, std::uint8_t* out32);
FrameFileHeader decode_frame_header(const std::uint8_t* in32, const std::string& source);

}  // namespace biphoton
