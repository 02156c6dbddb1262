#include "biphoton/frame_io.hpp"

#include <bit>
#include <cstring>
#include <string>

#include "biphoton/errors.hpp"
#include "endian.hpp"

namespace biphoton {

using le::get;
using le::put;

void BitFrame::lit_pixels(std::vector<std::uint32_t>& out) const {
  out.clear();
  for (int y = 0; y < height_; ++y) {
    const std::uint8_t* row = bytes_.data() + index(y);
    for (int b = 0; b < stride_; ++b) {
      unsigned v = row[b];
      while (v) {
        const int bit = std::countr_zero(v);
        v &= v - 1;
        out.push_back(static_cast<std::uint32_t>(y * width_ + b * 8 + bit));
      }
    }
  }
}

std::size_t BitFrame::lit_count() const {
  std::size_t n = 0;
  for (auto b : bytes_) n += static_cast<std::size_t>(std::popcount(b));
  return n;
}

void encode_frame_header(const FrameFileHeader& h, std::uint8_t* out) {
  std::memset(out, 0, kFrameHeaderSize);
  std::memcpy(out, "PCBF", 4);
  put<std::uint16_t>(out + 4, h.version);
  put<std::uint16_t>(out + 6, h.width);
  put<std::uint16_t>(out + 8, h.height);
  put<std::uint64_t>(out + 10, h.frame_count);
  out[18] = h.threshold_applied ? 1 : 0;
}

FrameFileHeader decode_frame_header(const std::uint8_t* in, const std::string& source) {
  if (std::memcmp(in, "PCBF", 4) != 0) throw FormatError(source + ": bad frame-file magic at offset 0");
  FrameFileHeader h;
  h.version = get<std::uint16_t>(in + 4);
  if (h.version != kFrameFormatVersion)
    throw FormatError(source + ": unsupported frame-file version " + std::to_string(h.version) + " at offset 4");
  h.width = get<std::uint16_t>(in + 6);
  h.height = get<std::uint16_t>(in + 8);
  if (h.width == 0 || h.height == 0) throw FormatError(source + ": zero frame dimension at offset 6");
  h.frame_count = get<std::uint64_t>(in + 10);
  if (in[18] > 1) throw FormatError(source + ": invalid threshold flag at offset 18");
  h.threshold_applied = in[18] == 1;
  return h;
}

FrameWriter::FrameWriter(const std::filesystem::path& path, int width, int height)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc), width_(width), height_(height) {
  if (width < 1 || height < 1 || width > 65535 || height > 65535) throw DomainError("frame dimensions out of range");
  if (!out_) throw FormatError("cannot open '" + path.string() + "' for writing");
  std::uint8_t header[kFrameHeaderSize];
  encode_frame_header({kFrameFormatVersion, static_cast<std::uint16_t>(width), static_cast<std::uint16_t>(height), 0, true},
                      header);
  out_.write(reinterpret_cast<const char*>(header), kFrameHeaderSize);
}

FrameWriter::~FrameWriter() {
  try {
    close();
  } catch (...) {
  }
}

void FrameWriter::write(const BitFrame& frame) {
  if (frame.width() != width_ || frame.height() != height_)
    throw FormatError("frame " + std::to_string(count_) + " has size " + std::to_string(frame.width()) + "x" +
                      std::to_string(frame.height()) + ", expected " + std::to_string(width_) + "x" +
                      std::to_string(height_));
  out_.write(reinterpret_cast<const char*>(frame.bytes().data()), static_cast<std::streamsize>(frame.bytes().size()));
  if (!out_) throw FormatError("write failed at frame " + std::to_string(count_) + " of '" + path_.string() + "'");
  ++count_;
}

void FrameWriter::close() {
  if (closed_) return;
  closed_ = true;
  std::uint8_t count[8];
  put<std::uint64_t>(count, count_);
  out_.seekp(10);
  out_.write(reinterpret_cast<const char*>(count), 8);
  out_.close();
  if (!out_) throw FormatError("failed to finalize '" + path_.string() + "'");
}

FrameReader::FrameReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw FormatError("cannot open '" + path.string() + "'");
  std::uint8_t header[kFrameHeaderSize];
  if (!in_.read(reinterpret_cast<char*>(header), kFrameHeaderSize))
    throw FormatError(path.string() + ": truncated header (need 32 bytes at offset 0)");
  header_ = decode_frame_header(header, path.string());
  const auto size = std::filesystem::file_size(path);
  const auto expected = kFrameHeaderSize + header_.frame_bytes() * header_.frame_count;
  if (size != expected)
    throw FormatError(path.string() + ": file size " + std::to_string(size) + " does not match header (" +
                      std::to_string(header_.frame_count) + " frames, expected " + std::to_string(expected) + " bytes)");
}

bool FrameReader::next(BitFrame& frame) {
  if (next_ >= header_.frame_count) return false;
  if (frame.width() != header_.width || frame.height() != header_.height) frame = BitFrame(header_.width, header_.height);
  const auto offset = kFrameHeaderSize + header_.frame_bytes() * next_;
  if (!in_.read(reinterpret_cast<char*>(frame.bytes().data()), static_cast<std::streamsize>(frame.bytes().size())))
    throw FormatError(path_.string() + ": truncated frame " + std::to_string(next_) + " at offset " + std::to_string(offset));
  ++next_;
  return true;
}

}  // namespace biphoton
