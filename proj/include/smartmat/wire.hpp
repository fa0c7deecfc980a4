// Microcontroller link layer.
//
// Frame layout (all multi-byte fields little-endian):
//
//   offset  size  field
//   0       2     magic 0x4D 0x54 ("MT")
//   2       1     version (1)
//   3       1     rows
//   4       1     cols
//   5       4     sequence
//   9       4     timestamp_ms
//   13      2*N   counts, row-major, N = rows * cols
//   13+2N   2     CRC-16/CCITT-FALSE over bytes [0, 13 + 2N)
#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <span>
#include <vector>

#include "smartmat/core.hpp"

namespace smartmat::wire {

inline constexpr std::uint8_t kMagic0 = 0x4D;
inline constexpr std::uint8_t kMagic1 = 0x54;
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 13;
inline constexpr std::size_t kChecksumSize = 2;

constexpr std::size_t frame_size(std::size_t rows, std::size_t cols) noexcept {
    return kHeaderSize + 2 * rows * cols + kChecksumSize;
}

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout.
std::uint16_t crc16_ccitt_false(std::span<const std::uint8_t> bytes) noexcept;

// ---------------------------------------------------------------------------
// Multiplexer mapping

struct MuxChannel {
    std::size_t mux = 0;
    std::uint8_t channel = 0;  // 0..15, the 4 select lines
    friend bool operator==(const MuxChannel&, const MuxChannel&) = default;
};

/// Maps electrode index -> (mux, channel) for 16-channel multiplexers.
class MuxMap {
public:
    static constexpr std::size_t kChannelsPerMux = 16;
    static constexpr unsigned kSelectBits = 4;

    /// Electrode e -> (e / 16, e % 16).
    static MuxMap identity(std::size_t electrodes);
    /// Throws InvalidInput unless `ordering` is injective with channels < 16.
    explicit MuxMap(std::vector<MuxChannel> ordering);

    std::size_t electrodes() const noexcept { return ordering_.size(); }
    const MuxChannel& operator[](std::size_t electrode) const { return ordering_.at(electrode); }
    std::size_t mux_count() const noexcept;

private:
    std::vector<MuxChannel> ordering_;
};

struct MuxStep {
    std::size_t mux = 0;
    std::uint8_t select = 0;
    std::size_t electrode = 0;
    friend bool operator==(const MuxStep&, const MuxStep&) = default;
};

/// Column read order for one driven row: multiplexers in turn, select lines
/// 0..15 within each. Throws InvalidInput when the map does not cover exactly
/// geometry.cols electrodes.
std::vector<MuxStep> mux_schedule(const MatGeometry& geometry, const MuxMap& map);

// ---------------------------------------------------------------------------
// Codec

/// Throws InvalidInput when the frame does not match the geometry or the
/// geometry exceeds 255 rows/cols.
std::vector<std::uint8_t> encode_frame(const RawFrame& frame, const MatGeometry& geometry);
void append_frame(std::vector<std::uint8_t>& out, const RawFrame& frame,
                  const MatGeometry& geometry);

enum class DiagnosticKind { ok, resync, bad_checksum_skipped, bad_header_skipped, truncated_tail };

const char* diagnostic_name(DiagnosticKind kind) noexcept;

struct Diagnostic {
    DiagnosticKind kind = DiagnosticKind::ok;
    std::uint64_t offset = 0;  // stream offset where the event starts
    std::uint64_t bytes = 0;   // bytes consumed (frame size or skipped run)
    std::uint32_t sequence = 0;  // ok frames only
};

struct DecodedFrame {
    std::uint8_t rows = 0;
    std::uint8_t cols = 0;
    RawFrame frame;
};

/// Incremental decoder. Feed arbitrary chunks; intact frames come out in
/// order and malformed data only produces diagnostics. Owned by one consumer.
class StreamDecoder {
public:
    struct Output {
        std::vector<DecodedFrame> frames;
        std::vector<Diagnostic> diagnostics;
    };

    void feed(std::span<const std::uint8_t> bytes, Output& out);
    /// Drains what is left at end of stream.
    void finish(Output& out);

    std::uint64_t consumed() const noexcept { return base_offset_ + pos_; }

private:
    enum class Step { frame, need_more, skip };
    Step try_frame(Output& out);
    void skip_byte();
    void flush_resync(Output& out);
    void compact();

    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
    std::uint64_t base_offset_ = 0;
    std::uint64_t skip_start_ = 0;
    std::uint64_t skip_len_ = 0;
};

/// Decodes a complete byte sequence.
StreamDecoder::Output decode_stream(std::span<const std::uint8_t> bytes);

}  // namespace smartmat::wire
