#include "smartmat/wire.hpp"

#include <algorithm>
#include <set>
#include <string>

namespace smartmat::wire {

std::uint16_t crc16_ccitt_false(std::span<const std::uint8_t> bytes) noexcept {
    std::uint16_t crc = 0xFFFF;
    for (std::uint8_t b : bytes) {
        crc ^= static_cast<std::uint16_t>(b) << 8;
        for (int k = 0; k < 8; ++k)
            crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021)
                                 : static_cast<std::uint16_t>(crc << 1);
    }
    return crc;
}

// ---------------------------------------------------------------------------

MuxMap MuxMap::identity(std::size_t electrodes) {
    std::vector<MuxChannel> ordering(electrodes);
    for (std::size_t e = 0; e < electrodes; ++e)
        ordering[e] = {e / kChannelsPerMux, static_cast<std::uint8_t>(e % kChannelsPerMux)};
    return MuxMap(std::move(ordering));
}

MuxMap::MuxMap(std::vector<MuxChannel> ordering) : ordering_(std::move(ordering)) {
    std::set<std::pair<std::size_t, unsigned>> seen;
    for (const auto& mc : ordering_) {
        if (mc.channel >= kChannelsPerMux)
            throw InvalidInput("mux map: channel index must fit in 4 select bits");
        if (!seen.emplace(mc.mux, mc.channel).second)
            throw InvalidInput("mux map: two electrodes share a mux channel");
    }
}

std::size_t MuxMap::mux_count() const noexcept {
    std::size_t top = 0;
    for (const auto& mc : ordering_) top = std::max(top, mc.mux + 1);
    return top;
}

std::vector<MuxStep> mux_schedule(const MatGeometry& geometry, const MuxMap& map) {
    geometry.validate();
    if (map.electrodes() != geometry.cols)
        throw InvalidInput("mux_schedule: map covers " + std::to_string(map.electrodes()) +
                           " electrodes, geometry has " + std::to_string(geometry.cols));
    std::vector<MuxStep> steps;
    steps.reserve(geometry.cols);
    for (std::size_t e = 0; e < geometry.cols; ++e) steps.push_back({map[e].mux, map[e].channel, e});
    std::sort(steps.begin(), steps.end(), [](const MuxStep& a, const MuxStep& b) {
        return a.mux != b.mux ? a.mux < b.mux : a.select < b.select;
    });
    return steps;
}

// ---------------------------------------------------------------------------

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

std::uint16_t get_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
           std::uint32_t(p[3]) << 24;
}

}  // namespace

void append_frame(std::vector<std::uint8_t>& out, const RawFrame& frame,
                  const MatGeometry& geometry) {
    if (geometry.rows > 255 || geometry.cols > 255)
        throw InvalidInput("encode_frame: rows and cols must fit in one byte");
    if (!frame.counts.same_shape(geometry.rows, geometry.cols))
        throw InvalidInput("encode_frame: frame does not match geometry");

    const std::size_t start = out.size();
    out.reserve(start + frame_size(geometry.rows, geometry.cols));
    out.push_back(kMagic0);
    out.push_back(kMagic1);
    out.push_back(kVersion);
    out.push_back(static_cast<std::uint8_t>(geometry.rows));
    out.push_back(static_cast<std::uint8_t>(geometry.cols));
    put_u32(out, frame.sequence);
    put_u32(out, frame.timestamp_ms);
    for (auto c : frame.counts) put_u16(out, c);
    put_u16(out, crc16_ccitt_false(std::span(out).subspan(start)));
}

std::vector<std::uint8_t> encode_frame(const RawFrame& frame, const MatGeometry& geometry) {
    std::vector<std::uint8_t> out;
    append_frame(out, frame, geometry);
    return out;
}

const char* diagnostic_name(DiagnosticKind kind) noexcept {
    switch (kind) {
        case DiagnosticKind::ok: return "ok";
        case DiagnosticKind::resync: return "resync";
        case DiagnosticKind::bad_checksum_skipped: return "bad_checksum_skipped";
        case DiagnosticKind::bad_header_skipped: return "bad_header_skipped";
        case DiagnosticKind::truncated_tail: return "truncated_tail";
    }
    return "?";
}

// ---------------------------------------------------------------------------

StreamDecoder::Step StreamDecoder::try_frame(Output& out) {
    const std::size_t avail = buf_.size() - pos_;
    const std::uint8_t* p = buf_.data() + pos_;
    if (avail < 1) return Step::need_more;
    if (p[0] != kMagic0) return Step::skip;
    if (avail < 2) return Step::need_more;
    if (p[1] != kMagic1) return Step::skip;
    if (avail < kHeaderSize) return Step::need_more;

    const std::size_t rows = p[3], cols = p[4];
    if (p[2] != kVersion || rows == 0 || cols == 0 || rows * cols > kMaxCells) {
        out.diagnostics.push_back({DiagnosticKind::bad_header_skipped, consumed(), 1, 0});
        return Step::skip;
    }
    const std::size_t size = frame_size(rows, cols);
    if (avail < size) return Step::need_more;

    const std::size_t body = size - kChecksumSize;
    if (crc16_ccitt_false(std::span(p, body)) != get_u16(p + body)) {
        out.diagnostics.push_back({DiagnosticKind::bad_checksum_skipped, consumed(), 1, 0});
        return Step::skip;
    }

    flush_resync(out);
    DecodedFrame df;
    df.rows = static_cast<std::uint8_t>(rows);
    df.cols = static_cast<std::uint8_t>(cols);
    df.frame.sequence = get_u32(p + 5);
    df.frame.timestamp_ms = get_u32(p + 9);
    df.frame.counts = Grid<std::uint16_t>(rows, cols);
    for (std::size_t k = 0; k < rows * cols; ++k)
        df.frame.counts.data()[k] = get_u16(p + kHeaderSize + 2 * k);
    out.diagnostics.push_back({DiagnosticKind::ok, consumed(), size, df.frame.sequence});
    out.frames.push_back(std::move(df));
    pos_ += size;
    return Step::frame;
}

void StreamDecoder::skip_byte() {
    if (skip_len_ == 0) skip_start_ = consumed();
    ++skip_len_;
    ++pos_;
}

void StreamDecoder::flush_resync(Output& out) {
    if (skip_len_ == 0) return;
    out.diagnostics.push_back({DiagnosticKind::resync, skip_start_, skip_len_, 0});
    skip_len_ = 0;
}

void StreamDecoder::compact() {
    if (pos_ == 0) return;
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    base_offset_ += pos_;
    pos_ = 0;
}

void StreamDecoder::feed(std::span<const std::uint8_t> bytes, Output& out) {
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
    while (true) {
        const Step step = try_frame(out);
        if (step == Step::need_more) break;
        if (step == Step::skip) skip_byte();
    }
    compact();
}

void StreamDecoder::finish(Output& out) {
    // Anything still buffered is an incomplete candidate; keep scanning past it
    // so a frame hiding behind a false header is not lost.
    std::uint64_t pending_tail = 0;
    std::uint64_t tail_offset = 0;
    while (pos_ < buf_.size()) {
        const Step step = try_frame(out);
        if (step == Step::frame) {
            pending_tail = 0;
            continue;
        }
        if (step == Step::need_more && pending_tail == 0) {
            tail_offset = consumed();
            pending_tail = buf_.size() - pos_;
        }
        skip_byte();
    }
    if (pending_tail > 0) {
        // Bytes before the truncated candidate are reported as a resync run.
        if (skip_len_ > pending_tail) {
            out.diagnostics.push_back(
                {DiagnosticKind::resync, skip_start_, skip_len_ - pending_tail, 0});
        }
        skip_len_ = 0;
        out.diagnostics.push_back({DiagnosticKind::truncated_tail, tail_offset, pending_tail, 0});
    } else {
        flush_resync(out);
    }
    compact();
}

StreamDecoder::Output decode_stream(std::span<const std::uint8_t> bytes) {
    StreamDecoder dec;
    StreamDecoder::Output out;
    dec.feed(bytes, out);
    dec.finish(out);
    return out;
}

}  // namespace smartmat::wire
