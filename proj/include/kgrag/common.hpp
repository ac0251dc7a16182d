#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kgrag {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A document did not follow its file format; line is 1-based (0 when unknown).
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t line = 0)
        : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Binary snapshot problems: bad magic/version, checksum mismatch, truncation.
class IntegrityError : public Error {
public:
    using Error::Error;
};

using StringMap = std::map<std::string, std::string>;

// ---------------------------------------------------------------------------
// Hashing

std::string sha256_hex(std::string_view data);
std::uint32_t crc32(std::span<const std::uint8_t> data);
std::uint32_t crc32(std::string_view data);

/// Short content-derived identifier: prefix + first `hex_chars` of sha256.
std::string stable_id(std::string_view prefix, std::string_view content, std::size_t hex_chars = 16);

std::uint64_t fnv1a64(std::string_view data);

// ---------------------------------------------------------------------------
// Text helpers

std::string_view trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
bool starts_with_ci(std::string_view s, std::string_view prefix);
bool iequals(std::string_view a, std::string_view b);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

bool is_valid_utf8(std::string_view s);
/// Replaces invalid UTF-8 sequences with U+FFFD; returns the number of bytes replaced.
std::size_t sanitize_utf8(std::string_view in, std::string& out);
/// Byte length of the UTF-8 sequence starting at s[i] (1 for invalid lead bytes).
std::size_t utf8_seq_len(std::string_view s, std::size_t i);
/// Splits into code points (byte slices); invalid bytes become single-byte slices.
std::vector<std::string_view> utf8_code_points(std::string_view s);

/// Unicode NFC normalization followed by full case folding.
std::string casefold_nfc(std::string_view s);
/// Unicode lowercase (simple mapping), used by the trigram embedder.
std::string unicode_lower(std::string_view s);

bool is_iso8601(std::string_view s);
std::string utc_now_iso8601();

std::string hex_encode(std::string_view bytes);
std::optional<std::string> hex_decode(std::string_view hex);

/// Runs fn(i) for every i in [0, n) on up to `workers` threads. The first
/// exception thrown is rethrown once all workers have stopped.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, std::string_view data);

// ---------------------------------------------------------------------------
// Length-prefixed little-endian binary records (shared by snapshot formats)

class BinaryWriter {
public:
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void str(std::string_view s);
    void raw(std::string_view s) { buf_.append(s); }
    const std::string& data() const noexcept { return buf_; }
    /// Appends the CRC32 of everything written so far.
    std::string finish_with_crc() const;

private:
    std::string buf_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::string_view data) : data_(data) {}
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    std::string str();
    std::string_view raw(std::size_t n);
    bool at_end() const noexcept { return pos_ == data_.size(); }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

private:
    void need(std::size_t n) const;
    std::string_view data_;
    std::size_t pos_ = 0;
};

struct SnapshotBody {
    std::string_view body;
    bool checksum_ok = false;
};

/// Checks the magic line and splits off the trailing CRC32.
/// Throws IntegrityError on a foreign or different-version header.
SnapshotBody open_snapshot(std::string_view file, std::string_view magic_family, std::string_view magic);

/// Parses a snapshot body with `parse(BinaryReader&)`. A body that runs out of
/// bytes is reported as truncated; a structurally sound body with a bad CRC as a
/// checksum failure.
template <typename Parse>
auto parse_snapshot(std::string_view file, std::string_view magic_family, std::string_view magic, Parse&& parse) {
    auto snap = open_snapshot(file, magic_family, magic);
    BinaryReader reader(snap.body);
    auto result = parse(reader);
    if (!reader.at_end()) throw IntegrityError("trailing bytes in snapshot");
    if (!snap.checksum_ok) throw IntegrityError("snapshot checksum mismatch");
    return result;
}

}  // namespace kgrag
