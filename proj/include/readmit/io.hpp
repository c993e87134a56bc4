#ifndef READMIT_IO_HPP
#define READMIT_IO_HPP

#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "readmit/error.hpp"

namespace readmit {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// hashing / formatting

constexpr std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Shortest text that round-trips a double (used in CSV output).
inline std::string format_double(double v) {
  char buf[32];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

// ---------------------------------------------------------------------------
// timestamps

/// Parses ISO-8601 "YYYY-MM-DD[T| ]HH:MM[:SS[.fff]][Z|±HH:MM]" (or a bare
/// date) into UTC seconds since the epoch. Fractional seconds are dropped.
inline std::int64_t parse_iso8601(std::string_view s) {
  auto fail = [&]() -> std::int64_t {
    throw FormatError("invalid ISO-8601 timestamp '" + std::string(s) + "'");
  };
  auto digits = [&](std::size_t pos, std::size_t n) -> int {
    if (pos + n > s.size()) fail();
    int v = 0;
    for (std::size_t i = pos; i < pos + n; ++i) {
      if (s[i] < '0' || s[i] > '9') fail();
      v = v * 10 + (s[i] - '0');
    }
    return v;
  };
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') fail();
  int year = digits(0, 4), month = digits(5, 2), day = digits(8, 2);
  int hour = 0, minute = 0, second = 0;
  std::size_t pos = 10;
  if (pos < s.size()) {
    if (s[pos] != 'T' && s[pos] != ' ') fail();
    hour = digits(pos + 1, 2);
    if (pos + 3 >= s.size() || s[pos + 3] != ':') fail();
    minute = digits(pos + 4, 2);
    pos += 6;
    if (pos < s.size() && s[pos] == ':') {
      second = digits(pos + 1, 2);
      pos += 3;
      if (pos < s.size() && s[pos] == '.') {
        ++pos;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
      }
    }
  }
  std::int64_t offset = 0;
  if (pos < s.size()) {
    if (s[pos] == 'Z' && pos + 1 == s.size()) {
      ++pos;
    } else if ((s[pos] == '+' || s[pos] == '-') && pos + 6 == s.size() && s[pos + 3] == ':') {
      int sign = s[pos] == '+' ? 1 : -1;
      offset = sign * (digits(pos + 1, 2) * 3600 + digits(pos + 4, 2) * 60);
      pos += 6;
    } else {
      fail();
    }
  }
  using namespace std::chrono;
  year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
                     std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok() || hour > 23 || minute > 59 || second > 60) fail();
  std::int64_t days = sys_days{ymd}.time_since_epoch().count();
  return days * 86400 + hour * 3600 + minute * 60 + second - offset;
}

/// Formats UTC seconds as "YYYY-MM-DDTHH:MM:SSZ".
inline std::string format_iso8601(std::int64_t seconds) {
  using namespace std::chrono;
  std::int64_t days = seconds >= 0 ? seconds / 86400 : -((-seconds + 86399) / 86400);
  std::int64_t rem = seconds - days * 86400;
  year_month_day ymd{sys_days{std::chrono::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(rem / 3600), static_cast<int>(rem % 3600 / 60),
                static_cast<int>(rem % 60));
  return buf;
}

// ---------------------------------------------------------------------------
// text files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PathError("cannot write '" + path.string() + "'");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw PathError("write failed for '" + path.string() + "'");
}

/// Calls fn(object, line_number) for every non-blank line. Lines carrying a
/// top-level "provenance" key are metadata and skipped.
inline void for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(const json&, std::size_t)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!obj.is_object()) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected a JSON object");
    }
    if (obj.contains("provenance")) continue;
    try {
      fn(obj, lineno);
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// little-endian binary streams

class BinaryWriter {
 public:
  void bytes(std::string_view b) { buf_.append(b); }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
    auto bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf_.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
    }
  }

  template <typename T>
  void put_array(std::span<const T> values) {
    for (const T& v : values) put(v);
  }

  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class BinaryReader {
 public:
  BinaryReader(std::string data, std::string source)
      : data_(std::move(data)), source_(std::move(source)) {}

  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view v(data_.data() + pos_, n);
    pos_ += n;
    return v;
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
    need(sizeof(T));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i));
    }
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }

  template <typename T>
  void get_array(std::span<T> out) {
    for (T& v : out) v = get<T>();
  }

  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& source() const { return source_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError(source_ + ": unexpected end of file");
  }

  std::string data_;
  std::string source_;
  std::size_t pos_ = 0;
};

/// Common binary container: 4-byte magic, u16 version, u32 header length,
/// JSON header. The payload follows.
inline void write_container_header(BinaryWriter& w, std::string_view magic, std::uint16_t version,
                                   const json& header) {
  w.bytes(magic);
  w.put<std::uint16_t>(version);
  std::string text = header.dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
}

inline json read_container_header(BinaryReader& r, std::string_view magic, std::uint16_t version) {
  if (r.bytes(4) != magic) {
    throw FormatError(r.source() + ": bad magic, expected '" + std::string(magic) + "'");
  }
  auto v = r.get<std::uint16_t>();
  if (v != version) {
    throw FormatError(r.source() + ": unsupported version " + std::to_string(v) + " (expected " +
                      std::to_string(version) + ")");
  }
  auto len = r.get<std::uint32_t>();
  try {
    return json::parse(r.bytes(len));
  } catch (const json::exception& e) {
    throw FormatError(r.source() + ": corrupt header: " + e.what());
  }
}

}  // namespace readmit

#endif  // READMIT_IO_HPP
