#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ofaprune/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ofp {

inline constexpr const char* kToolName = "ofaprune";
inline constexpr int kFormatVersion = 1;

// Keeps large activation buffers in the heap instead of fresh mmaps, which
// otherwise dominate run time with page faults. No-op outside glibc.
inline void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

// 64-bit FNV-1a, used for dataset checksums and architecture hashes.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Fixed-precision decimal rendering so CSV artifacts are byte-stable.
inline std::string fmt_real(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Minimal CSV emitter: every file starts with a version comment line followed
// by the header row.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::string_view artifact, const std::vector<std::string>& header)
      : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw Error("cannot open " + path.string() + " for writing");
    out_ << "# " << kToolName << " " << artifact << " v" << kFormatVersion << '\n';
    row(header);
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

}  // namespace ofp
