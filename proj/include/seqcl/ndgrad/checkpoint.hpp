#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "seqcl/error.hpp"
#include "seqcl/ndgrad/param_vector.hpp"

// SEQCL-CKPT v1:
//   SEQCL-CKPT v1
//   segments <N>
//   <name> dtype=f64 shape=<d0>x<d1>     (N lines; empty shape for scalars)
//   payload <total_len>
//   <total_len little-endian f64 values>
namespace seqcl {

inline constexpr const char* kCheckpointMagic = "SEQCL-CKPT";
inline constexpr int kCheckpointVersion = 1;

namespace io {

inline void write_f64_le(std::ostream& os, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double v : values) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      char b[8];
      for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
      os.write(b, 8);
    }
  }
}

inline void read_f64_le(std::istream& is, std::span<double> out, const char* what) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size() * sizeof(double)));
    if (static_cast<std::size_t>(is.gcount()) != out.size() * sizeof(double)) {
      throw DataError(std::string(what) + ": truncated payload");
    }
  } else {
    for (auto& v : out) {
      unsigned char b[8];
      is.read(reinterpret_cast<char*>(b), 8);
      if (is.gcount() != 8) throw DataError(std::string(what) + ": truncated payload");
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
      v = std::bit_cast<double>(bits);
    }
  }
}

inline std::string read_line(std::istream& is, const char* what) {
  std::string line;
  if (!std::getline(is, line)) throw DataError(std::string(what) + ": unexpected end of file");
  return line;
}

/// Parses "<magic> v<N>" and throws VersionError for any N other than `version`.
inline void check_header(const std::string& line, const std::string& magic, int version) {
  std::istringstream ls(line);
  std::string m, v;
  ls >> m >> v;
  if (m != magic || v.size() < 2 || v[0] != 'v') throw DataError("bad header '" + line + "', expected " + magic);
  int found = 0;
  try {
    found = std::stoi(v.substr(1));
  } catch (const std::exception&) {
    throw DataError("bad version tag in header '" + line + "'");
  }
  if (found != version) {
    throw VersionError(magic + ": file version v" + std::to_string(found) + " is not supported (reader is v" +
                       std::to_string(version) + ")");
  }
}

inline Shape parse_shape(const std::string& s) {
  Shape shape;
  if (s.empty()) return shape;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto next = s.find('x', pos);
    const auto tok = s.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    try {
      shape.push_back(static_cast<std::size_t>(std::stoull(tok)));
    } catch (const std::exception&) {
      throw DataError("bad shape '" + s + "'");
    }
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return shape;
}

inline std::string format_shape(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

}  // namespace io

inline void write_checkpoint(std::ostream& os, const ParamVector& params) {
  os << kCheckpointMagic << " v" << kCheckpointVersion << "\n";
  os << "segments " << params.num_segments() << "\n";
  for (const auto& s : params.segments()) {
    if (s.name.empty() || s.name.find_first_of(" \n\t") != std::string::npos)
      throw ConfigError("checkpoint: segment name '" + s.name + "' must be non-empty without whitespace");
    os << s.name << " dtype=f64 shape=" << io::format_shape(s.value.shape()) << "\n";
  }
  os << "payload " << params.total_len() << "\n";
  for (const auto& s : params.segments()) io::write_f64_le(os, s.value.data());
  if (!os) throw DataError("checkpoint: write failed");
}

inline ParamVector read_checkpoint(std::istream& is) {
  constexpr const char* what = "checkpoint";
  io::check_header(io::read_line(is, what), kCheckpointMagic, kCheckpointVersion);
  std::istringstream sl(io::read_line(is, what));
  std::string kw;
  std::size_t n = 0;
  if (!(sl >> kw >> n) || kw != "segments") throw DataError("checkpoint: missing segment count");

  struct Record {
    std::string name;
    Shape shape;
  };
  std::vector<Record> records;
  std::size_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::istringstream ls(io::read_line(is, what));
    std::string name, dtype, shape;
    if (!(ls >> name >> dtype)) throw DataError("checkpoint: malformed segment record");
    ls >> shape;
    if (dtype != "dtype=f64") throw DataError("checkpoint: unsupported " + dtype);
    if (shape.rfind("shape=", 0) != 0) throw DataError("checkpoint: malformed shape for " + name);
    records.push_back({name, io::parse_shape(shape.substr(6))});
    total += shape_numel(records.back().shape);
  }
  std::istringstream pl(io::read_line(is, what));
  std::size_t declared = 0;
  if (!(pl >> kw >> declared) || kw != "payload") throw DataError("checkpoint: missing payload line");
  if (declared != total) {
    throw DataError("checkpoint: payload length " + std::to_string(declared) + " disagrees with segments (" +
                    std::to_string(total) + ")");
  }
  ParamVector out;
  for (auto& r : records) {
    Tensor t(r.shape, 0.0);
    io::read_f64_le(is, t.data(), what);
    out.add(std::move(r.name), std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint: trailing bytes after payload");
  return out;
}

inline void save_checkpoint(const std::string& path, const ParamVector& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_checkpoint(os, params);
}

inline ParamVector load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace seqcl
