#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "seqcl/error.hpp"
#include "seqcl/ndgrad/checkpoint.hpp"
#include "seqcl/taskforge/task.hpp"

// SEQCL-DATA v1: text header lines followed by a little-endian binary body.
//   SEQCL-DATA v1
//   kind <dataset|memory>
//   <body>
// Integers are u64, reals f64, tensors (rank, dims..., values), utterances
// length-prefixed (L, d, frames, W, tokens as u64).
namespace seqcl {

inline constexpr const char* kDataMagic = "SEQCL-DATA";
inline constexpr int kDataVersion = 1;

namespace io {

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  void u64(std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os_.write(b, 8);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void tensor(const Tensor& t) {
    u64(t.rank());
    for (auto dim : t.shape()) u64(dim);
    write_f64_le(os_, t.data());
  }
  void utterance(const Utterance& u) {
    tensor(u.frames);
    u64(u.tokens.size());
    for (int t : u.tokens) u64(static_cast<std::uint64_t>(t));
  }

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& is, const char* what) : is_(is), what_(what) {}

  std::uint64_t u64() {
    unsigned char b[8];
    is_.read(reinterpret_cast<char*>(b), 8);
    if (is_.gcount() != 8) throw DataError(std::string(what_) + ": truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t count(std::uint64_t limit = (1ULL << 32)) {
    const auto v = u64();
    if (v > limit) throw DataError(std::string(what_) + ": implausible length field " + std::to_string(v));
    return static_cast<std::size_t>(v);
  }
  Tensor tensor() {
    const auto rank = count(8);
    Shape shape(rank);
    for (auto& dim : shape) dim = count();
    if (shape_numel(shape) > (1ULL << 28)) throw DataError(std::string(what_) + ": implausible tensor size");
    Tensor t(shape, 0.0);
    read_f64_le(is_, t.data(), what_);
    return t;
  }
  Utterance utterance() {
    Utterance u;
    u.frames = tensor();
    const auto w = count(1 << 20);
    u.tokens.resize(w);
    for (auto& t : u.tokens) t = static_cast<int>(count(1 << 20));
    return u;
  }
  void expect_end() {
    if (is_.peek() != std::char_traits<char>::eof()) throw DataError(std::string(what_) + ": trailing bytes");
  }

 private:
  std::istream& is_;
  const char* what_;
};

inline void write_data_header(std::ostream& os, const std::string& kind) {
  os << kDataMagic << " v" << kDataVersion << "\nkind " << kind << "\n";
}

/// Validates magic, version and kind.
inline void read_data_header(std::istream& is, const std::string& kind) {
  check_header(read_line(is, "dataset"), kDataMagic, kDataVersion);
  const auto line = read_line(is, "dataset");
  if (line != "kind " + kind) throw DataError("dataset: expected 'kind " + kind + "', found '" + line + "'");
}

}  // namespace io

inline void write_dataset(std::ostream& os, const TaskDataset& ds) {
  io::write_data_header(os, "dataset");
  io::BinaryWriter w(os);
  const auto& s = ds.spec;
  w.u64(s.task_id);
  w.u64(s.seed);
  w.tensor(s.rotation);
  w.tensor(s.bias);
  w.tensor(s.bigram);
  w.tensor(s.prototypes);
  w.tensor(s.jitter);
  w.f64(s.noise);
  w.u64(s.min_tokens);
  w.u64(s.max_tokens);
  w.u64(s.sizes.train);
  w.u64(s.sizes.valid);
  w.u64(s.sizes.test);
  for (const auto* split : {&ds.train, &ds.valid, &ds.test}) {
    w.u64(split->size());
    for (const auto& u : *split) w.utterance(u);
  }
  if (!os) throw DataError("dataset: write failed");
}

inline TaskDataset read_dataset(std::istream& is) {
  io::read_data_header(is, "dataset");
  io::BinaryReader r(is, "dataset");
  TaskDataset ds;
  auto& s = ds.spec;
  s.task_id = r.u64();
  s.seed = r.u64();
  s.rotation = r.tensor();
  s.bias = r.tensor();
  s.bigram = r.tensor();
  s.prototypes = r.tensor();
  s.jitter = r.tensor();
  s.noise = r.f64();
  s.min_tokens = r.count();
  s.max_tokens = r.count();
  s.sizes.train = r.count();
  s.sizes.valid = r.count();
  s.sizes.test = r.count();
  for (auto* split : {&ds.train, &ds.valid, &ds.test}) {
    const auto n = r.count();
    split->reserve(n);
    for (std::size_t i = 0; i < n; ++i) split->push_back(r.utterance());
  }
  r.expect_end();
  for (const auto* split : {&ds.train, &ds.valid, &ds.test})
    for (const auto& u : *split) validate_utterance(u, s.alphabet());
  return ds;
}

inline void save_dataset(const std::string& path, const TaskDataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_dataset(os, ds);
}

inline TaskDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  return read_dataset(is);
}

}  // namespace seqcl
