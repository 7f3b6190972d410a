#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lnn/cells.hpp"
#include "lnn/channel.hpp"
#include "lnn/wiring.hpp"

namespace lnn {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Little-endian byte streams
// ---------------------------------------------------------------------------

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::string_view s) { buf_.append(s); }
  void str(std::string_view s) {
    u64(s.size());
    raw(s);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : buf_(std::move(bytes)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint64_t u64() {
    const std::string_view s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view raw(std::size_t n) { return take(n); }
  std::string str(std::size_t max_len = 1 << 20) {
    const std::uint64_t n = u64();
    if (n > max_len) throw FormatError("string length out of range");
    return std::string(take(n));
  }
  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::string_view take(std::size_t n) {
    if (n > buf_.size() - pos_) throw FormatError("unexpected end of file");
    std::string_view s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::string buf_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to a temporary sibling and renames, so readers never see a partial file.
inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Complex dataset: "LNNCSI1\0", u64 rank, u64 extents, interleaved re/im
// ---------------------------------------------------------------------------

inline constexpr std::string_view kDatasetMagic{"LNNCSI1\0", 8};

struct ComplexArray {
  std::vector<std::size_t> shape;
  std::vector<cplx> data;  // row-major
};

inline std::string encode_dataset(const ComplexArray& a) {
  std::size_t n = 1;
  for (auto e : a.shape) n *= e;
  if (n != a.data.size()) throw ShapeError("dataset: shape does not match data size");
  ByteWriter w;
  w.raw(kDatasetMagic);
  w.u64(a.shape.size());
  for (auto e : a.shape) w.u64(e);
  for (const cplx& c : a.data) {
    w.f64(c.real());
    w.f64(c.imag());
  }
  return w.bytes();
}

inline ComplexArray decode_dataset(std::string bytes) {
  ByteReader r(std::move(bytes));
  if (r.remaining() < 8 || r.raw(8) != kDatasetMagic) throw FormatError("dataset: bad magic");
  const std::uint64_t rank = r.u64();
  if (rank > 16) throw FormatError("dataset: rank out of range");
  ComplexArray a;
  std::uint64_t n = 1;
  for (std::uint64_t i = 0; i < rank; ++i) {
    a.shape.push_back(r.u64());
    n *= a.shape.back();
  }
  if (n > r.remaining() / 16 || r.remaining() != n * 16) throw FormatError("dataset: payload size mismatch");
  a.data.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const double re = r.f64();
    a.data.emplace_back(re, r.f64());
  }
  return a;
}

inline ComplexArray to_array(const CsiTensor& c) { return {{c.steps, c.rx, c.tx}, c.data}; }

inline CsiTensor to_csi(const ComplexArray& a) {
  if (a.shape.size() != 3) throw FormatError("dataset: CSI needs rank 3 (time, rx, tx)");
  CsiTensor c(a.shape[0], a.shape[1], a.shape[2]);
  c.data = a.data;
  return c;
}

/// Beamforming channels as (steps, users, rx, tx).
inline ComplexArray to_array(const std::vector<ChannelSet>& seq) {
  ComplexArray a;
  if (seq.empty() || seq[0].empty()) throw ShapeError("dataset: empty channel sequence");
  const auto& h0 = seq[0][0];
  a.shape = {seq.size(), seq[0].size(), std::size_t(h0.rows()), std::size_t(h0.cols())};
  for (const auto& hs : seq) {
    for (const auto& h : hs) {
      for (Eigen::Index r = 0; r < h.rows(); ++r) {
        for (Eigen::Index c = 0; c < h.cols(); ++c) a.data.push_back(h(r, c));
      }
    }
  }
  return a;
}

inline void save_dataset(const std::filesystem::path& path, const ComplexArray& a) {
  write_file(path, encode_dataset(a));
}
inline ComplexArray load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

// ---------------------------------------------------------------------------
// Checkpoint: "LNNCKPT1", cell kind, solver, dt, optional wiring, named tensors
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic{"LNNCKPT1", 8};

struct Checkpoint {
  CellModel model;
  std::optional<Wiring> wiring;
  double dt = 1.0;
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  ByteWriter w;
  w.raw(kCheckpointMagic);
  w.str(to_string(ck.model.kind()));
  w.u64(ck.model.n_units());
  w.u64(ck.model.n_inputs());
  w.u64(ck.model.n_outputs());
  w.u8(static_cast<std::uint8_t>(ck.model.solver));
  w.u64(ck.model.unfolds);
  w.f64(ck.dt);
  w.u8(ck.wiring.has_value());
  if (ck.wiring) {
    const Wiring& g = *ck.wiring;
    for (auto n : {g.n_sensory, g.n_inter, g.n_command, g.n_motor}) w.u64(n);
    for (std::int8_t a : g.adjacency) w.u8(static_cast<std::uint8_t>(a));
  }
  std::size_t count = 0;
  ck.model.for_each_param([&](std::string_view, const Tensor&) { ++count; });
  w.u64(count);
  ck.model.for_each_param([&](std::string_view name, const Tensor& t) {
    w.str(name);
    w.u64(t.rank());
    for (auto e : t.shape()) w.u64(e);
    for (double v : t.data()) w.f64(v);
  });
  return w.bytes();
}

inline Checkpoint decode_checkpoint(std::string bytes) {
  ByteReader r(std::move(bytes));
  if (r.remaining() < 8 || r.raw(8) != kCheckpointMagic) throw FormatError("checkpoint: bad magic");
  const CellKind kind = parse_cell_kind(r.str(64));
  const std::size_t units = r.u64(), inputs = r.u64(), outputs = r.u64();
  if (units == 0 || units > 1 << 16 || inputs > 1 << 20 || outputs > 1 << 20) {
    throw FormatError("checkpoint: dimensions out of range");
  }
  Checkpoint ck;
  Rng rng(0);
  ck.model = CellModel::make(kind, units, inputs, outputs, rng);
  const std::uint8_t solver = r.u8();
  if (solver > 1) throw FormatError("checkpoint: unknown solver tag");
  ck.model.solver = static_cast<OdeSolver>(solver);
  ck.model.unfolds = r.u64();
  ck.dt = r.f64();
  if (r.u8()) {
    std::size_t n[4];
    for (auto& v : n) v = r.u64();
    if (n[0] + n[1] + n[2] + n[3] > 1 << 16) throw FormatError("checkpoint: wiring out of range");
    Wiring g(n[0], n[1], n[2], n[3]);
    for (auto& a : g.adjacency) {
      a = static_cast<std::int8_t>(r.u8());
      if (a < -1 || a > 1) throw FormatError("checkpoint: bad wiring entry");
    }
    // Installs the supports; the weights are overwritten below.
    std::visit(
        [&](auto& p) {
          if constexpr (!std::is_same_v<std::decay_t<decltype(p)>, GruCellParams>) p = apply_masks(g, std::move(p));
        },
        ck.model.params);
    ck.wiring = std::move(g);
  }
  const std::uint64_t count = r.u64();
  std::vector<std::string> names;
  std::vector<Tensor> values;
  for (std::uint64_t i = 0; i < count; ++i) {
    names.push_back(r.str(256));
    const std::uint64_t rank = r.u64();
    if (rank > 8) throw FormatError("checkpoint: tensor rank out of range");
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      shape.push_back(r.u64());
      n *= shape.back();
    }
    if (n > r.remaining() / 8) throw FormatError("checkpoint: tensor " + names.back() + " truncated");
    std::vector<double> data(n);
    for (auto& v : data) v = r.f64();
    values.emplace_back(std::move(shape), std::move(data));
  }
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes");
  std::size_t i = 0;
  ck.model.for_each_param([&](std::string_view name, Tensor& t) {
    if (i >= names.size() || names[i] != name) {
      throw FormatError("checkpoint: expected parameter " + std::string(name));
    }
    if (values[i].shape() != t.shape()) throw FormatError("checkpoint: shape mismatch for " + std::string(name));
    t = values[i++];
  });
  if (i != names.size()) throw FormatError("checkpoint: unexpected extra parameters");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file(path, encode_checkpoint(ck));
}
inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

// ---------------------------------------------------------------------------
// CSV (RFC 4180, CRLF rows, locale-independent shortest round-trip numbers)
// ---------------------------------------------------------------------------

inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row(header); }

  void row(const std::vector<std::string>& fields) {
    if (fields.size() != columns_) throw std::invalid_argument("csv: row has wrong number of fields");
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ += ',';
      out_ += csv_field(fields[i]);
    }
    out_ += "\r\n";
  }

  const std::string& str() const { return out_; }

 private:
  std::size_t columns_;
  std::string out_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw FormatError("csv: missing column " + std::string(name));
  }
};

inline CsvTable parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> rec;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c != '"') {
        field += c;
      } else if (i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else {
        quoted = false;
      }
      continue;
    }
    if (c == '"') {
      quoted = any = true;
    } else if (c == ',') {
      rec.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        rec.push_back(std::move(field));
        records.push_back(std::move(rec));
      }
      field.clear();
      rec.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw FormatError("csv: unterminated quoted field");
  if (any || !field.empty()) {
    rec.push_back(std::move(field));
    records.push_back(std::move(rec));
  }
  CsvTable t;
  if (records.empty()) return t;
  t.header = std::move(records[0]);
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].size() != t.header.size()) {
      throw FormatError("csv: row " + std::to_string(i) + " has " + std::to_string(records[i].size()) +
                        " fields, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(records[i]));
  }
  return t;
}

inline double parse_number(std::string_view s) {
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace lnn
