#pragma once

// File formats.
//
// Framed binary files: 4-byte magic, u32 little-endian header length, UTF-8
// JSON header, little-endian payload.
//   "FLD1" field        {"dims":[nt,nlat,nlon],"dtype":"f64","order":"t-major"}, f64 values
//   "FLD1" observations {"type":"obs","rate":r,"dims":[...]}, (u32 t, u32 lat, u32 lon, f64 value) records
//   "FLD1" attribution  {"type":"attr","dtype":"u32","dims":[nlat,nlon]}, u32 labels
//   "MMGN" model        architecture header, every parameter array as f64 in declaration order
// Latent tables are CSV with header "t,z0,...,z{k-1}".

#include <json.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "latentscope/errors.hpp"
#include "latentscope/field.hpp"
#include "latentscope/mmgn.hpp"
#include "latentscope/tensor.hpp"

namespace latentscope {

using Json = nlohmann::ordered_json;

namespace io {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

inline void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  return v;
}

inline double get_f64(std::string_view in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  return std::bit_cast<double>(v);
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failure on " + path.string());
  return ss.str();
}

inline void write_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failure on " + path.string());
}

struct Framed {
  Json header;
  std::string payload;
};

inline std::string frame(std::string_view magic, const Json& header, std::string_view payload) {
  const std::string head = header.dump();
  std::string out;
  out.reserve(8 + head.size() + payload.size());
  out.append(magic);
  put_u32(out, static_cast<std::uint32_t>(head.size()));
  out.append(head);
  out.append(payload);
  return out;
}

inline Framed unframe(std::string_view bytes, std::string_view magic, const std::string& what) {
  if (bytes.size() < 8 || bytes.substr(0, 4) != magic) {
    throw FormatError(what + ": bad magic or version (expected " + std::string(magic) + ")");
  }
  const std::uint32_t len = get_u32(bytes, 4);
  if (bytes.size() < 8 + static_cast<std::size_t>(len)) throw FormatError(what + ": truncated header");
  Framed f;
  try {
    f.header = Json::parse(bytes.substr(8, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": malformed header: " + e.what());
  }
  f.payload = std::string(bytes.substr(8 + len));
  return f;
}

inline Dims3 header_dims(const Json& header, std::size_t rank, const std::string& what) {
  if (!header.contains("dims") || !header["dims"].is_array() || header["dims"].size() != rank) {
    throw FormatError(what + ": header dims missing or wrong rank");
  }
  Dims3 d{1, 1, 1};
  for (std::size_t i = 0; i < rank; ++i) {
    const auto& v = header["dims"][i];
    if (!v.is_number_unsigned() || v.get<std::uint64_t>() == 0) throw FormatError(what + ": dims must be positive");
    d[i] = v.get<std::size_t>();
  }
  return d;
}

inline std::string header_type(const Json& header) {
  return header.contains("type") && header["type"].is_string() ? header["type"].get<std::string>() : "field";
}

}  // namespace io

inline std::string encode_field(const Tensor3& t) {
  Json header;
  header["dims"] = {t.dim(0), t.dim(1), t.dim(2)};
  header["dtype"] = "f64";
  header["order"] = "t-major";
  std::string payload;
  payload.reserve(t.size() * 8);
  for (double v : t.values()) io::put_f64(payload, v);
  return io::frame("FLD1", header, payload);
}

inline Tensor3 decode_field(std::string_view bytes) {
  const io::Framed f = io::unframe(bytes, "FLD1", "field file");
  if (io::header_type(f.header) != "field") throw FormatError("field file: header type is " + io::header_type(f.header));
  if (f.header.value("dtype", "") != "f64" || f.header.value("order", "") != "t-major") {
    throw FormatError("field file: unsupported dtype or order");
  }
  const Dims3 d = io::header_dims(f.header, 3, "field file");
  const std::size_t n = d[0] * d[1] * d[2];
  if (f.payload.size() != n * 8) throw FormatError("field file: payload length does not match header dims");
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = io::get_f64(f.payload, 8 * i);
  return Tensor3(d, std::move(values));
}

inline void write_field(const Tensor3& t, const std::filesystem::path& path) { io::write_bytes(path, encode_field(t)); }
inline Tensor3 read_field(const std::filesystem::path& path) { return decode_field(io::read_bytes(path)); }

inline void write_observations(const ObservationSet& obs, const std::filesystem::path& path) {
  Json header;
  header["type"] = "obs";
  header["rate"] = obs.rate;
  header["dims"] = {obs.dims[0], obs.dims[1], obs.dims[2]};
  std::string payload;
  payload.reserve(obs.total() * 20);
  for (std::size_t t = 0; t < obs.frames.size(); ++t) {
    for (const Observation& o : obs.frames[t]) {
      io::put_u32(payload, static_cast<std::uint32_t>(t));
      io::put_u32(payload, o.lat);
      io::put_u32(payload, o.lon);
      io::put_f64(payload, o.value);
    }
  }
  io::write_bytes(path, io::frame("FLD1", header, payload));
}

inline ObservationSet read_observations(const std::filesystem::path& path) {
  const io::Framed f = io::unframe(io::read_bytes(path), "FLD1", "observation file");
  if (io::header_type(f.header) != "obs") throw FormatError("observation file: header type is not obs");
  ObservationSet obs;
  obs.dims = io::header_dims(f.header, 3, "observation file");
  if (!f.header.contains("rate") || !f.header["rate"].is_number()) throw FormatError("observation file: missing rate");
  obs.rate = f.header["rate"].get<double>();
  if (f.payload.size() % 20 != 0) throw FormatError("observation file: payload is not a whole number of records");
  obs.frames.resize(obs.dims[0]);
  for (std::size_t pos = 0; pos < f.payload.size(); pos += 20) {
    const std::uint32_t t = io::get_u32(f.payload, pos);
    const Observation o{io::get_u32(f.payload, pos + 4), io::get_u32(f.payload, pos + 8),
                        io::get_f64(f.payload, pos + 12)};
    if (t >= obs.dims[0] || o.lat >= obs.dims[1] || o.lon >= obs.dims[2]) {
      throw FormatError("observation file: record index outside header dims");
    }
    obs.frames[t].push_back(o);
  }
  return obs;
}

/// Integer label grid (nlat x nlon, row-major).
struct LabelGrid {
  std::size_t nlat = 0;
  std::size_t nlon = 0;
  std::vector<std::uint32_t> labels;

  std::uint32_t at(std::size_t i, std::size_t j) const { return labels[i * nlon + j]; }
  bool operator==(const LabelGrid&) const = default;
};

inline void write_label_grid(const LabelGrid& grid, const std::filesystem::path& path) {
  Json header;
  header["type"] = "attr";
  header["dtype"] = "u32";
  header["dims"] = {grid.nlat, grid.nlon};
  std::string payload;
  payload.reserve(grid.labels.size() * 4);
  for (std::uint32_t v : grid.labels) io::put_u32(payload, v);
  io::write_bytes(path, io::frame("FLD1", header, payload));
}

inline LabelGrid read_label_grid(const std::filesystem::path& path) {
  const io::Framed f = io::unframe(io::read_bytes(path), "FLD1", "attribution file");
  if (io::header_type(f.header) != "attr" || f.header.value("dtype", "") != "u32") {
    throw FormatError("attribution file: header is not a u32 attr grid");
  }
  const Dims3 d = io::header_dims(f.header, 2, "attribution file");
  LabelGrid g{d[0], d[1], {}};
  if (f.payload.size() != g.nlat * g.nlon * 4) throw FormatError("attribution file: payload length mismatch");
  g.labels.resize(g.nlat * g.nlon);
  for (std::size_t i = 0; i < g.labels.size(); ++i) g.labels[i] = io::get_u32(f.payload, 4 * i);
  return g;
}

inline std::string encode_model(const MmgnModel& model) {
  model.validate();
  Json header;
  header["type"] = "mmgn";
  header["version"] = 1;
  header["layers"] = model.arch.layers;
  header["hidden"] = model.arch.hidden;
  header["latent_dim"] = model.arch.latent_dim;
  header["input_scale"] = model.arch.input_scale;
  header["gamma_scale"] = model.arch.gamma_scale;
  header["weight_scale"] = model.arch.weight_scale;
  header["seed"] = model.seed;
  header["parameter_count"] = model.parameter_count();
  std::string payload;
  payload.reserve(model.parameter_count() * 8);
  model.for_each_block([&](std::span<const double> s) {
    for (double v : s) io::put_f64(payload, v);
  });
  return io::frame("MMGN", header, payload);
}

inline MmgnModel decode_model(std::string_view bytes) {
  const io::Framed f = io::unframe(bytes, "MMGN", "model file");
  const Json& h = f.header;
  if (io::header_type(h) != "mmgn" || h.value("version", 0) != 1) throw FormatError("model file: unsupported header");
  MmgnArch arch;
  try {
    arch.layers = h.at("layers").get<std::size_t>();
    arch.hidden = h.at("hidden").get<std::size_t>();
    arch.latent_dim = h.at("latent_dim").get<std::size_t>();
    arch.input_scale = h.at("input_scale").get<double>();
    arch.gamma_scale = h.at("gamma_scale").get<double>();
    arch.weight_scale = h.at("weight_scale").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model file: bad architecture header: ") + e.what());
  }
  MmgnModel model = init_model(arch, h.value("seed", std::uint64_t{0}));
  if (f.payload.size() != model.parameter_count() * 8) throw FormatError("model file: payload length mismatch");
  std::size_t pos = 0;
  model.for_each_block([&](std::span<double> s) {
    for (double& v : s) {
      v = io::get_f64(f.payload, pos);
      pos += 8;
    }
  });
  model.validate();
  return model;
}

inline void write_model(const MmgnModel& model, const std::filesystem::path& path) {
  io::write_bytes(path, encode_model(model));
}
inline MmgnModel read_model(const std::filesystem::path& path) { return decode_model(io::read_bytes(path)); }

/// Shortest-round-trip-safe decimal form of a double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string encode_latents_csv(const Matrix& latents) {
  std::string out = "t";
  for (Eigen::Index c = 0; c < latents.cols(); ++c) out += ",z" + std::to_string(c);
  out += '\n';
  for (Eigen::Index r = 0; r < latents.rows(); ++r) {
    out += std::to_string(r);
    for (Eigen::Index c = 0; c < latents.cols(); ++c) out += "," + format_double(latents(r, c));
    out += '\n';
  }
  return out;
}

inline Matrix decode_latents_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line.rfind("t", 0) != 0) throw FormatError("latent CSV: missing header");
  std::size_t k = 0;
  {
    std::istringstream hs(line);
    std::string cell;
    std::getline(hs, cell, ',');
    while (std::getline(hs, cell, ',')) {
      if (cell != "z" + std::to_string(k)) throw FormatError("latent CSV: unexpected column " + cell);
      ++k;
    }
  }
  if (k == 0) throw FormatError("latent CSV: no latent columns");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    if (cell != std::to_string(rows.size())) throw FormatError("latent CSV: rows must be t = 0, 1, ...");
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0') throw FormatError("latent CSV: bad number '" + cell + "'");
      row.push_back(v);
    }
    if (row.size() != k) throw FormatError("latent CSV: ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError("latent CSV: no rows");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(k));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < k; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  require_finite(m, "latent CSV");
  return m;
}

inline void write_latents_csv(const Matrix& latents, const std::filesystem::path& path) {
  io::write_bytes(path, encode_latents_csv(latents));
}
inline Matrix read_latents_csv(const std::filesystem::path& path) {
  return decode_latents_csv(io::read_bytes(path));
}

inline void write_text(const std::filesystem::path& path, std::string_view text) { io::write_bytes(path, text); }
inline std::string read_text(const std::filesystem::path& path) { return io::read_bytes(path); }

inline void write_json(const std::filesystem::path& path, const Json& j) { io::write_bytes(path, j.dump(2) + "\n"); }

inline Json read_json(const std::filesystem::path& path) {
  try {
    return Json::parse(io::read_bytes(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed JSON: " + e.what());
  }
}

}  // namespace latentscope
