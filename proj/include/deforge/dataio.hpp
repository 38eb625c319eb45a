#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"

#include "deforge/balance.hpp"
#include "deforge/equation.hpp"
#include "deforge/version.hpp"

namespace deforge {

// Binary tensor blob: magic "DERG", version u8 = 1, dtype u8 = 1 (float64
// little-endian), ndim u8, reserved u8 = 0, then ndim u64 dims little-endian
// and the row-major payload. No compression; byte layout is the contract.
inline constexpr std::uint8_t blob_version = 1;
inline constexpr std::uint8_t blob_dtype_f64 = 1;

namespace detail {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(std::uint8_t(value >> (8 * i)));
}

template <class T>
T get_le(const std::uint8_t* p) {
  static_assert(std::is_unsigned_v<T>);
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= T(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> write_blob(const ArrayX<double>& data,
                                            const std::vector<std::uint64_t>& dims) {
  if (dims.empty()) throw std::invalid_argument("write_blob: need at least one dim");
  if (dims.size() > 255) throw std::invalid_argument("write_blob: too many dims");
  std::uint64_t total = 1;
  for (std::uint64_t d : dims) {
    if (d == 0) throw std::invalid_argument("write_blob: zero-sized dim");
    total *= d;
  }
  if (total != std::uint64_t(data.size()))
    throw std::invalid_argument("write_blob: dims do not match the data size");
  for (Index i = 0; i < data.size(); ++i)
    if (!std::isfinite(data[i]))
      throw std::invalid_argument("write_blob: non-finite value");

  std::vector<std::uint8_t> out;
  out.reserve(8 + dims.size() * 8 + std::size_t(total) * 8);
  out.insert(out.end(), {'D', 'E', 'R', 'G'});
  out.push_back(blob_version);
  out.push_back(blob_dtype_f64);
  out.push_back(std::uint8_t(dims.size()));
  out.push_back(0);
  for (std::uint64_t d : dims) detail::put_le(out, d);
  for (Index i = 0; i < data.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &data[i], 8);
    detail::put_le(out, bits);
  }
  return out;
}

struct BlobData {
  std::vector<std::uint64_t> dims;
  ArrayX<double> data;
};

inline BlobData read_blob(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) throw std::runtime_error("read_blob: truncated header");
  if (std::memcmp(bytes.data(), "DERG", 4) != 0)
    throw std::runtime_error("read_blob: bad magic");
  if (bytes[4] != blob_version) throw std::runtime_error("read_blob: unknown version");
  if (bytes[5] != blob_dtype_f64) throw std::runtime_error("read_blob: unknown dtype");
  const std::size_t ndim = bytes[6];
  if (ndim == 0) throw std::runtime_error("read_blob: zero dims");
  if (bytes[7] != 0) throw std::runtime_error("read_blob: nonzero reserved byte");
  if (bytes.size() < 8 + ndim * 8) throw std::runtime_error("read_blob: truncated dims");

  BlobData b;
  b.dims.resize(ndim);
  std::uint64_t total = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    b.dims[i] = detail::get_le<std::uint64_t>(bytes.data() + 8 + i * 8);
    if (b.dims[i] == 0) throw std::runtime_error("read_blob: zero-sized dim");
    total *= b.dims[i];
  }
  const std::size_t want = 8 + ndim * 8 + std::size_t(total) * 8;
  if (bytes.size() != want) throw std::runtime_error("read_blob: payload length mismatch");

  b.data.resize(Index(total));
  const std::uint8_t* p = bytes.data() + 8 + ndim * 8;
  for (std::uint64_t i = 0; i < total; ++i) {
    const std::uint64_t bits = detail::get_le<std::uint64_t>(p + i * 8);
    std::memcpy(&b.data[Index(i)], &bits, 8);
  }
  return b;
}

inline void save_bytes(const std::filesystem::path& path,
                       const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("short write: " + path.string());
}

inline std::vector<std::uint8_t> load_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw std::runtime_error("short read: " + path.string());
  return bytes;
}

inline void save_blob(const std::filesystem::path& path, const ArrayX<double>& data,
                      const std::vector<std::uint64_t>& dims) {
  save_bytes(path, write_blob(data, dims));
}

inline BlobData load_blob(const std::filesystem::path& path) {
  return read_blob(load_bytes(path));
}

// Minimal JSON document builder. Objects keep keys sorted and doubles print
// with 17 significant digits, so identical content always serializes to
// identical bytes.
class JsonValue {
 public:
  using Object = std::map<std::string, JsonValue>;
  using Array = std::vector<JsonValue>;

  JsonValue() : node_(nullptr) {}
  JsonValue(std::nullptr_t) : node_(nullptr) {}
  JsonValue(bool v) : node_(v) {}
  JsonValue(double v) : node_(v) {}
  JsonValue(std::int64_t v) : node_(v) {}
  JsonValue(std::uint64_t v) : node_(v) {}
  JsonValue(int v) : node_(std::int64_t(v)) {}
  JsonValue(const char* v) : node_(std::string(v)) {}
  JsonValue(std::string v) : node_(std::move(v)) {}
  JsonValue(Object v) : node_(std::move(v)) {}
  JsonValue(Array v) : node_(std::move(v)) {}

  std::string dump() const {
    std::string out;
    emit(out, 0);
    out.push_back('\n');
    return out;
  }

 private:
  std::variant<std::nullptr_t, bool, double, std::int64_t, std::uint64_t,
               std::string, Object, Array>
      node_;

  static void escape(std::string& out, const std::string& s) {
    out.push_back('"');
    for (char c : s) {
      switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        case '\r': out += "\\r"; break;
        default:
          if (std::uint8_t(c) < 0x20) {
            char buf[8];
            std::snprintf(buf, sizeof(buf), "\\u%04x", c);
            out += buf;
          } else {
            out.push_back(c);
          }
      }
    }
    out.push_back('"');
  }

  void emit(std::string& out, int depth) const {
    const std::string pad(std::size_t(depth) * 2, ' ');
    const std::string pad_in(std::size_t(depth + 1) * 2, ' ');
    switch (node_.index()) {
      case 0: out += "null"; break;
      case 1: out += std::get<bool>(node_) ? "true" : "false"; break;
      case 2: {
        if (!std::isfinite(std::get<double>(node_)))
          throw std::invalid_argument("json: non-finite number");
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", std::get<double>(node_));
        out += buf;
        break;
      }
      case 3: out += std::to_string(std::get<std::int64_t>(node_)); break;
      case 4: out += std::to_string(std::get<std::uint64_t>(node_)); break;
      case 5: escape(out, std::get<std::string>(node_)); break;
      case 6: {
        const auto& obj = std::get<Object>(node_);
        if (obj.empty()) {
          out += "{}";
          break;
        }
        out += "{\n";
        bool first = true;
        for (const auto& [key, value] : obj) {
          if (!first) out += ",\n";
          first = false;
          out += pad_in;
          escape(out, key);
          out += ": ";
          value.emit(out, depth + 1);
        }
        out += "\n" + pad + "}";
        break;
      }
      case 7: {
        const auto& arr = std::get<Array>(node_);
        if (arr.empty()) {
          out += "[]";
          break;
        }
        out += "[";
        for (std::size_t i = 0; i < arr.size(); ++i) {
          if (i) out += ", ";
          arr[i].emit(out, depth + 1);
        }
        out += "]";
        break;
      }
    }
  }
};

namespace detail {

inline JsonValue grid_to_json(const Grid& g) {
  JsonValue::Object o;
  o["dims"] = g.dims;
  JsonValue::Array points, extents, periodic;
  for (int j = 0; j < g.dims; ++j) {
    points.emplace_back(g.points[std::size_t(j)]);
    extents.emplace_back(g.extents[std::size_t(j)]);
    periodic.emplace_back(g.periodic[std::size_t(j)]);
  }
  o["points"] = std::move(points);
  o["extents"] = std::move(extents);
  o["periodic"] = std::move(periodic);
  o["time_points"] = g.time_points;
  o["duration"] = g.duration;
  return o;
}

inline Grid grid_from_json(const nlohmann::json& j) {
  Grid g;
  g.dims = j.at("dims").get<int>();
  if (g.dims < 1 || g.dims > 3) throw std::runtime_error("manifest: bad grid dims");
  for (int d = 0; d < g.dims; ++d) {
    g.points[std::size_t(d)] = j.at("points").at(std::size_t(d)).get<Index>();
    g.extents[std::size_t(d)] = j.at("extents").at(std::size_t(d)).get<double>();
    g.periodic[std::size_t(d)] = j.at("periodic").at(std::size_t(d)).get<bool>();
  }
  g.time_points = j.at("time_points").get<Index>();
  g.duration = j.at("duration").get<double>();
  g.validate();
  return g;
}

inline void check_key(const std::string& key) {
  if (key.empty()) throw std::invalid_argument("sample entry name is empty");
  for (char c : key)
    if (!(std::isalnum(std::uint8_t(c)) || c == '_'))
      throw std::invalid_argument("sample entry name has unsafe characters: " + key);
}

inline std::vector<std::uint64_t> field_dims(const Field& f) {
  std::vector<std::uint64_t> dims{std::uint64_t(f.components),
                                  std::uint64_t(time_slabs(f.grid))};
  for (int d = 0; d < f.grid.dims; ++d)
    dims.push_back(std::uint64_t(f.grid.points[std::size_t(d)]));
  return dims;
}

}  // namespace detail

inline constexpr int manifest_schema_version = 1;

struct SampleMeta {
  std::uint64_t seed = 0;
  std::optional<int> dilation;
  double same_op_max_rel = 0;
  double cross_op_max_rel = 0;
  std::string generator = std::string("deforge ") + version_string;
};

struct SampleRecord {
  Sample sample;
  SampleMeta meta;
};

// Writes manifest.json plus one blob per field, series, and boundary trace
// into `dir`. The caller owns the directory; nothing outside it is touched.
inline void write_sample(const std::filesystem::path& dir, const Sample& sample,
                         const SampleMeta& meta) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  JsonValue::Object files_fields, files_series, files_boundaries;
  for (const auto& [key, field] : sample.fields) {
    detail::check_key(key);
    const std::string blob_name = "field_" + key + ".derg";
    save_blob(dir / blob_name, field.data, detail::field_dims(field));
    JsonValue::Object entry;
    entry["blob"] = blob_name;
    entry["components"] = field.components;
    entry["quantity"] = field.quantity;
    entry["grid"] = detail::grid_to_json(field.grid);
    files_fields[key] = std::move(entry);
  }
  for (const auto& [key, series] : sample.series) {
    detail::check_key(key);
    const std::string blob_name = "series_" + key + ".derg";
    ArrayX<double> flat(series.values.size());
    Index out = 0;
    for (int c = 0; c < series.channels(); ++c)
      for (Index t = 0; t < series.steps(); ++t) flat[out++] = series.values(t, c);
    save_blob(dir / blob_name, flat,
              {std::uint64_t(series.channels()), std::uint64_t(series.steps())});
    JsonValue::Object entry;
    entry["blob"] = blob_name;
    entry["dt"] = series.dt;
    files_series[key] = std::move(entry);
  }
  for (const auto& [key, boundary] : sample.boundaries) {
    detail::check_key(key);
    const std::string blob_name = "boundary_" + key + ".derg";
    Index total = 0;
    JsonValue::Array faces;
    for (const auto& face : boundary.faces) {
      JsonValue::Object fo;
      fo["dim"] = face.dim;
      fo["side"] = face.side;
      fo["size"] = face.data.size();
      faces.emplace_back(std::move(fo));
      total += face.data.size();
    }
    ArrayX<double> flat(total);
    Index out = 0;
    for (const auto& face : boundary.faces)
      for (Index i = 0; i < face.data.size(); ++i) flat[out++] = face.data[i];
    save_blob(dir / blob_name, flat, {std::uint64_t(total)});
    JsonValue::Object entry;
    entry["blob"] = blob_name;
    entry["components"] = boundary.components;
    entry["quantity"] = boundary.quantity;
    entry["grid"] = detail::grid_to_json(boundary.grid);
    entry["faces"] = std::move(faces);
    files_boundaries[key] = std::move(entry);
  }

  JsonValue::Object params;
  for (const auto& [key, value] : sample.params) params[key] = value;

  JsonValue::Object residual;
  residual["same_op_max_rel"] = meta.same_op_max_rel;
  residual["cross_op_max_rel"] = meta.cross_op_max_rel;

  JsonValue::Object files;
  files["fields"] = std::move(files_fields);
  files["series"] = std::move(files_series);
  files["boundaries"] = std::move(files_boundaries);

  JsonValue::Object root;
  root["schema_version"] = manifest_schema_version;
  root["generator"] = meta.generator;
  root["family"] = sample.family;
  root["seed"] = meta.seed;
  root["dilation"] = meta.dilation ? JsonValue(*meta.dilation) : JsonValue(nullptr);
  root["params"] = std::move(params);
  root["files"] = std::move(files);
  root["residual"] = std::move(residual);

  const std::string text = JsonValue(std::move(root)).dump();
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << text;
}

inline SampleRecord read_sample(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw std::runtime_error("missing manifest: " + manifest_path.string());
  nlohmann::json j;
  in >> j;

  if (j.at("schema_version").get<int>() != manifest_schema_version)
    throw std::runtime_error("manifest: unsupported schema version");

  SampleRecord rec;
  rec.sample.family = j.at("family").get<std::string>();
  family_from_string(rec.sample.family);
  rec.meta.seed = j.at("seed").get<std::uint64_t>();
  if (!j.at("dilation").is_null()) rec.meta.dilation = j.at("dilation").get<int>();
  rec.meta.generator = j.at("generator").get<std::string>();
  rec.meta.same_op_max_rel = j.at("residual").at("same_op_max_rel").get<double>();
  rec.meta.cross_op_max_rel = j.at("residual").at("cross_op_max_rel").get<double>();

  for (const auto& [key, value] : j.at("params").items())
    rec.sample.params[key] = value.get<double>();

  const auto& files = j.at("files");
  for (const auto& [key, entry] : files.at("fields").items()) {
    Field f;
    f.grid = detail::grid_from_json(entry.at("grid"));
    f.components = entry.at("components").get<int>();
    f.quantity = entry.at("quantity").get<std::string>();
    const BlobData blob = load_blob(dir / entry.at("blob").get<std::string>());
    if (blob.dims != detail::field_dims(f))
      throw std::runtime_error("field blob dims disagree with the manifest: " + key);
    f.data = blob.data;
    rec.sample.fields.emplace(key, std::move(f));
  }
  for (const auto& [key, entry] : files.at("series").items()) {
    const BlobData blob = load_blob(dir / entry.at("blob").get<std::string>());
    if (blob.dims.size() != 2)
      throw std::runtime_error("series blob must be two-dimensional: " + key);
    TimeSeries s;
    s.dt = entry.at("dt").get<double>();
    s.values.resize(Index(blob.dims[1]), Index(blob.dims[0]));
    Index src = 0;
    for (Index c = 0; c < s.values.cols(); ++c)
      for (Index t = 0; t < s.values.rows(); ++t) s.values(t, c) = blob.data[src++];
    rec.sample.series.emplace(key, std::move(s));
  }
  for (const auto& [key, entry] : files.at("boundaries").items()) {
    BoundaryData b;
    b.grid = detail::grid_from_json(entry.at("grid"));
    b.components = entry.at("components").get<int>();
    b.quantity = entry.at("quantity").get<std::string>();
    const BlobData blob = load_blob(dir / entry.at("blob").get<std::string>());
    Index offset = 0;
    for (const auto& face_json : entry.at("faces")) {
      FaceTraceT<double> face;
      face.dim = face_json.at("dim").get<int>();
      face.side = face_json.at("side").get<int>();
      const Index size = face_json.at("size").get<Index>();
      if (offset + size > blob.data.size())
        throw std::runtime_error("boundary blob shorter than its face table: " + key);
      face.data = blob.data.segment(offset, size);
      offset += size;
      b.faces.push_back(std::move(face));
    }
    if (offset != blob.data.size())
      throw std::runtime_error("boundary blob longer than its face table: " + key);
    rec.sample.boundaries.emplace(key, std::move(b));
  }
  return rec;
}

// Dataset index: the ordered sample directory list plus the provenance that
// reproduces the tree.
struct DatasetIndex {
  std::uint64_t master_seed = 0;
  std::string generator = std::string("deforge ") + version_string;
  std::string config_echo;  // the generating config, verbatim
  std::vector<std::string> samples;
};

inline void write_dataset_index(const std::filesystem::path& root,
                                const DatasetIndex& index) {
  JsonValue::Array samples;
  for (const auto& name : index.samples) samples.emplace_back(name);
  JsonValue::Object o;
  o["schema_version"] = manifest_schema_version;
  o["generator"] = index.generator;
  o["master_seed"] = index.master_seed;
  o["count"] = std::uint64_t(index.samples.size());
  o["config"] = index.config_echo;
  o["samples"] = std::move(samples);
  const std::string text = JsonValue(std::move(o)).dump();
  std::ofstream out(root / "dataset.json", std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write dataset index in " + root.string());
  out << text;
}

inline DatasetIndex read_dataset_index(const std::filesystem::path& root) {
  std::ifstream in(root / "dataset.json", std::ios::binary);
  if (!in)
    throw std::runtime_error("missing dataset index: " + (root / "dataset.json").string());
  nlohmann::json j;
  in >> j;
  if (j.at("schema_version").get<int>() != manifest_schema_version)
    throw std::runtime_error("dataset index: unsupported schema version");
  DatasetIndex index;
  index.master_seed = j.at("master_seed").get<std::uint64_t>();
  index.generator = j.at("generator").get<std::string>();
  index.config_echo = j.at("config").get<std::string>();
  for (const auto& name : j.at("samples"))
    index.samples.push_back(name.get<std::string>());
  if (index.samples.size() != j.at("count").get<std::size_t>())
    throw std::runtime_error("dataset index: count disagrees with the sample list");
  return index;
}

struct SampleValidation {
  std::string name;
  bool ok = false;
  std::string message;
  double same_op = 0;
  double cross_op = 0;
  double drift = 0;  // recorded-versus-recomputed residual disagreement
};

struct DatasetReport {
  bool ok = false;
  std::size_t checked = 0;
  std::vector<SampleValidation> samples;
};

// Re-derives every residual from the stored arrays; manifest numbers are
// compared against the recomputation, never trusted.
inline DatasetReport validate_dataset(const std::filesystem::path& root,
                                      double drift_tolerance = 1e-12) {
  const DatasetIndex index = read_dataset_index(root);
  DatasetReport report;
  report.ok = true;
  for (const auto& name : index.samples) {
    SampleValidation v;
    v.name = name;
    try {
      const SampleRecord rec = read_sample(root / name);
      const ResidualPair pair = residual(rec.sample);
      v.same_op = pair.same_op.max_rel;
      v.cross_op = pair.cross_op.max_rel;
      v.drift = std::max(std::abs(v.same_op - rec.meta.same_op_max_rel),
                         std::abs(v.cross_op - rec.meta.cross_op_max_rel));
      if (v.drift >= drift_tolerance) {
        v.message = "recorded residuals drift from the recomputation";
      } else if (!pair.same_op.pass()) {
        v.message = "same-operator residual above tolerance: " +
                    pair.same_op.max_equation;
      } else if (!pair.cross_op.pass()) {
        v.message = "cross-operator residual above tolerance: " +
                    pair.cross_op.max_equation;
      } else {
        v.ok = true;
      }
    } catch (const std::exception& e) {
      v.message = e.what();
    }
    report.ok = report.ok && v.ok;
    ++report.checked;
    report.samples.push_back(std::move(v));
  }
  return report;
}

inline std::string sample_dir_name(Index index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%06lld", static_cast<long long>(index));
  return buf;
}

}  // namespace deforge
