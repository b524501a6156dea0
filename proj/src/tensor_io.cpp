#include "pfad/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace pfad {

std::string shape_string(const Shape& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

namespace {

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i)
    bytes[i] = static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw DataError(std::string("truncated input while reading ") + what);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<U>(v);
}

template <typename Scalar>
void put_payload(std::ostream& out, const Tensor<Scalar>& t) {
  using Bits = std::conditional_t<sizeof(Scalar) == 4, std::uint32_t, std::uint64_t>;
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
  } else {
    for (std::size_t i = 0; i < t.size(); ++i) put_le(out, std::bit_cast<Bits>(t(i)));
  }
}

template <typename Scalar>
Tensor<Scalar> get_payload(std::istream& in, Shape dims) {
  using Bits = std::conditional_t<sizeof(Scalar) == 4, std::uint32_t, std::uint64_t>;
  std::size_t n = shape_product(dims);
  Vec<Scalar> data(static_cast<Eigen::Index>(n));
  if constexpr (std::endian::native == std::endian::little) {
    auto bytes = static_cast<std::streamsize>(n * sizeof(Scalar));
    in.read(reinterpret_cast<char*>(data.data()), bytes);
    if (in.gcount() != bytes)
      throw DataError("truncated tensor payload: expected " + std::to_string(bytes) +
                      " bytes, got " + std::to_string(in.gcount()));
  } else {
    for (std::size_t i = 0; i < n; ++i)
      data[static_cast<Eigen::Index>(i)] = std::bit_cast<Scalar>(get_le<Bits>(in, "payload"));
  }
  return Tensor<Scalar>(std::move(dims), std::move(data));
}

void check_magic(std::istream& in, const char (&magic)[4], const char* kind) {
  char got[4] = {};
  in.read(got, 4);
  if (in.gcount() != 4 || std::memcmp(got, magic, 4) != 0)
    throw DataError(std::string("bad magic: not a ") + kind + " file");
}

}  // namespace

std::size_t tensor_header_size(std::size_t ndim) { return 4 + 4 + 1 + 1 + 8 * ndim; }

std::size_t write_tensor(const TensorF& t, std::ostream& out) {
  const Shape& dims = dims_of(t);
  Tensor<float>::validate_shape(dims);
  if (dims.size() > 255) throw DataError("tensor rank exceeds 255");
  out.write(kTensorMagic, 4);
  put_le<std::uint32_t>(out, kTensorVersion);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_of(t)));
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(dims.size()));
  for (auto d : dims) put_le<std::uint64_t>(out, d);
  std::visit([&](const auto& x) { put_payload(out, x); }, t);
  if (!out) throw DataError("tensor write failed");
  return tensor_header_size(dims.size()) + shape_product(dims) * dtype_size(dtype_of(t));
}

TensorF read_tensor(std::istream& in) {
  check_magic(in, kTensorMagic, "PFTN tensor");
  auto version = get_le<std::uint32_t>(in, "version");
  if (version != kTensorVersion)
    throw DataError("unsupported tensor version " + std::to_string(version));
  auto code = get_le<std::uint8_t>(in, "dtype");
  if (code > 1) throw DataError("unsupported dtype code " + std::to_string(code));
  auto ndim = get_le<std::uint8_t>(in, "ndim");
  if (ndim == 0) throw DataError("tensor must have at least one dimension");
  Shape dims(ndim);
  for (auto& d : dims) d = get_le<std::uint64_t>(in, "dims");
  Tensor<float>::validate_shape(dims);
  if (code == 0) return get_payload<float>(in, std::move(dims));
  return get_payload<double>(in, std::move(dims));
}

void save_tensor(const TensorF& t, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_tensor(t, out);
}

TensorF load_tensor(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open tensor file " + path.string());
  try {
    return read_tensor(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- manifest

const char* to_string(Label l) { return l == Label::normal ? "normal" : "anomalous"; }
const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

bool Manifest::has_masks() const {
  for (const auto& e : entries)
    if (e.mask_path) return true;
  return false;
}

std::size_t Manifest::count(Label l) const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.label == l;
  return n;
}

Manifest parse_manifest(const nlohmann::json& j, const fs::path& base_dir) {
  auto fail = [](const std::string& msg) { throw DataError("manifest: " + msg); };
  if (!j.is_object()) fail("top level must be an object");
  if (!j.contains("split") || !j["split"].is_string()) fail("missing string field 'split'");
  if (!j.contains("entries") || !j["entries"].is_array()) fail("missing array field 'entries'");

  Manifest m;
  auto split = j["split"].get<std::string>();
  if (split == "train")
    m.split = Split::train;
  else if (split == "test")
    m.split = Split::test;
  else
    fail("split must be 'train' or 'test', got '" + split + "'");

  std::set<fs::path> seen_paths;
  std::set<std::string> seen_ids;
  std::size_t index = 0;
  for (const auto& e : j["entries"]) {
    std::string where = "entry " + std::to_string(index++);
    if (!e.is_object()) fail(where + " is not an object");
    for (const char* key : {"feature_path", "label", "image_id"})
      if (!e.contains(key) || !e[key].is_string()) fail(where + " lacks string field '" + key + "'");
    ManifestEntry entry;
    entry.image_id = e["image_id"].get<std::string>();
    where += " (" + entry.image_id + ")";
    entry.feature_path = base_dir / e["feature_path"].get<std::string>();
    auto label = e["label"].get<std::string>();
    if (label == "normal")
      entry.label = Label::normal;
    else if (label == "anomalous")
      entry.label = Label::anomalous;
    else
      fail(where + " has label '" + label + "', expected normal|anomalous");
    if (e.contains("mask_path") && !e["mask_path"].is_null()) {
      if (!e["mask_path"].is_string()) fail(where + " mask_path must be a string or null");
      entry.mask_path = base_dir / e["mask_path"].get<std::string>();
    }
    if (m.split == Split::train && entry.label == Label::anomalous)
      fail(where + " is labeled anomalous but the train split may only contain normal images");
    if (!seen_paths.insert(entry.feature_path.lexically_normal()).second)
      fail(where + " duplicates feature_path " + entry.feature_path.string());
    if (!seen_ids.insert(entry.image_id).second) fail(where + " duplicates image_id");
    m.entries.push_back(std::move(entry));
  }
  return m;
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  Manifest m = parse_manifest(j, path.parent_path());
  m.source = path;
  return m;
}

void save_manifest(const Manifest& m, const fs::path& path) {
  auto base = path.parent_path();
  auto rel = [&](const fs::path& p) {
    return (base.empty() ? p : p.lexically_relative(base)).generic_string();
  };
  nlohmann::json j;
  j["split"] = to_string(m.split);
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json je;
    je["feature_path"] = rel(e.feature_path);
    je["label"] = to_string(e.label);
    je["mask_path"] = e.mask_path ? nlohmann::json(rel(*e.mask_path)) : nlohmann::json(nullptr);
    je["image_id"] = e.image_id;
    j["entries"].push_back(std::move(je));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
}

// -------------------------------------------------------------- checkpoint

const TensorF& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DataError("checkpoint lacks tensor '" + name + "'");
  return it->second;
}

void write_checkpoint(const Checkpoint& ck, std::ostream& out) {
  nlohmann::json header;
  header["format_version"] = ck.format_version;
  header["config"] = ck.config;
  header["meta"] = ck.meta;
  header["rng_seed"] = ck.rng_seed;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ck.tensors) {
    const auto& dims = dims_of(t);
    header["tensors"].push_back({{"name", name},
                                 {"offset", offset},
                                 {"dtype", dtype_name(dtype_of(t))},
                                 {"dims", dims}});
    offset += shape_product(dims) * dtype_size(dtype_of(t));
  }
  std::string text = header.dump();
  out.write(kCheckpointMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : ck.tensors) std::visit([&](const auto& x) { put_payload(out, x); }, t);
  if (!out) throw DataError("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  check_magic(in, kCheckpointMagic, "PFCK checkpoint");
  auto version = get_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  auto length = get_le<std::uint64_t>(in, "header length");
  if (length > (std::uint64_t{1} << 32)) throw DataError("implausible checkpoint header length");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (static_cast<std::uint64_t>(in.gcount()) != length) throw DataError("truncated checkpoint header");

  Checkpoint ck;
  try {
    auto header = nlohmann::json::parse(text);
    ck.format_version = header.at("format_version").get<std::uint32_t>();
    ck.config = header.at("config");
    ck.meta = header.value("meta", nlohmann::json::object());
    ck.rng_seed = header.at("rng_seed").get<std::uint64_t>();
    // Payloads are concatenated in directory order; offsets are validated
    // rather than seeked so the reader also works on non-seekable streams.
    std::uint64_t expected = 0;
    for (const auto& entry : header.at("tensors")) {
      auto name = entry.at("name").get<std::string>();
      auto offset = entry.at("offset").get<std::uint64_t>();
      auto dtype = entry.at("dtype").get<std::string>();
      auto dims = entry.at("dims").get<Shape>();
      if (offset != expected) throw DataError("tensor '" + name + "' has inconsistent offset");
      Tensor<float>::validate_shape(dims);
      if (dtype == "f32") {
        ck.tensors.emplace(name, get_payload<float>(in, dims));
        expected += shape_product(dims) * 4;
      } else if (dtype == "f64") {
        ck.tensors.emplace(name, get_payload<double>(in, dims));
        expected += shape_product(dims) * 8;
      } else {
        throw DataError("tensor '" + name + "' has unsupported dtype " + dtype);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint header: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_checkpoint(ck, out);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace pfad
