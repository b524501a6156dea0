#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pfad/tensor.hpp"

namespace pfad {

namespace fs = std::filesystem;

// "PFTN" container: magic, u32 version, u8 dtype, u8 ndim, u64 dims, payload.
// Every multi-byte field is little-endian.
inline constexpr char kTensorMagic[4] = {'P', 'F', 'T', 'N'};
inline constexpr std::uint32_t kTensorVersion = 1;

inline constexpr char kCheckpointMagic[4] = {'P', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::size_t tensor_header_size(std::size_t ndim);

/// Returns the number of bytes written. Throws DataError on sink failure.
std::size_t write_tensor(const TensorF& t, std::ostream& out);
TensorF read_tensor(std::istream& in);

template <typename Scalar>
std::size_t write_tensor(const Tensor<Scalar>& t, std::ostream& out) {
  return write_tensor(TensorF{t}, out);
}

void save_tensor(const TensorF& t, const fs::path& path);
TensorF load_tensor(const fs::path& path);

template <typename Scalar>
void save_tensor(const Tensor<Scalar>& t, const fs::path& path) {
  save_tensor(TensorF{t}, path);
}

enum class Label { normal, anomalous };
enum class Split { train, test };

struct ManifestEntry {
  fs::path feature_path;  // resolved against the manifest's directory
  Label label = Label::normal;
  std::optional<fs::path> mask_path;
  std::string image_id;
};

struct Manifest {
  Split split = Split::train;
  std::vector<ManifestEntry> entries;
  fs::path source;  // file the manifest was loaded from, if any

  bool has_masks() const;
  std::size_t count(Label l) const;
};

Manifest parse_manifest(const nlohmann::json& j, const fs::path& base_dir);
Manifest load_manifest(const fs::path& path);
/// Paths are written relative to the directory of `path`.
void save_manifest(const Manifest& m, const fs::path& path);

const char* to_string(Label l);
const char* to_string(Split s);

/// Named-tensor archive. `config` is an opaque JSON snapshot of every
/// hyperparameter; `meta` holds derived values (threshold, loss history).
struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json meta = nlohmann::json::object();
  std::uint64_t rng_seed = 0;
  std::map<std::string, TensorF> tensors;

  const TensorF& tensor(const std::string& name) const;
};

void write_checkpoint(const Checkpoint& ck, std::ostream& out);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const Checkpoint& ck, const fs::path& path);
Checkpoint load_checkpoint(const fs::path& path);

}  // namespace pfad
