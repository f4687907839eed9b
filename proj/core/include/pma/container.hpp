// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: a bit-exact binary file holding named tensors.
//
// Layout:
//   - 8-byte little-endian unsigned header length n
//   - n bytes of UTF-8 JSON: each tensor name maps to
//     {"dtype": "f32"|"f64", "offsets": [begin, end], "shape": [...]},
//     plus a "__metadata__" string map. Keys are in lexicographic order and
//     the JSON carries no insignificant whitespace, so serialization is
//     canonical: the same logical content always produces identical bytes.
//   - raw little-endian tensor data, offsets relative to this data section.
//
// Tensor byte ranges are contiguous in file order (no gaps, no overlap).
// Metadata must carry "step" and "tokens" as decimal integer strings.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pma {

enum class Dtype { F32, F64 };

inline constexpr size_t dtype_size(Dtype d) { return d == Dtype::F32 ? 4 : 8; }
std::string dtype_name(Dtype d);
Dtype dtype_from_name(const std::string& name);

struct TensorRecord {
  std::string name;
  Dtype dtype = Dtype::F32;
  std::vector<int64_t> shape;
  uint64_t begin = 0;  // half-open byte range into the data section
  uint64_t end = 0;

  int64_t num_elements() const;
  uint64_t byte_size() const { return end - begin; }
};

// Optional instrumentation: counts bytes actually read from disk, used to
// verify that opening a container never touches the data section.
struct IoStats {
  uint64_t bytes_read = 0;
};

struct CheckpointContainer {
  std::filesystem::path path;
  uint64_t data_begin = 0;  // file offset where the data section starts
  uint64_t data_size = 0;
  std::map<std::string, TensorRecord> tensors;
  std::map<std::string, std::string> metadata;

  int64_t step() const;    // parsed from metadata["step"]
  int64_t tokens() const;  // parsed from metadata["tokens"]
};

struct TensorInit {
  Dtype dtype = Dtype::F64;
  std::vector<int64_t> shape;
  std::vector<double> values;  // row-major, length == product(shape)
};

// Incremental writer for streaming producers. Tensors are declared up front
// (offsets are then fixed), payloads appended in lexicographic name order.
class ContainerWriter {
 public:
  struct Spec {
    std::string name;
    Dtype dtype = Dtype::F64;
    std::vector<int64_t> shape;
  };

  ContainerWriter(const std::filesystem::path& path, std::vector<Spec> specs,
                  const std::map<std::string, std::string>& metadata);
  ~ContainerWriter();
  ContainerWriter(const ContainerWriter&) = delete;
  ContainerWriter& operator=(const ContainerWriter&) = delete;

  // Values are rounded once to the declared dtype (round-to-nearest-even).
  void append(const std::string& name, std::span<const double> values);
  void finish();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// One-shot canonical write. Writing the same logical content twice yields
// byte-identical files.
void write_container(const std::map<std::string, TensorInit>& tensors,
                     const std::map<std::string, std::string>& metadata,
                     const std::filesystem::path& path);

// Parses and validates the header only; tensor payloads are not loaded.
CheckpointContainer read_container(const std::filesystem::path& path,
                                   IoStats* stats = nullptr);

// Loads one tensor's payload, widened to f64 (f32 -> f64 is exact).
std::vector<double> load_tensor(const CheckpointContainer& container,
                                const std::string& name, IoStats* stats = nullptr);

}  // namespace pma
