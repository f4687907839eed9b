// SPDX-License-Identifier: Apache-2.0
#include "pma/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "pma/util.hpp"

namespace pma {
namespace {

using nlohmann::json;

void encode_u64_le(uint64_t v, unsigned char out[8]) {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>(v >> (8 * i));
}

uint64_t decode_u64_le(const unsigned char in[8]) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(in[i]) << (8 * i);
  return v;
}

void encode_f32_le(float v, unsigned char out[4]) {
  uint32_t bits = std::bit_cast<uint32_t>(v);
  for (int i = 0; i < 4; ++i) out[i] = static_cast<unsigned char>(bits >> (8 * i));
}

float decode_f32_le(const unsigned char in[4]) {
  uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(in[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

void encode_f64_le(double v, unsigned char out[8]) {
  encode_u64_le(std::bit_cast<uint64_t>(v), out);
}

double decode_f64_le(const unsigned char in[8]) {
  return std::bit_cast<double>(decode_u64_le(in));
}

int64_t parse_int_string(const std::string& s, const char* what) {
  if (s.empty()) throw Error(std::string("metadata ") + what + " is empty");
  size_t pos = 0;
  int64_t v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    throw Error(std::string("metadata ") + what + " is not an integer: '" + s + "'");
  }
  if (pos != s.size())
    throw Error(std::string("metadata ") + what + " is not an integer: '" + s + "'");
  return v;
}

void validate_metadata(const std::map<std::string, std::string>& metadata) {
  auto step = metadata.find("step");
  auto tokens = metadata.find("tokens");
  if (step == metadata.end() || tokens == metadata.end())
    throw Error("metadata must include 'step' and 'tokens'");
  parse_int_string(step->second, "step");
  parse_int_string(tokens->second, "tokens");
}

std::string canonical_header(const std::map<std::string, TensorRecord>& tensors,
                             const std::map<std::string, std::string>& metadata) {
  // nlohmann's default object is std::map-backed: keys come out in
  // lexicographic order, and dump() emits no insignificant whitespace.
  json header = json::object();
  header["__metadata__"] = metadata;
  for (const auto& [name, rec] : tensors) {
    json entry = json::object();
    entry["dtype"] = dtype_name(rec.dtype);
    entry["offsets"] = json::array({rec.begin, rec.end});
    entry["shape"] = rec.shape;
    header[name] = std::move(entry);
  }
  return header.dump();
}

}  // namespace

std::string dtype_name(Dtype d) { return d == Dtype::F32 ? "f32" : "f64"; }

Dtype dtype_from_name(const std::string& name) {
  if (name == "f32") return Dtype::F32;
  if (name == "f64") return Dtype::F64;
  throw Error("unknown dtype '" + name + "'");
}

int64_t TensorRecord::num_elements() const {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw Error("negative dimension in tensor '" + name + "'");
    n *= d;
  }
  return n;
}

int64_t CheckpointContainer::step() const {
  return parse_int_string(metadata.at("step"), "step");
}

int64_t CheckpointContainer::tokens() const {
  return parse_int_string(metadata.at("tokens"), "tokens");
}

struct ContainerWriter::Impl {
  std::ofstream out;
  std::filesystem::path path;
  std::map<std::string, TensorRecord> records;
  std::vector<std::string> order;  // lexicographic append order
  size_t next = 0;
  bool finished = false;
};

ContainerWriter::ContainerWriter(const std::filesystem::path& path,
                                 std::vector<Spec> specs,
                                 const std::map<std::string, std::string>& metadata)
    : impl_(std::make_unique<Impl>()) {
  if (specs.empty()) throw Error("no tensors");
  validate_metadata(metadata);

  std::map<std::string, TensorRecord> records;
  for (auto& s : specs) {
    if (s.name.empty()) throw Error("tensor name must be non-empty");
    TensorRecord rec;
    rec.name = s.name;
    rec.dtype = s.dtype;
    rec.shape = std::move(s.shape);
    rec.num_elements();  // validates non-negative dims
    if (!records.emplace(rec.name, std::move(rec)).second)
      throw Error("duplicate tensor name '" + s.name + "'");
  }
  // Offsets assigned in lexicographic name order: header order == file order.
  uint64_t offset = 0;
  for (auto& [name, rec] : records) {
    rec.begin = offset;
    offset += static_cast<uint64_t>(rec.num_elements()) * dtype_size(rec.dtype);
    rec.end = offset;
    impl_->order.push_back(name);
  }

  impl_->path = path;
  impl_->out.open(path, std::ios::binary | std::ios::trunc);
  if (!impl_->out) throw Error("cannot open '" + path.string() + "' for writing");

  const std::string header = canonical_header(records, metadata);
  unsigned char len[8];
  encode_u64_le(header.size(), len);
  impl_->out.write(reinterpret_cast<const char*>(len), 8);
  impl_->out.write(header.data(), static_cast<std::streamsize>(header.size()));
  impl_->records = std::move(records);
}

ContainerWriter::~ContainerWriter() = default;

void ContainerWriter::append(const std::string& name, std::span<const double> values) {
  if (impl_->finished) throw Error("append after finish");
  if (impl_->next >= impl_->order.size()) throw Error("all tensors already written");
  if (impl_->order[impl_->next] != name)
    throw Error("tensor '" + name + "' appended out of order (expected '" +
                impl_->order[impl_->next] + "')");
  const TensorRecord& rec = impl_->records.at(name);
  if (static_cast<int64_t>(values.size()) != rec.num_elements())
    throw Error("value count mismatch for tensor '" + name + "'");

  std::vector<unsigned char> buf(values.size() * dtype_size(rec.dtype));
  if (rec.dtype == Dtype::F32) {
    for (size_t i = 0; i < values.size(); ++i)
      encode_f32_le(static_cast<float>(values[i]), &buf[4 * i]);
  } else {
    for (size_t i = 0; i < values.size(); ++i) encode_f64_le(values[i], &buf[8 * i]);
  }
  impl_->out.write(reinterpret_cast<const char*>(buf.data()),
                   static_cast<std::streamsize>(buf.size()));
  if (!impl_->out) throw Error("write failure on '" + impl_->path.string() + "'");
  ++impl_->next;
}

void ContainerWriter::finish() {
  if (impl_->finished) return;
  if (impl_->next != impl_->order.size())
    throw Error("missing tensor payloads (wrote " + std::to_string(impl_->next) +
                " of " + std::to_string(impl_->order.size()) + ")");
  impl_->out.flush();
  if (!impl_->out) throw Error("write failure on '" + impl_->path.string() + "'");
  impl_->out.close();
  impl_->finished = true;
}

void write_container(const std::map<std::string, TensorInit>& tensors,
                     const std::map<std::string, std::string>& metadata,
                     const std::filesystem::path& path) {
  if (tensors.empty()) throw Error("no tensors");
  std::vector<ContainerWriter::Spec> specs;
  specs.reserve(tensors.size());
  for (const auto& [name, t] : tensors) {
    int64_t n = 1;
    for (int64_t d : t.shape) {
      if (d < 0) throw Error("negative dimension in tensor '" + name + "'");
      n *= d;
    }
    if (static_cast<int64_t>(t.values.size()) != n)
      throw Error("value count mismatch for tensor '" + name + "'");
    specs.push_back({name, t.dtype, t.shape});
  }
  ContainerWriter writer(path, std::move(specs), metadata);
  for (const auto& [name, t] : tensors) writer.append(name, t.values);
  writer.finish();
}

CheckpointContainer read_container(const std::filesystem::path& path, IoStats* stats) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const uint64_t file_size = static_cast<uint64_t>(in.tellg());
  in.seekg(0);

  unsigned char len_bytes[8];
  if (file_size < 8 || !in.read(reinterpret_cast<char*>(len_bytes), 8))
    throw Error("truncated file: missing header length");
  const uint64_t header_len = decode_u64_le(len_bytes);
  if (header_len > file_size - 8) throw Error("truncated file: header exceeds file size");

  std::string header_text(header_len, '\0');
  if (!in.read(header_text.data(), static_cast<std::streamsize>(header_len)))
    throw Error("truncated file: short header read");
  if (stats) stats->bytes_read += 8 + header_len;

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::parse_error& e) {
    throw Error(std::string("header not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw Error("header not a JSON object");

  CheckpointContainer c;
  c.path = path;
  c.data_begin = 8 + header_len;
  c.data_size = file_size - c.data_begin;

  for (const auto& [key, value] : header.items()) {
    if (key == "__metadata__") {
      if (!value.is_object()) throw Error("__metadata__ must be a string map");
      for (const auto& [mk, mv] : value.items()) {
        if (!mv.is_string()) throw Error("metadata value for '" + mk + "' must be a string");
        c.metadata[mk] = mv.get<std::string>();
      }
      continue;
    }
    if (key.empty()) throw Error("tensor name must be non-empty");
    TensorRecord rec;
    rec.name = key;
    if (!value.contains("dtype") || !value.contains("shape") || !value.contains("offsets"))
      throw Error("tensor '" + key + "' missing dtype/shape/offsets");
    rec.dtype = dtype_from_name(value["dtype"].get<std::string>());
    rec.shape = value["shape"].get<std::vector<int64_t>>();
    const auto offsets = value["offsets"].get<std::vector<uint64_t>>();
    if (offsets.size() != 2) throw Error("tensor '" + key + "' offsets must be [begin, end]");
    rec.begin = offsets[0];
    rec.end = offsets[1];
    if (rec.end < rec.begin) throw Error("tensor '" + key + "' has negative byte range");
    const uint64_t expected =
        static_cast<uint64_t>(rec.num_elements()) * dtype_size(rec.dtype);
    if (rec.byte_size() != expected)
      throw Error("tensor '" + key + "' byte range does not match shape and dtype");
    c.tensors[key] = std::move(rec);
  }
  if (c.tensors.empty()) throw Error("no tensors");
  validate_metadata(c.metadata);

  // Ranges must tile the data section exactly: sorted by begin, contiguous
  // from zero, ending at the data section end.
  std::vector<const TensorRecord*> by_offset;
  by_offset.reserve(c.tensors.size());
  for (const auto& [_, rec] : c.tensors) by_offset.push_back(&rec);
  std::sort(by_offset.begin(), by_offset.end(), [](const auto* a, const auto* b) {
    return a->begin != b->begin ? a->begin < b->begin : a->end < b->end;
  });
  uint64_t cursor = 0;
  for (const TensorRecord* rec : by_offset) {
    if (rec->begin < cursor)
      throw Error("overlapping tensors at '" + rec->name + "'");
    if (rec->begin > cursor)
      throw Error("gapped tensors before '" + rec->name + "'");
    cursor = rec->end;
  }
  if (cursor > c.data_size) throw Error("truncated data section");
  if (cursor < c.data_size) throw Error("trailing bytes after data section");

  // Canonical-form check: re-serializing the parsed header must reproduce
  // the original bytes, otherwise round-trip identities cannot hold.
  if (canonical_header(c.tensors, c.metadata) != header_text)
    throw Error("non-canonical header in '" + path.string() + "'");

  return c;
}

std::vector<double> load_tensor(const CheckpointContainer& container,
                                const std::string& name, IoStats* stats) {
  auto it = container.tensors.find(name);
  if (it == container.tensors.end())
    throw Error("unknown tensor '" + name + "' in '" + container.path.string() + "'");
  const TensorRecord& rec = it->second;

  std::ifstream in(container.path, std::ios::binary);
  if (!in) throw Error("cannot open '" + container.path.string() + "'");
  in.seekg(static_cast<std::streamoff>(container.data_begin + rec.begin));
  std::vector<unsigned char> buf(rec.byte_size());
  if (!buf.empty() &&
      !in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw Error("payload length mismatch for tensor '" + name + "'");
  if (stats) stats->bytes_read += buf.size();

  const int64_t n = rec.num_elements();
  std::vector<double> values(static_cast<size_t>(n));
  if (rec.dtype == Dtype::F32) {
    for (int64_t i = 0; i < n; ++i)
      values[static_cast<size_t>(i)] = static_cast<double>(decode_f32_le(&buf[4 * i]));
  } else {
    for (int64_t i = 0; i < n; ++i)
      values[static_cast<size_t>(i)] = decode_f64_le(&buf[8 * i]);
  }
  return values;
}

}  // namespace pma
