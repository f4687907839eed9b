// SPDX-License-Identifier: Apache-2.0
#include "pma/container.hpp"

#include <cstring>
#include <map>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "pma/rng.hpp"
#include "pma/util.hpp"
#include "test_helpers.hpp"

using namespace pma;
using pma_test::TempDir;
using pma_test::read_file_bytes;
using pma_test::write_file_bytes;

namespace {

std::map<std::string, std::string> meta(int64_t step = 1, int64_t tokens = 1000) {
  return {{"step", std::to_string(step)}, {"tokens", std::to_string(tokens)}};
}

// Random container with assorted shapes, including empty and 1-element
// tensors. Values are finite f64-representable randoms.
std::map<std::string, TensorInit> random_tensors(Rng& rng) {
  std::map<std::string, TensorInit> tensors;
  const int count = 1 + static_cast<int>(rng.below(6));
  for (int t = 0; t < count; ++t) {
    TensorInit init;
    init.dtype = rng.below(2) == 0 ? Dtype::F32 : Dtype::F64;
    const int rank = static_cast<int>(rng.below(4));  // 0..3 (rank 0 = scalar)
    int64_t elems = 1;
    for (int r = 0; r < rank; ++r) {
      const int64_t dim = static_cast<int64_t>(rng.below(5));  // may be 0
      init.shape.push_back(dim);
      elems *= dim;
    }
    init.values.resize(static_cast<size_t>(elems));
    for (auto& v : init.values) {
      v = rng.normal();
      if (init.dtype == Dtype::F32) v = static_cast<double>(static_cast<float>(v));
    }
    tensors["t" + std::to_string(t) + std::string(1 + rng.below(3), 'x')] = std::move(init);
  }
  return tensors;
}

}  // namespace

TEST_CASE("data section is exactly the little-endian IEEE bytes") {
  TempDir dir("container_bytes");
  TensorInit t;
  t.dtype = Dtype::F32;
  t.shape = {2};
  t.values = {1.0, 2.0};
  write_container({{"w", t}}, meta(), dir / "c.pma");

  const auto bytes = read_file_bytes(dir / "c.pma");
  // header length prefix
  uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data(), 8);
  REQUIRE(bytes.size() == 8 + header_len + 8);
  const unsigned char expected[8] = {0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40};
  CHECK(std::memcmp(bytes.data() + 8 + header_len, expected, 8) == 0);

  // canonical header: compact JSON, keys sorted
  const std::string header(bytes.begin() + 8, bytes.begin() + 8 + header_len);
  CHECK(header.find(' ') == std::string::npos);
  CHECK(header.find("\"__metadata__\"") < header.find("\"w\""));
}

TEST_CASE("empty tensor map is rejected") {
  TempDir dir("container_empty");
  CHECK_THROWS_WITH_AS(write_container({}, meta(), dir / "c.pma"), "no tensors", Error);
}

TEST_CASE("metadata must carry step and tokens") {
  TempDir dir("container_meta");
  TensorInit t;
  t.dtype = Dtype::F64;
  t.shape = {1};
  t.values = {3.5};
  CHECK_THROWS_AS(write_container({{"w", t}}, {{"step", "1"}}, dir / "c.pma"), Error);
  CHECK_THROWS_AS(write_container({{"w", t}}, {{"step", "x"}, {"tokens", "5"}}, dir / "c.pma"),
                  Error);
}

TEST_CASE("write -> read -> write reproduces bytes for a 3-tensor container") {
  TempDir dir("container_roundtrip3");
  std::map<std::string, TensorInit> tensors;
  tensors["alpha"] = {Dtype::F32, {2, 3}, {1, 2, 3, 4, 5, 6}};
  tensors["Beta"] = {Dtype::F64, {4}, {0.1, -0.25, 3e-9, 7.5}};
  tensors["gamma.weight"] = {Dtype::F32, {}, {42.0}};
  write_container(tensors, meta(7, 7000), dir / "a.pma");

  const CheckpointContainer c = read_container(dir / "a.pma");
  std::map<std::string, TensorInit> reread;
  for (const auto& [name, rec] : c.tensors)
    reread[name] = {rec.dtype, rec.shape, load_tensor(c, name)};
  write_container(reread, c.metadata, dir / "b.pma");

  CHECK(read_file_bytes(dir / "a.pma") == read_file_bytes(dir / "b.pma"));
}

TEST_CASE("read_container validates and loads lazily") {
  TempDir dir("container_read");
  std::map<std::string, TensorInit> tensors;
  TensorInit big;
  big.dtype = Dtype::F32;
  big.shape = {1 << 20};  // 4 MiB payload
  big.values.resize(1u << 20);
  Rng rng(3);
  for (auto& v : big.values) v = static_cast<double>(static_cast<float>(rng.normal()));
  tensors["big"] = big;
  write_container(tensors, meta(), dir / "big.pma");

  IoStats stats;
  const CheckpointContainer c = read_container(dir / "big.pma", &stats);
  const uint64_t file_size = std::filesystem::file_size(dir / "big.pma");
  // Opening reads only the length prefix and the JSON header.
  CHECK(stats.bytes_read == c.data_begin);
  CHECK(stats.bytes_read < file_size / 100);

  const auto values = load_tensor(c, "big", &stats);
  CHECK(values.size() == big.values.size());
  CHECK(stats.bytes_read == c.data_begin + (1u << 20) * 4);

  SUBCASE("loaded values match") {
    for (size_t i = 0; i < 100; ++i) CHECK(values[i] == big.values[i]);
  }
}

TEST_CASE("load_tensor error paths and f64 identity") {
  TempDir dir("container_load");
  std::map<std::string, TensorInit> tensors;
  tensors["w"] = {Dtype::F32, {2}, {1.0, 2.0}};
  tensors["precise"] = {Dtype::F64, {3}, {0.1, 1.0 / 3.0, -2.5e-17}};
  write_container(tensors, meta(), dir / "c.pma");
  const CheckpointContainer c = read_container(dir / "c.pma");

  CHECK(load_tensor(c, "w") == std::vector<double>{1.0, 2.0});
  CHECK_THROWS_AS(load_tensor(c, "x"), Error);

  const auto precise = load_tensor(c, "precise");
  CHECK(precise[0] == 0.1);
  CHECK(precise[1] == 1.0 / 3.0);
  CHECK(precise[2] == -2.5e-17);
}

namespace {

// Builds a raw container file from an explicit header string and payload.
void write_raw(const std::filesystem::path& path, const std::string& header,
               size_t payload_bytes) {
  std::vector<unsigned char> bytes(8 + header.size() + payload_bytes, 0);
  const uint64_t n = header.size();
  std::memcpy(bytes.data(), &n, 8);
  std::memcpy(bytes.data() + 8, header.data(), header.size());
  write_file_bytes(path, bytes);
}

}  // namespace

TEST_CASE("malformed headers are rejected") {
  TempDir dir("container_malformed");
  const std::string metadata_part = R"("__metadata__":{"step":"1","tokens":"1"})";

  SUBCASE("offsets past end of file") {
    write_raw(dir / "t.pma",
              "{" + metadata_part + R"(,"w":{"dtype":"f32","offsets":[0,8],"shape":[2]}})", 4);
    CHECK_THROWS_WITH_AS(read_container(dir / "t.pma"), "truncated data section", Error);
  }
  SUBCASE("overlapping tensors") {
    write_raw(dir / "o.pma",
              "{" + metadata_part +
                  R"(,"a":{"dtype":"f32","offsets":[0,8],"shape":[2]},"b":{"dtype":"f32","offsets":[4,12],"shape":[2]}})",
              12);
    CHECK_THROWS_AS(read_container(dir / "o.pma"), Error);
    try {
      read_container(dir / "o.pma");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("overlapping tensors") != std::string::npos);
    }
  }
  SUBCASE("gapped tensors") {
    write_raw(dir / "g.pma",
              "{" + metadata_part +
                  R"(,"a":{"dtype":"f32","offsets":[0,4],"shape":[1]},"b":{"dtype":"f32","offsets":[8,12],"shape":[1]}})",
              12);
    CHECK_THROWS_AS(read_container(dir / "g.pma"), Error);
  }
  SUBCASE("unknown dtype") {
    write_raw(dir / "d.pma",
              "{" + metadata_part + R"(,"w":{"dtype":"bf16","offsets":[0,4],"shape":[2]}})", 4);
    CHECK_THROWS_AS(read_container(dir / "d.pma"), Error);
  }
  SUBCASE("header not valid JSON") {
    write_raw(dir / "j.pma", "{not json", 0);
    CHECK_THROWS_AS(read_container(dir / "j.pma"), Error);
  }
  SUBCASE("trailing bytes") {
    write_raw(dir / "tr.pma",
              "{" + metadata_part + R"(,"w":{"dtype":"f32","offsets":[0,4],"shape":[1]}})", 8);
    CHECK_THROWS_AS(read_container(dir / "tr.pma"), Error);
  }
  SUBCASE("non-canonical header is refused") {
    // Semantically identical but with whitespace: parse would succeed, but
    // re-serialization could not reproduce the bytes.
    write_raw(dir / "nc.pma",
              "{" + metadata_part + R"(, "w": {"dtype":"f32","offsets":[0,4],"shape":[1]}})", 4);
    CHECK_THROWS_AS(read_container(dir / "nc.pma"), Error);
  }
}

TEST_CASE("round-trip determinism over random containers") {
  TempDir dir("container_prop");
  Rng rng(2024);
  for (int iter = 0; iter < 50; ++iter) {
    const auto tensors = random_tensors(rng);
    const auto m = meta(iter + 1, (iter + 1) * 10);
    write_container(tensors, m, dir / "x.pma");
    write_container(tensors, m, dir / "y.pma");
    // same logical content -> identical bytes
    REQUIRE(read_file_bytes(dir / "x.pma") == read_file_bytes(dir / "y.pma"));

    // parse -> serialize -> identical bytes
    const CheckpointContainer c = read_container(dir / "x.pma");
    std::map<std::string, TensorInit> reread;
    for (const auto& [name, rec] : c.tensors)
      reread[name] = {rec.dtype, rec.shape, load_tensor(c, name)};
    write_container(reread, c.metadata, dir / "z.pma");
    REQUIRE(read_file_bytes(dir / "x.pma") == read_file_bytes(dir / "z.pma"));
  }
}

TEST_CASE("writer rejects shape/value mismatch and duplicate names") {
  TempDir dir("container_writer");
  TensorInit bad;
  bad.dtype = Dtype::F32;
  bad.shape = {3};
  bad.values = {1.0, 2.0};
  CHECK_THROWS_AS(write_container({{"w", bad}}, meta(), dir / "c.pma"), Error);

  std::vector<ContainerWriter::Spec> specs = {{"w", Dtype::F32, {1}}, {"w", Dtype::F64, {1}}};
  CHECK_THROWS_AS(ContainerWriter(dir / "d.pma", specs, meta()), Error);

  std::vector<ContainerWriter::Spec> empty_name = {{"", Dtype::F32, {1}}};
  CHECK_THROWS_AS(ContainerWriter(dir / "e.pma", empty_name, meta()), Error);
}
