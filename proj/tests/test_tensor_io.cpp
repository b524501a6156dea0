#include <doctest.h>

#include <cstring>
#include <sstream>

#include "pfad/tensor_io.hpp"
#include "support.hpp"

using namespace pfad;
using pfad::test::TempDir;

namespace {

// Byte-by-byte little-endian encoding written independently of the library.
template <typename U>
void push_le(std::string& s, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) s.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

std::string encode_f32(const Shape& dims, const std::vector<float>& values) {
  std::string s = "PFTN";
  push_le<std::uint32_t>(s, 1);
  push_le<std::uint8_t>(s, 0);
  push_le<std::uint8_t>(s, static_cast<std::uint8_t>(dims.size()));
  for (auto d : dims) push_le<std::uint64_t>(s, d);
  for (float v : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    push_le(s, bits);
  }
  return s;
}

}  // namespace

TEST_SUITE("tensor-io") {
  TEST_CASE("header layout matches an independent encoder") {
    Tensor<float> t({2, 3});
    std::vector<float> v = {1.5f, -2.0f, 0.0f, 3.25f, 1e-7f, -1e7f};
    for (std::size_t i = 0; i < v.size(); ++i) t(i) = v[i];
    std::ostringstream out;
    auto written = write_tensor(t, out);
    const std::string expected = encode_f32({2, 3}, v);
    CHECK(out.str() == expected);
    CHECK(written == expected.size());
    CHECK(tensor_header_size(2) == 10 + 16);
  }

  TEST_CASE("decoding hand-built bytes") {
    std::istringstream in(encode_f32({4}, {1, 2, 3, 4}));
    auto t = read_tensor(in);
    REQUIRE(dtype_of(t) == DType::f32);
    CHECK(dims_of(t) == Shape{4});
    CHECK(std::get<Tensor<float>>(t)(2) == 3.0f);
  }

  TEST_CASE("round trip is bit-exact for ranks 1 to 5 in both precisions") {
    Rng rng(11);
    for (int trial = 0; trial < 40; ++trial) {
      Shape dims(1 + rng.below(5));
      for (auto& d : dims) d = 1 + rng.below(4);
      auto check = [&](auto tensor) {
        std::stringstream io;
        const auto bytes = write_tensor(tensor, io);
        CHECK(bytes == tensor_header_size(dims.size()) + tensor.size() * sizeof(typename decltype(tensor)::scalar_type));
        auto back = read_tensor(io);
        CHECK(std::get<decltype(tensor)>(back) == tensor);
      };
      check(test::random_tensor<float>(rng, dims));
      check(test::random_tensor<double>(rng, dims));
    }
  }

  TEST_CASE("special values survive") {
    Tensor<double> t({3});
    t(0) = std::numeric_limits<double>::infinity();
    t(1) = -0.0;
    t(2) = std::numeric_limits<double>::denorm_min();
    std::stringstream io;
    write_tensor(t, io);
    auto back = std::get<Tensor<double>>(read_tensor(io));
    CHECK(std::isinf(back(0)));
    CHECK(std::signbit(back(1)));
    CHECK(back(2) == std::numeric_limits<double>::denorm_min());
  }

  TEST_CASE("malformed input is rejected") {
    auto good = encode_f32({2, 2}, {1, 2, 3, 4});
    auto reject = [](std::string bytes) {
      std::istringstream in(bytes);
      CHECK_THROWS_AS(read_tensor(in), DataError);
    };
    std::string bad_magic = good;
    bad_magic[0] = 'X';
    reject(bad_magic);
    reject(good.substr(0, good.size() - 1));  // truncated payload
    reject(good.substr(0, 12));               // truncated dims
    std::string bad_dtype = good;
    bad_dtype[8] = 7;
    reject(bad_dtype);
    std::string bad_version = good;
    bad_version[4] = 2;
    reject(bad_version);
    reject(encode_f32({2, 0}, {}));
    std::string rank0 = "PFTN";
    push_le<std::uint32_t>(rank0, 1);
    push_le<std::uint8_t>(rank0, 0);
    push_le<std::uint8_t>(rank0, 0);
    reject(rank0);
  }

  TEST_CASE("file helpers") {
    TempDir dir;
    Tensor<double> t = Tensor<double>::constant({2, 2, 2}, 0.5);
    save_tensor(t, dir / "a.pftn");
    CHECK(std::get<Tensor<double>>(load_tensor(dir / "a.pftn")) == t);
    CHECK_THROWS_AS(load_tensor(dir / "missing.pftn"), DataError);
  }

  TEST_CASE("manifest parsing resolves paths and validates entries") {
    auto j = nlohmann::json::parse(R"({
      "split": "test",
      "entries": [
        {"feature_path": "f/a", "label": "normal", "mask_path": null, "image_id": "a"},
        {"feature_path": "f/b", "label": "anomalous", "mask_path": "m/b.pftn", "image_id": "b"}
      ]})");
    auto m = parse_manifest(j, "/data");
    REQUIRE(m.entries.size() == 2);
    CHECK(m.split == Split::test);
    CHECK(m.entries[0].feature_path == fs::path("/data/f/a"));
    CHECK_FALSE(m.entries[0].mask_path.has_value());
    CHECK(*m.entries[1].mask_path == fs::path("/data/m/b.pftn"));
    CHECK(m.has_masks());
    CHECK(m.count(Label::anomalous) == 1);
  }

  TEST_CASE("a train manifest naming an anomalous image is rejected with its id") {
    auto j = nlohmann::json::parse(R"({"split": "train", "entries": [
        {"feature_path": "x", "label": "anomalous", "image_id": "bad_one"}]})");
    try {
      parse_manifest(j, ".");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("bad_one") != std::string::npos);
    }
  }

  TEST_CASE("manifest structural errors") {
    auto bad = [](const char* text) { CHECK_THROWS_AS(parse_manifest(nlohmann::json::parse(text), "."), DataError); };
    bad(R"([])");
    bad(R"({"entries": []})");
    bad(R"({"split": "val", "entries": []})");
    bad(R"({"split": "test", "entries": [{"label": "normal", "image_id": "a"}]})");
    bad(R"({"split": "test", "entries": [{"feature_path": "a", "label": "odd", "image_id": "a"}]})");
    bad(R"({"split": "test", "entries": [{"feature_path": "a", "label": "normal", "image_id": "a"},
                                          {"feature_path": "./a", "label": "normal", "image_id": "b"}]})");
    bad(R"({"split": "test", "entries": [{"feature_path": "a", "label": "normal", "image_id": "a"},
                                          {"feature_path": "b", "label": "normal", "image_id": "a"}]})");
  }

  TEST_CASE("manifest save and load round trip") {
    TempDir dir;
    Manifest m;
    m.split = Split::test;
    m.entries.push_back({dir.path() / "feat" / "x", Label::anomalous, dir.path() / "mask" / "x.pftn", "x"});
    m.entries.push_back({dir.path() / "feat" / "y", Label::normal, std::nullopt, "y"});
    save_manifest(m, dir / "sub.json");
    auto text = test::slurp(dir / "sub.json");
    CHECK(text.find(dir.path().string()) == std::string::npos);  // stored relative
    auto back = load_manifest(dir / "sub.json");
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[0].feature_path.lexically_normal() == (dir.path() / "feat" / "x").lexically_normal());
    CHECK(back.entries[0].mask_path->lexically_normal() == (dir.path() / "mask" / "x.pftn").lexically_normal());
    CHECK(back.entries[1].label == Label::normal);
  }

  TEST_CASE("checkpoint round trip and deterministic bytes") {
    Checkpoint ck;
    ck.config = {{"a", 1}};
    ck.meta = {{"threshold", 2.5}};
    ck.rng_seed = 42;
    ck.tensors.emplace("w", Tensor<float>::constant({2, 3}, 1.25f));
    ck.tensors.emplace("b", Tensor<double>::constant({3}, -4.0));
    std::stringstream io;
    write_checkpoint(ck, io);
    const std::string bytes = io.str();
    auto back = read_checkpoint(io);
    CHECK(back.rng_seed == 42);
    CHECK(back.config == ck.config);
    CHECK(back.meta == ck.meta);
    CHECK(std::get<Tensor<float>>(back.tensor("w")) == std::get<Tensor<float>>(ck.tensor("w")));
    CHECK(std::get<Tensor<double>>(back.tensor("b")) == std::get<Tensor<double>>(ck.tensor("b")));
    std::ostringstream again;
    write_checkpoint(back, again);
    CHECK(again.str() == bytes);
    CHECK_THROWS_AS(back.tensor("nope"), DataError);
  }

  TEST_CASE("corrupt checkpoints are rejected") {
    Checkpoint ck;
    ck.tensors.emplace("w", Tensor<float>::constant({4}, 1.0f));
    std::ostringstream out;
    write_checkpoint(ck, out);
    std::string bytes = out.str();
    std::istringstream truncated(bytes.substr(0, bytes.size() - 2));
    CHECK_THROWS_AS(read_checkpoint(truncated), DataError);
    std::string magic = bytes;
    magic[3] = 'X';
    std::istringstream bad(magic);
    CHECK_THROWS_AS(read_checkpoint(bad), DataError);
  }
}
