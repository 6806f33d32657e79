#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "gawwn/checkpoint.hpp"
#include "gawwn/rng.hpp"

using namespace gawwn;

namespace {

Checkpoint random_checkpoint(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  Checkpoint ck;
  for (std::size_t i = 0; i < count; ++i) {
    Shape shape;
    const std::size_t rank = 1 + rng.index(4);
    for (std::size_t r = 0; r < rank; ++r) shape.push_back(1 + rng.index(4));
    ck.tensors.push_back({"t/" + std::to_string(i), rng.normal_tensor(shape)});
  }
  ck.meta = {{"step", 42}, {"model", "keypoint"}};
  return ck;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(double)) == 0;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("round trip through bytes is bitwise") {
  Checkpoint ck = random_checkpoint(50, 1);
  ck.tensors[0].tensor.values_mut()[0] = -0.0;
  ck.tensors[1].tensor.values_mut()[0] = 5e-324;  // subnormal
  Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
  REQUIRE(back.tensors.size() == ck.tensors.size());
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    CHECK(back.tensors[i].name == ck.tensors[i].name);
    CHECK(bitwise_equal(back.tensors[i].tensor, ck.tensors[i].tensor));
  }
  CHECK(back.meta == ck.meta);
  CHECK(back.find("t/3") != nullptr);
  CHECK(back.find("missing") == nullptr);
}

TEST_CASE("file round trip") {
  const auto path = std::filesystem::temp_directory_path() / "gawwn_unit_ck.bin";
  Checkpoint ck = random_checkpoint(10, 2);
  save_checkpoint(path.string(), ck);
  Checkpoint back = load_checkpoint(path.string());
  for (std::size_t i = 0; i < ck.tensors.size(); ++i)
    CHECK(bitwise_equal(back.tensors[i].tensor, ck.tensors[i].tensor));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path.string()), IoError);
}

TEST_CASE("corruption is detected") {
  const std::string bytes = encode_checkpoint(random_checkpoint(5, 3));
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), FormatError);
  for (std::size_t cut : {std::size_t{4}, std::size_t{12}, std::size_t{40}, bytes.size() / 2})
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, cut)), FormatError);
  std::string bad_json = bytes;
  bad_json.back() = '\x01';
  CHECK_THROWS_AS(decode_checkpoint(bad_json), FormatError);
}

TEST_CASE("config hash is stable") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

}
