#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "fmm/checkpoint_io.hpp"
#include "fmm/error.hpp"
#include "fmm/io.hpp"
#include "support.hpp"

using namespace fmm;

TEST_CASE("checkpoint round trips bit-exactly") {
  auto c = fmm::testing::small_config(11);
  auto m = fmm::testing::random_model(c);
  m.metadata = {3, 11, "use5050/use_both"};
  const auto bytes = encode_checkpoint(m, {{"config_hash", "abc"}});
  nlohmann::json extra;
  const auto back = decode_checkpoint(bytes, &extra);
  CHECK(extra.at("config_hash") == "abc");
  CHECK(back.metadata == m.metadata);
  CHECK(back.config().hidden_dim == c.hidden_dim);
  const auto a = m.parameters();
  const auto b = back.parameters();
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
  CHECK(encode_checkpoint(back, {{"config_hash", "abc"}}) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "fmm_test_ckpt.bin";
  save_checkpoint(m, path);
  CHECK(encode_checkpoint(load_checkpoint(path)) == encode_checkpoint(m));
  std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto m = fmm::testing::random_model(fmm::testing::small_config());
  auto bytes = encode_checkpoint(m);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bytes), FormatError);
}

TEST_CASE("little-endian primitives") {
  io::ByteWriter w;
  w.u32(0x01020304u);
  w.f64(1.0);
  const auto& s = w.bytes();
  CHECK(static_cast<unsigned char>(s[0]) == 0x04);
  CHECK(static_cast<unsigned char>(s[3]) == 0x01);
  CHECK(static_cast<unsigned char>(s[11]) == 0x3f);
  io::ByteReader r(s);
  CHECK(r.u32() == 0x01020304u);
  CHECK(r.f64() == 1.0);
  CHECK(r.done());
  CHECK_THROWS_AS(r.u32(), FormatError);
}
