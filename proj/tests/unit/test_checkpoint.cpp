// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <array>
#include <cstring>
#include <filesystem>

#include "json.hpp"
#include "ttc/checkpoint.hpp"
#include "ttc/error.hpp"

using namespace ttc;
using nlohmann::json;

namespace {

Model small_model(const std::string& arch = "ttt_swiglu+dwc+nat3") {
  ModelConfig cfg;
  cfg.depth = 2;
  cfg.dim = 24;
  cfg.heads = 2;
  cfg.image_size = 64;
  cfg.classes = 10;
  return convert_model(Model::random_baseline(cfg, 5), ArchSpec::parse(arch), TTTConfig{}, 6);
}

std::uint64_t header_len(const std::vector<char>& b) {
  std::uint64_t n = 0;
  std::memcpy(&n, b.data() + 8, 8);
  return n;
}

json header_of(const std::vector<char>& b) {
  return json::parse(b.begin() + 16, b.begin() + 16 + static_cast<std::ptrdiff_t>(header_len(b)));
}

// Re-frames the payload of `b` behind an edited header.
std::vector<char> with_header(const std::vector<char>& b, const json& h) {
  const std::string text = h.dump();
  const std::uint64_t n = text.size();
  std::array<char, 8> len{};
  std::memcpy(len.data(), &n, 8);
  std::string out(b.begin(), b.begin() + 8);
  out.append(len.begin(), len.end());
  out += text;
  out.append(b.begin() + 16 + static_cast<std::ptrdiff_t>(header_len(b)), b.end());
  return {out.begin(), out.end()};
}

// 0 when the bytes parse.
int code_of(const std::vector<char>& b) {
  try {
    deserialize_checkpoint(b);
  } catch (const Error& e) {
    return static_cast<int>(e.code());
  }
  return 0;
}

int code(ErrorCode c) { return static_cast<int>(c); }

}  // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
  const Model m = small_model();
  const Model r = deserialize_checkpoint(serialize_checkpoint(m));
  EXPECT_EQ(r.config, m.config);
  EXPECT_EQ(r.arch, m.arch);
  EXPECT_EQ(r.ttt.inner_lr, m.ttt.inner_lr);
  ASSERT_EQ(r.params.size(), m.params.size());
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const auto& a = m.params.items()[i];
    const auto& b = r.params.items()[i];
    EXPECT_EQ(a.name, b.name);
    EXPECT_EQ(a.group, b.group);
    EXPECT_EQ(a.value.dtype(), b.value.dtype());
    EXPECT_EQ(a.value.shape(), b.value.shape());
    EXPECT_EQ(a.value.to_vector(), b.value.to_vector()) << a.name;
  }
  EXPECT_EQ(serialize_checkpoint(r), serialize_checkpoint(m));
}

TEST(Checkpoint, PreambleAndIndexLayout) {
  const auto b = serialize_checkpoint(small_model());
  EXPECT_EQ(std::string(b.data(), 8), "TTTCKPT1");
  const json h = header_of(b);
  EXPECT_EQ(h["format_version"], 1);
  std::size_t expect = 0;
  for (const auto& t : h["tensors"]) {
    EXPECT_EQ(t["offset"].get<std::size_t>(), expect);
    expect += t["nbytes"].get<std::size_t>();
  }
  EXPECT_EQ(b.size(), 16 + header_len(b) + expect);
}

TEST(Checkpoint, ForcedPrecision) {
  const Model m = small_model("softmax");
  const Model r = deserialize_checkpoint(serialize_checkpoint(m, DType::f64));
  EXPECT_EQ(r.params.items()[0].value.dtype(), DType::f64);
  EXPECT_EQ(r.params.items()[3].value.to_vector(), m.params.items()[3].value.to_vector());
}

TEST(Checkpoint, CorruptMagic) {
  auto b = serialize_checkpoint(small_model());
  b[3] = 'X';
  EXPECT_EQ(code_of(b), code(ErrorCode::format_magic));
  EXPECT_EQ(code_of(std::vector<char>(b.begin(), b.begin() + 4)), code(ErrorCode::format_magic));
}

TEST(Checkpoint, Truncation) {
  const auto b = serialize_checkpoint(small_model());
  EXPECT_EQ(code_of(std::vector<char>(b.begin(), b.begin() + 12)), code(ErrorCode::format_truncated));
  EXPECT_EQ(code_of(std::vector<char>(b.begin(), b.begin() + 40)), code(ErrorCode::format_truncated));
  EXPECT_EQ(code_of(std::vector<char>(b.begin(), b.end() - 1)), code(ErrorCode::format_truncated));
}

TEST(Checkpoint, TrailingBytesAreRejected) {
  auto b = serialize_checkpoint(small_model());
  b.push_back(0);
  EXPECT_EQ(code_of(b), code(ErrorCode::format_index));
}

TEST(Checkpoint, InconsistentIndex) {
  const auto b = serialize_checkpoint(small_model());
  json h = header_of(b);
  json bad = h;
  bad["tensors"][1]["nbytes"] = bad["tensors"][1]["nbytes"].get<std::size_t>() + 4;
  EXPECT_EQ(code_of(with_header(b, bad)), code(ErrorCode::format_index));
  bad = h;
  bad["tensors"][2]["offset"] = 0;
  EXPECT_EQ(code_of(with_header(b, bad)), code(ErrorCode::format_index));
  bad = h;
  bad["tensors"][0]["shape"] = json::array();
  EXPECT_EQ(code_of(with_header(b, bad)), code(ErrorCode::format_index));
  bad = h;
  bad["tensors"][1]["name"] = bad["tensors"][0]["name"];
  EXPECT_EQ(code_of(with_header(b, bad)), code(ErrorCode::format_index));
  EXPECT_EQ(code_of(with_header(b, h)), 0);
}

TEST(Checkpoint, MalformedHeader) {
  const auto b = serialize_checkpoint(small_model());
  json h = header_of(b);
  json bad = h;
  bad.erase("config");
  EXPECT_EQ(code_of(with_header(b, bad)), code(ErrorCode::format_header));
  bad = h;
  bad["format_version"] = 7;
  EXPECT_EQ(code_of(with_header(b, bad)), code(ErrorCode::format_header));
  bad = h;
  bad["arch"] = "mamba";
  EXPECT_EQ(code_of(with_header(b, bad)), code(ErrorCode::format_header));
  bad = h;
  bad["tensors"][0]["dtype"] = "bf16";
  EXPECT_EQ(code_of(with_header(b, bad)), code(ErrorCode::format_header));

  auto text = b;
  text[16] = '[';
  EXPECT_EQ(code_of(text), code(ErrorCode::format_header));
}

TEST(Checkpoint, FileRoundTripAndIoErrors) {
  const auto path = (std::filesystem::temp_directory_path() / "ttc_test_ckpt.bin").string();
  const Model m = small_model("linear_projqk");
  write_checkpoint(path, m);
  const Model r = read_checkpoint(path);
  EXPECT_EQ(r.params.numel(), m.params.numel());
  std::filesystem::remove(path);
  EXPECT_THROW(read_checkpoint(path), IoError);
  EXPECT_THROW(write_checkpoint("/nonexistent-dir/x.ckpt", m), IoError);
}
