#include <doctest.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "helpers.hpp"
#include "senpa/checkpoint.hpp"
#include "senpa/dataset_io.hpp"
#include "senpa/error.hpp"
#include "senpa/image_io.hpp"

using namespace senpa;

namespace {

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spill(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool same_bits(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("dataset round trip is bitwise lossless") {
  const auto dir = test::scratch_dir("io_dataset");
  std::vector<MultispectralSample> data{test::toy_sample(1, 32, 4), test::toy_sample(2, 32, 3)};
  data[1].labels.reset();
  // Values that a lossy path would disturb.
  data[0].pixels[5] = -0.0f;
  data[0].pixels[6] = 1e-38f;
  data[0].pixels[7] = 0.1f;
  write_dataset(data, dir / "d.spms");
  const auto back = read_dataset(dir / "d.spms");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(same_bits(back[i].pixels, data[i].pixels));
    CHECK(back[i].params == data[i].params);
    CHECK(back[i].labels == data[i].labels);
    CHECK(back[i].height == data[i].height);
  }
  CHECK(std::signbit(back[0].pixels[5]));
  // Writing what was read reproduces the file byte for byte.
  write_dataset(back, dir / "again.spms");
  CHECK(slurp(dir / "d.spms") == slurp(dir / "again.spms"));
}

TEST_CASE("dataset file size follows the container layout") {
  const auto dir = test::scratch_dir("io_size");
  std::vector<MultispectralSample> data;
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto s = test::toy_sample(i % 3, 64, 4);
    data.push_back(std::move(s));
  }
  write_dataset(data, dir / "big.spms");
  // header: magic 4 + version 2 + count 4; per sample: C,H,W 3x2 + spacing 4,
  // C x (gsd 4 + 2300 x 4), pixels C*H*W x 4, flag 1, labels H*W x 2.
  const std::uint64_t per_sample = 6 + 4 + 4 * (4 + 2300 * 4) + 4 * 64 * 64 * 4 + 1 + 64 * 64 * 2;
  const std::uint64_t expected = 10 + 100 * per_sample;
  CHECK(std::filesystem::file_size(dir / "big.spms") == expected);
  CHECK(dataset_size_bytes(data) == expected);
}

TEST_CASE("damaged dataset files are rejected") {
  const auto dir = test::scratch_dir("io_damage");
  const std::vector<MultispectralSample> data{test::toy_sample(1, 32, 2)};
  write_dataset(data, dir / "ok.spms");
  const auto bytes = slurp(dir / "ok.spms");

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  spill(dir / "trunc.spms", truncated);
  CHECK_THROWS_AS(read_dataset(dir / "trunc.spms"), FormatError);

  auto header_only = bytes;
  header_only.resize(8);
  spill(dir / "short.spms", header_only);
  CHECK_THROWS_AS(read_dataset(dir / "short.spms"), FormatError);

  auto magic = bytes;
  magic[0] = 'X';
  spill(dir / "magic.spms", magic);
  CHECK_THROWS_AS(read_dataset(dir / "magic.spms"), FormatError);

  auto version = bytes;
  version[4] = 9;
  spill(dir / "version.spms", version);
  CHECK_THROWS_AS(read_dataset(dir / "version.spms"), FormatError);

  auto extra = bytes;
  extra.push_back(0);
  spill(dir / "extra.spms", extra);
  CHECK_THROWS_AS(read_dataset(dir / "extra.spms"), FormatError);

  auto zero_dim = bytes;
  zero_dim[10] = zero_dim[11] = 0;  // C of the first sample
  spill(dir / "zero.spms", zero_dim);
  CHECK_THROWS_AS(read_dataset(dir / "zero.spms"), FormatError);

  CHECK_THROWS_AS(read_dataset(dir / "missing.spms"), FormatError);
}

TEST_CASE("checkpoint round trip is bitwise lossless") {
  const auto dir = test::scratch_dir("io_ckpt");
  nn::ParameterSet<float> params(5);
  params.add("w", 3, 4, nn::Init::TruncatedNormal);
  params.add("b", 1, 4, nn::Init::Zeros, false);
  for (auto& p : params.items())
    for (std::size_t i = 0; i < p.m.size(); ++i) {
      p.m[i] = 0.125f * static_cast<float>(i);
      p.v[i] = 1e-9f * static_cast<float>(i + 1);
    }
  params.set_step(17);
  const nlohmann::json config = {{"model", {{"d_emb", 4}}}};
  const nlohmann::json meta = {{"epoch", 3}};
  save_checkpoint(make_checkpoint(params, config, meta), dir / "c.spck");
  const auto ckpt = load_checkpoint(dir / "c.spck");
  CHECK(ckpt.config == config);
  CHECK(ckpt.meta == meta);
  CHECK(ckpt.optimizer_step == 17);
  REQUIRE(ckpt.tensors.size() == 2);
  CHECK(ckpt.find("b")->decay == false);
  CHECK(ckpt.find("w")->rows == 3);

  nn::ParameterSet<float> other(99);
  other.add("w", 3, 4, nn::Init::TruncatedNormal);
  other.add("b", 1, 4, nn::Init::Ones, false);
  CHECK(restore_parameters(ckpt, other, true, true) == 2);
  CHECK(other.step() == 17);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(same_bits(other.items()[i].value.values(), params.items()[i].value.values()));
    CHECK(other.items()[i].m == params.items()[i].m);
    CHECK(other.items()[i].v == params.items()[i].v);
  }
  save_checkpoint(make_checkpoint(other, config, meta), dir / "again.spck");
  CHECK(slurp(dir / "c.spck") == slurp(dir / "again.spck"));

  SUBCASE("f64 parameters pass through the f32 payload") {
    nn::ParameterSet<double> d(5);
    d.add("w", 3, 4, nn::Init::TruncatedNormal);
    d.add("b", 1, 4, nn::Init::Zeros, false);
    restore_parameters(ckpt, d, true, false);
    CHECK(static_cast<float>(d.at("w").value.values()[2]) == params.at("w").value.values()[2]);
  }
  SUBCASE("strictness and shape checks") {
    nn::ParameterSet<float> bigger(1);
    bigger.add("w", 3, 4, nn::Init::Zeros);
    bigger.add("b", 1, 4, nn::Init::Zeros, false);
    bigger.add("extra", 2, 2, nn::Init::Ones);
    CHECK_THROWS_AS(restore_parameters(ckpt, bigger, true, false), ConfigError);
    CHECK(restore_parameters(ckpt, bigger, false, false) == 2);
    CHECK(bigger.at("extra").value.values()[0] == 1.0f);
    nn::ParameterSet<float> wrong(1);
    wrong.add("w", 4, 3, nn::Init::Zeros);
    CHECK_THROWS_AS(restore_parameters(ckpt, wrong, false, false), ConfigError);
  }
  SUBCASE("damaged files") {
    auto bytes = slurp(dir / "c.spck");
    auto cut = bytes;
    cut.resize(bytes.size() - 1);
    spill(dir / "cut.spck", cut);
    CHECK_THROWS_AS(load_checkpoint(dir / "cut.spck"), FormatError);
    bytes.push_back(1);
    spill(dir / "long.spck", bytes);
    CHECK_THROWS_AS(load_checkpoint(dir / "long.spck"), FormatError);
    bytes[1] = 'Q';
    spill(dir / "magic.spck", bytes);
    CHECK_THROWS_AS(load_checkpoint(dir / "magic.spck"), FormatError);
  }
}

TEST_CASE("image and CSV helpers") {
  const auto dir = test::scratch_dir("io_images");
  const std::vector<float> v{0.0f, 0.5f, 1.0f, 2.0f, -1.0f, 0.25f};
  write_pgm(dir / "a.pgm", v, 2, 3);
  const auto bytes = slurp(dir / "a.pgm");
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 6);
  CHECK(std::string(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(header.size())) == header);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 0]) == 0);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 2]) == 255);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 3]) == 255);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 4]) == 0);

  CHECK(format_number(0.1) == "0.1");
  CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(format_number(2.0) == "2");
  CHECK(csv_row({"a", "b,c", "d\"e"}) == "a,\"b,c\",\"d\"\"e\"");
  CHECK(class_colour(0) != class_colour(1));
}
