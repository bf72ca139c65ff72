#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "todi/checkpoint.hpp"
#include "todi/config.hpp"
#include "todi/nn.hpp"
#include "todi/rng.hpp"

using namespace todi;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string temp_path(const std::string& stem) {
  return std::string("ckpt_test_") + stem + ".bin";
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

NamedParams demo_params(Rng& rng) {
  NamedParams params;
  Tensor w = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({1, 4});
  for (auto& v : w.value()) v = rng.gaussf();
  for (auto& v : b.value()) v = rng.gaussf();
  params.emplace_back("demo.W", w);
  params.emplace_back("demo.b", b);
  return params;
}

}  // namespace

TEST_CASE("crc32 matches the published check value") {
  const std::string probe = "123456789";
  REQUIRE(crc32(probe.data(), probe.size()) == 0xCBF43926u);
  REQUIRE(crc32(probe.data(), 0) == 0x00000000u);
  // Any flipped bit must change the digest.
  std::string mutated = probe;
  mutated[4] ^= 0x01;
  REQUIRE(crc32(mutated.data(), mutated.size()) != 0xCBF43926u);
}

TEST_CASE("checkpoint round-trips names, shapes, and exact values") {
  Rng rng(404);
  NamedParams params = demo_params(rng);
  const std::string path = temp_path("roundtrip");
  save_checkpoint(path, "demo", params);

  const Checkpoint ck = load_checkpoint(path);
  REQUIRE(ck.module == "demo");
  REQUIRE(ck.tensors.size() == 2);
  REQUIRE(ck.tensors[0].name == "demo.W");
  REQUIRE(ck.tensors[0].shape == std::vector<int>{3, 4});
  REQUIRE(ck.tensors[0].values == params[0].second.value());
  REQUIRE(ck.tensors[1].name == "demo.b");
  REQUIRE(ck.tensors[1].values == params[1].second.value());
  std::remove(path.c_str());
}

TEST_CASE("loading then saving reproduces the file byte for byte") {
  Rng rng(405);
  NamedParams params = demo_params(rng);
  const std::string first = temp_path("bytes_a");
  const std::string second = temp_path("bytes_b");
  save_checkpoint(first, "demo", params);
  save_checkpoint(second, load_checkpoint(first));
  REQUIRE(read_bytes(first) == read_bytes(second));
  std::remove(first.c_str());
  std::remove(second.c_str());
}

TEST_CASE("checkpoint rejects corruption and malformed files") {
  Rng rng(406);
  NamedParams params = demo_params(rng);
  const std::string path = temp_path("corrupt");
  save_checkpoint(path, "demo", params);
  const std::vector<std::uint8_t> good = read_bytes(path);

  SECTION("a flipped payload byte fails the checksum") {
    std::vector<std::uint8_t> bad = good;
    bad[bad.size() / 2] ^= 0x40;
    write_bytes(path, bad);
    REQUIRE_THROWS_AS(load_checkpoint(path), IoError);
    REQUIRE_THROWS_WITH(load_checkpoint(path), ContainsSubstring("checksum"));
  }
  SECTION("wrong magic is reported as not a checkpoint") {
    std::vector<std::uint8_t> bad = good;
    bad[0] = 'X';
    write_bytes(path, bad);
    REQUIRE_THROWS_WITH(load_checkpoint(path), ContainsSubstring("bad magic"));
  }
  SECTION("future format versions ask for migration") {
    std::vector<std::uint8_t> bad = good;
    bad[4] = 9;  // version field, little-endian low byte
    // Re-seal so only the version check can object.
    const std::uint32_t crc = crc32(bad.data(), bad.size() - 4);
    for (int i = 0; i < 4; ++i)
      bad[bad.size() - 4 + static_cast<std::size_t>(i)] =
          static_cast<std::uint8_t>((crc >> (8 * i)) & 0xFFu);
    write_bytes(path, bad);
    REQUIRE_THROWS_WITH(load_checkpoint(path), ContainsSubstring("migrate"));
  }
  SECTION("truncation is detected") {
    std::vector<std::uint8_t> bad(good.begin(), good.begin() + 9);
    write_bytes(path, bad);
    REQUIRE_THROWS_AS(load_checkpoint(path), IoError);
  }
  SECTION("missing files raise an io error") {
    REQUIRE_THROWS_AS(load_checkpoint("no_such_dir/absent.bin"), IoError);
  }
  std::remove(path.c_str());
}

TEST_CASE("apply_checkpoint restores values and polices mismatches") {
  Rng rng(407);
  NamedParams saved = demo_params(rng);
  const std::string path = temp_path("apply");
  save_checkpoint(path, "demo", saved);
  const Checkpoint ck = load_checkpoint(path);

  SECTION("values land in the live tensors") {
    NamedParams fresh = demo_params(rng);  // different random values
    REQUIRE(fresh[0].second.value() != saved[0].second.value());
    apply_checkpoint(ck, fresh, "demo");
    REQUIRE(fresh[0].second.value() == saved[0].second.value());
    REQUIRE(fresh[1].second.value() == saved[1].second.value());
  }
  SECTION("module tag mismatch names both modules") {
    NamedParams fresh = demo_params(rng);
    REQUIRE_THROWS_WITH(apply_checkpoint(ck, fresh, "other"),
                        ContainsSubstring("'demo'") && ContainsSubstring("'other'"));
  }
  SECTION("extra parameters are refused") {
    NamedParams fresh = demo_params(rng);
    fresh.emplace_back("demo.extra", Tensor::zeros({2, 2}));
    REQUIRE_THROWS_WITH(apply_checkpoint(ck, fresh, "demo"),
                        ContainsSubstring("parameter count"));
  }
  SECTION("renamed parameters are refused") {
    NamedParams fresh = demo_params(rng);
    fresh[1].first = "demo.bias";
    REQUIRE_THROWS_WITH(apply_checkpoint(ck, fresh, "demo"), ContainsSubstring("demo.b"));
  }
  SECTION("shape drift is refused") {
    NamedParams fresh;
    fresh.emplace_back("demo.W", Tensor::zeros({4, 3}));
    fresh.emplace_back("demo.b", Tensor::zeros({1, 4}));
    REQUIRE_THROWS_WITH(apply_checkpoint(ck, fresh, "demo"),
                        ContainsSubstring("mismatched shape"));
  }
  std::remove(path.c_str());
}

TEST_CASE("run config defaults survive an empty object and reject bad input") {
  const RunConfig defaults = run_config_from_json(nlohmann::json::object());
  REQUIRE(defaults.seed == 1);
  REQUIRE(defaults.K == 978);
  REQUIRE(defaults.L_max == 258);
  REQUIRE(defaults.T == 2000);
  REQUIRE(defaults.d_emb == 32);
  REQUIRE(defaults.d_o == 128);
  REQUIRE(defaults.lambda == 0.3f);
  REQUIRE(defaults.beta == 1.0f);
  REQUIRE(defaults.lr == 1e-4f);
  REQUIRE(defaults.dropout_omics == 0.2f);
  REQUIRE(defaults.dropout_diff == 0.1f);
  REQUIRE(defaults.ablation == "full");

  SECTION("overrides apply and validate") {
    nlohmann::json j = {{"T", 200}, {"skip_stride", 20}, {"ablation", "no-text"}};
    const RunConfig c = run_config_from_json(j);
    REQUIRE(c.T == 200);
    REQUIRE(c.skip_stride == 20);
    REQUIRE(c.ablation == "no-text");
  }
  SECTION("unknown keys are named in the error") {
    REQUIRE_THROWS_WITH(run_config_from_json({{"lamda", 0.5}}),
                        ContainsSubstring("unknown config key: lamda"));
  }
  SECTION("type errors are named") {
    REQUIRE_THROWS_WITH(run_config_from_json({{"T", "large"}}), ContainsSubstring("T"));
    REQUIRE_THROWS_WITH(run_config_from_json({{"lambda", "x"}}), ContainsSubstring("lambda"));
  }
  SECTION("range violations are rejected") {
    REQUIRE_THROWS_AS(run_config_from_json({{"T", 1}}), ConfigError);
    REQUIRE_THROWS_AS(run_config_from_json({{"skip_stride", 0}}), ConfigError);
    REQUIRE_THROWS_AS(run_config_from_json({{"skip_stride", 5000}}), ConfigError);
    REQUIRE_THROWS_AS(run_config_from_json({{"lambda", -0.1}}), ConfigError);
    REQUIRE_THROWS_AS(run_config_from_json({{"heads", 5}}), ConfigError);
    REQUIRE_THROWS_AS(run_config_from_json({{"ablation", "none"}}), ConfigError);
    REQUIRE_THROWS_AS(run_config_from_json({{"mask_ratio", 0.0}}), ConfigError);
  }
  SECTION("config files load and bad paths raise io errors") {
    const std::string path = temp_path("config.json");
    {
      std::ofstream f(path);
      f << "{\"seed\": 42, \"epochs\": 3}\n";
    }
    const RunConfig c = load_run_config(path);
    REQUIRE(c.seed == 42);
    REQUIRE(c.epochs == 3);
    std::remove(path.c_str());
    REQUIRE_THROWS_AS(load_run_config(path), IoError);
  }
  SECTION("non-JSON files are a config error") {
    const std::string path = temp_path("broken.json");
    {
      std::ofstream f(path);
      f << "{oops\n";
    }
    REQUIRE_THROWS_AS(load_run_config(path), ConfigError);
    std::remove(path.c_str());
  }
}
