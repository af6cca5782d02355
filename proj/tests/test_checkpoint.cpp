#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "mftnet/checkpoint.hpp"
#include "test_util.hpp"

using namespace mftnet;

namespace {

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(b.data(), std::streamsize(b.size()));
}

}  // namespace

TEST_CASE("checkpoint round trip restores every parameter and the config") {
  const auto dir = testutil::temp_dir("ckpt");
  for (Variant v : {Variant::full, Variant::eegnet_baseline}) {
    ModelConfig cfg = gradcheck_config(v);
    Model<double> m = build_model<double>(cfg, 3);
    std::mt19937_64 rng(4);
    for (Parameter<double>* p : m.all_parameters())
      for (auto& x : p->value.values()) x += std::normal_distribution<>(0, 0.1)(rng);
    const auto path = (dir / "m.mftw").string();
    save_checkpoint(path, m);
    Model<double> back = load_checkpoint<double>(path);
    CHECK(model_config_to_json(back.config()) == model_config_to_json(cfg));
    const auto a = m.snapshot(), b = back.snapshot();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(identical(a[i], b[i]));

    auto x = testutil::random_tensor<double>({2, cfg.electrodes, cfg.samples}, rng);
    CHECK(identical(m.predict(x), back.predict(x)));

    Model<float> f = load_checkpoint<float>(path);
    CHECK(max_abs_diff(f.predict(x.cast<float>()), m.predict(x).cast<float>()) < 1e-5);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto dir = testutil::temp_dir("ckpt-bad");
  Model<float> m = build_model<float>(gradcheck_config(), 1);
  const auto path = dir / "m.mftw";
  save_checkpoint(path.string(), m);
  const auto good = slurp(path);

  auto flipped = good;
  flipped[good.size() / 2] ^= 0x01;
  spit(path, flipped);
  CHECK_THROWS_AS(load_checkpoint<float>(path.string()), CheckpointError);

  auto magic = good;
  magic[0] = 'X';
  spit(path, magic);
  CHECK_THROWS_AS(load_checkpoint<float>(path.string()), CheckpointError);

  for (std::size_t len : {std::size_t(0), std::size_t(3), std::size_t(12), good.size() / 3, good.size() - 1}) {
    spit(path, std::vector<char>(good.begin(), good.begin() + std::ptrdiff_t(len)));
    CHECK_THROWS_AS(load_checkpoint<float>(path.string()), CheckpointError);
  }
  CHECK_THROWS_AS(load_checkpoint<float>((dir / "none.mftw").string()), CheckpointError);
  std::filesystem::remove_all(dir);
}
