#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdint>
#include <fstream>

#include "doctest.h"
#include "lbv/bank.hpp"
#include "test_util.hpp"

using namespace lbv;

TEST_CASE("sparsity boundaries") {
  auto dense = generate_bank(4, 1.0f, 9);
  for (auto e : dense.entries()) CHECK(e != 0);

  auto empty = generate_bank(4, 0.0f, 9);
  for (auto e : empty.entries()) CHECK(e == 0);

  CHECK_THROWS_AS(generate_bank(4, 1.5f, 9), ValidationError);
  CHECK_THROWS_AS(generate_bank(4, -0.1f, 9), ValidationError);
  CHECK_THROWS_AS(generate_bank(0, 0.9f, 9), ValidationError);
}

TEST_CASE("default bank matches binomial concentration bounds") {
  auto bank = generate_bank(64, 0.9f, 1234);
  CHECK(bank.count() == 64);
  CHECK(bank.entries().size() == 1728);

  std::int64_t nonzero = 0, plus = 0;
  for (auto e : bank.entries()) {
    CHECK(e >= -1);
    CHECK(e <= 1);
    nonzero += (e != 0);
    plus += (e == 1);
  }
  // 4 binomial SDs around 0.9 over 1728 entries: [0.871, 0.929].
  const double nz_frac = static_cast<double>(nonzero) / 1728.0;
  CHECK(nz_frac > 0.871);
  CHECK(nz_frac < 0.929);
  // Sign symmetry among non-zeros, 4 SDs around 0.5.
  const double plus_frac = static_cast<double>(plus) / static_cast<double>(nonzero);
  const double sd = 0.5 / std::sqrt(static_cast<double>(nonzero));
  CHECK(std::abs(plus_frac - 0.5) < 4 * sd);
}

TEST_CASE("generation agrees with an independent per-entry sampler") {
  // Replays the documented sampling scheme entry by entry: one uniform for
  // the zero/non-zero decision, one for the sign.
  const std::uint64_t seed = 777;
  auto bank = generate_bank(8, 0.75f, seed);
  Pcg32 rng(seed, 0x17);
  for (auto e : bank.entries()) {
    std::int8_t expect = 0;
    if (rng.uniform() < 0.75) expect = rng.uniform() < 0.5 ? 1 : -1;
    CHECK(e == expect);
  }
}

TEST_CASE("same parameters give identical banks") {
  auto a = generate_bank(64, 0.9f, 42);
  auto b = generate_bank(64, 0.9f, 42);
  CHECK(a.id() == b.id());
  CHECK(a.entries() == b.entries());
  auto c = generate_bank(64, 0.9f, 43);
  CHECK(a.id() != c.id());
}

TEST_CASE("dense embedding round-trips every entry") {
  auto bank = generate_bank(6, 0.8f, 11);
  auto w = bank_as_dense_weights<float>(bank);
  CHECK(w.shape() == Shape{6, 3, 3, 3});
  for (std::int64_t i = 0; i < w.size(); ++i)
    CHECK(static_cast<std::int8_t>(w[i]) == bank.entries()[static_cast<std::size_t>(i)]);

  auto zero = generate_bank(2, 0.0f, 1);
  auto wz = bank_as_dense_weights<float>(zero);
  for (std::int64_t i = 0; i < wz.size(); ++i) CHECK(wz[i] == 0.0f);

  auto tiled = bank_as_dense_weights<float>(bank, 3);
  CHECK(tiled.shape() == Shape{6, 3, 3, 3, 3});
  for (std::int64_t f = 0; f < 6; ++f)
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t k = 0; k < 27; ++k)
        CHECK(tiled[f * 81 + c * 27 + k] == w[f * 27 + k]);
}

TEST_CASE("single all-ones filter embeds as 27 ones") {
  TernaryFilterBank bank(1, 1.0f, 0, std::vector<std::int8_t>(27, 1));
  auto w = bank_as_dense_weights<float>(bank);
  CHECK(w.size() == 27);
  for (std::int64_t i = 0; i < 27; ++i) CHECK(w[i] == 1.0f);
}

TEST_CASE("bank file round-trip preserves id") {
  testutil::TempDir tmp("bank");
  auto bank = generate_bank(64, 0.9f, 2025);
  save_bank(bank, tmp.file("b.lbvb"));
  auto loaded = load_bank(tmp.file("b.lbvb"));
  CHECK(loaded.id() == bank.id());
  CHECK(loaded.entries() == bank.entries());
  CHECK(loaded.sparsity() == bank.sparsity());
  CHECK(loaded.seed() == bank.seed());
}

TEST_CASE("bank file validation") {
  testutil::TempDir tmp("badbank");
  auto bank = generate_bank(2, 0.9f, 3);
  save_bank(bank, tmp.file("b.lbvb"));

  std::ifstream is(tmp.file("b.lbvb"), std::ios::binary);
  std::string bytes(std::istreambuf_iterator<char>(is), {});
  is.close();

  SUBCASE("entry outside the ternary domain") {
    bytes[bytes.size() - 1] = 2;
    std::ofstream os(tmp.file("bad.lbvb"), std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    os.close();
    CHECK_THROWS_AS(load_bank(tmp.file("bad.lbvb")), ValidationError);
  }
  SUBCASE("bad magic") {
    bytes[0] = 'Z';
    std::ofstream os(tmp.file("bad.lbvb"), std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    os.close();
    CHECK_THROWS_AS(load_bank(tmp.file("bad.lbvb")), ParseError);
  }
  SUBCASE("truncated entries") {
    std::ofstream os(tmp.file("bad.lbvb"), std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
    os.close();
    CHECK_THROWS_AS(load_bank(tmp.file("bad.lbvb")), ParseError);
  }
}

TEST_CASE("constructor rejects malformed entry vectors") {
  CHECK_THROWS_AS(TernaryFilterBank(2, 0.9f, 0, std::vector<std::int8_t>(27, 0)),
                  ValidationError);
  CHECK_THROWS_AS(TernaryFilterBank(1, 0.9f, 0, std::vector<std::int8_t>(27, 5)),
                  ValidationError);
}
