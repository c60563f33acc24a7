#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "lbv/rng.hpp"
#include "lbv/tensor.hpp"
#include "test_util.hpp"

using namespace lbv;

TEST_CASE("tensor_new fills and validates shapes") {
  auto t = tensor_new<float>({2, 3}, 0.0f);
  CHECK(t.size() == 6);
  CHECK(t.shape() == Shape{2, 3});
  for (std::int64_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0f);

  auto ones = tensor_new<float>({64, 64, 11}, 1.0f);
  CHECK(ones.size() == 45056);
  CHECK(ones[ones.size() - 1] == 1.0f);

  CHECK_THROWS_AS(tensor_new<float>({3, 0}), ShapeError);
  CHECK_THROWS_AS(tensor_new<float>({-1, 2}), ShapeError);
  CHECK_THROWS_AS(tensor_new<float>({}), ShapeError);
}

TEST_CASE("from_data length check") {
  CHECK_THROWS_AS(Tensor<float>::from_data({2, 2}, {1.0f, 2.0f}), ShapeError);
  auto t = Tensor<float>::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(t(1, 0) == 3.0f);
}

TEST_CASE("permute_axes basics") {
  Pcg32 rng(7);
  auto t = testutil::random_tensor<float>({64, 64, 11}, rng);

  auto p = permute_axes(t, {0, 2, 1});
  CHECK(p.shape() == Shape{64, 11, 64});
  CHECK(p(3, 5, 9) == t(3, 9, 5));

  auto id = permute_axes(t, {0, 1, 2});
  CHECK(id == t);

  auto back = permute_axes(p, inverse_permutation({0, 2, 1}));
  CHECK(back == t);

  CHECK_THROWS_AS(permute_axes(t, {0, 1}), ShapeError);
  CHECK_THROWS_AS(permute_axes(t, {0, 1, 1}), ShapeError);
  CHECK_THROWS_AS(permute_axes(t, {0, 1, 3}), ShapeError);
}

TEST_CASE("permute_axes composes like the permutation group") {
  Pcg32 rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const int rank = 3 + static_cast<int>(rng.below(3));
    Shape shape;
    for (int a = 0; a < rank; ++a) shape.push_back(1 + rng.below(5));
    auto t = testutil::random_tensor<double>(shape, rng);

    std::vector<std::size_t> p1(static_cast<std::size_t>(rank)), p2 = p1;
    std::iota(p1.begin(), p1.end(), 0);
    std::iota(p2.begin(), p2.end(), 0);
    rng.shuffle(p1.begin(), p1.end());
    rng.shuffle(p2.begin(), p2.end());

    // Applying p1 then p2 must equal applying the composite permutation.
    auto two_step = permute_axes(permute_axes(t, p1), p2);
    std::vector<std::size_t> composite(static_cast<std::size_t>(rank));
    for (std::size_t a = 0; a < composite.size(); ++a) composite[a] = p1[p2[a]];
    CHECK(two_step == permute_axes(t, composite));

    CHECK(permute_axes(permute_axes(t, p1), inverse_permutation(p1)) == t);
  }
}

TEST_CASE("tensor file round-trip is bit-exact for all ranks and dtypes") {
  testutil::TempDir tmp("tensor");
  Pcg32 rng(99);
  for (int rank = 1; rank <= 5; ++rank) {
    for (int trial = 0; trial < 4; ++trial) {
      Shape shape;
      for (int a = 0; a < rank; ++a) shape.push_back(1 + rng.below(4));  // includes length-1 axes
      auto tf = testutil::random_tensor<float>(shape, rng);
      auto td = testutil::random_tensor<double>(shape, rng);
      save_tensor(tf, tmp.file("a.lbvt"));
      save_tensor(td, tmp.file("b.lbvt"));
      CHECK(load_tensor<float>(tmp.file("a.lbvt")) == tf);
      CHECK(load_tensor<double>(tmp.file("b.lbvt")) == td);
    }
  }
}

TEST_CASE("tensor file parse errors are distinct") {
  testutil::TempDir tmp("badtensor");
  Pcg32 rng(5);
  auto t = testutil::random_tensor<float>({2, 3}, rng);
  save_tensor(t, tmp.file("t.lbvt"));

  auto read_all = [&](const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  auto write_all = [&](const std::string& p, const std::string& bytes) {
    std::ofstream os(p, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  };
  const std::string good = read_all(tmp.file("t.lbvt"));

  SUBCASE("bad magic") {
    std::string bad = good;
    bad[0] = 'X';
    write_all(tmp.file("bad.lbvt"), bad);
    CHECK_THROWS_WITH_AS(load_tensor<float>(tmp.file("bad.lbvt")), "bad tensor magic", ParseError);
  }
  SUBCASE("bad dtype code") {
    std::string bad = good;
    bad[6] = 7;  // dtype byte
    write_all(tmp.file("bad.lbvt"), bad);
    CHECK_THROWS_AS(load_tensor<float>(tmp.file("bad.lbvt")), ParseError);
  }
  SUBCASE("dtype mismatch") {
    CHECK_THROWS_AS(load_tensor<double>(tmp.file("t.lbvt")), ParseError);
    CHECK(peek_tensor_dtype(tmp.file("t.lbvt")) == 1);
  }
  SUBCASE("truncated payload") {
    write_all(tmp.file("bad.lbvt"), good.substr(0, good.size() - 5));
    CHECK_THROWS_AS(load_tensor<float>(tmp.file("bad.lbvt")), ParseError);
  }
  SUBCASE("truncated header") {
    write_all(tmp.file("bad.lbvt"), good.substr(0, 9));
    CHECK_THROWS_AS(load_tensor<float>(tmp.file("bad.lbvt")), ParseError);
  }
}

TEST_CASE("pcg32 matches the published reference stream") {
  // Reference output of the pcg32 demo program: seed 42, stream 54.
  Pcg32 rng(42, 54);
  const std::uint32_t expected[] = {0xa15c02b7u, 0x7b47f409u, 0xba1d3330u,
                                    0x83d2f293u, 0xbfa4784bu, 0xcbed606eu};
  for (auto e : expected) CHECK(rng.next_u32() == e);
}

TEST_CASE("rng determinism and uniform range") {
  Pcg32 a(42), b(42);
  auto va = rng_uniform(a, 1000);
  auto vb = rng_uniform(b, 1000);
  CHECK(va == vb);
  for (double v : va) {
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
  Pcg32 c(43);
  CHECK(rng_uniform(c, 1000) != va);

  Pcg32 d(1);
  CHECK(rng_uniform(d, 0).empty());
}

TEST_CASE("rng sample mean obeys the law of large numbers") {
  Pcg32 rng(2024);
  const int n = 100000;
  double sum = 0;
  for (int i = 0; i < n; ++i) sum += rng.uniform();
  // Tolerance 0.01 is ~11 standard errors (SE = sqrt(1/12)/sqrt(n) ~ 9.1e-4).
  CHECK(std::abs(sum / n - 0.5) < 0.01);
}

TEST_CASE("rng child streams are stable and independent of parent position") {
  Pcg32 parent(77);
  auto c1 = parent.child(3);
  parent.uniform();
  parent.uniform();
  auto c2 = parent.child(3);
  CHECK(rng_uniform(c1, 10) == rng_uniform(c2, 10));

  auto other = Pcg32(77).child(4);
  Pcg32 c3 = Pcg32(77).child(3);
  CHECK(rng_uniform(c3, 10) != rng_uniform(other, 10));
}

TEST_CASE("rng normal draws have sane moments") {
  Pcg32 rng(5150);
  const int n = 50000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("seeded rng reproduces the frozen golden sequence") {
  // First 100 outputs of Pcg32(20240902) with the default stream, committed
  // as a cross-platform regression anchor.
  Pcg32 rng(20240902);
  std::vector<std::uint32_t> got;
  for (int i = 0; i < 100; ++i) got.push_back(rng.next_u32());
  const std::vector<std::uint32_t> golden = {
#include "golden_pcg32.inc"
  };
  REQUIRE(golden.size() == 100);
  CHECK(got == golden);
}

TEST_CASE("max_rel_deviation and helpers") {
  auto a = Tensor<float>::from_data({3}, {1.0f, 2.0f, 4.0f});
  auto b = Tensor<float>::from_data({3}, {1.0f, 2.0f, 4.00004f});
  CHECK(max_rel_deviation(a, b) == doctest::Approx(1e-5).epsilon(0.5));
  CHECK(max_abs(a) == 4.0f);
  CHECK(all_finite(a));
  auto c = Tensor<float>::from_data({1}, {std::numeric_limits<float>::quiet_NaN()});
  CHECK(!all_finite(c));
}
