#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "hitrans/errors.hpp"
#include "hitrans/gradcheck.hpp"
#include "hitrans/tensor.hpp"
#include "test_util.hpp"

using namespace hitrans;
using testutil::max_fd_error;
using testutil::probe;
using testutil::random_tensor;

namespace {

std::vector<Real> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("matmul hand values and identity") {
  const auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  const auto b = Tensor::from_data({2, 1}, {1, 1});
  CHECK(values(matmul(a, b)) == std::vector<Real>{3, 7});

  const auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  const auto m = Tensor::from_data({2, 3}, {1, -2, 3.5, 0, 7, -1});
  CHECK(values(matmul(eye, m)) == values(m));

  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 1})), DimensionError);
}

TEST_CASE("elementwise add, broadcast and concat shapes") {
  const auto x = Tensor::from_data({2}, {1, 2});
  CHECK(values(add(x, Tensor::from_data({2}, {10, 20}))) == std::vector<Real>{11, 22});
  CHECK(values(add(x, Tensor::zeros({2}))) == values(x));

  const auto rows = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(values(add(rows, Tensor::from_data({2}, {10, 100}))) == std::vector<Real>{11, 102, 13, 104});
  CHECK_THROWS_AS(add(rows, Tensor::zeros({3})), DimensionError);

  std::vector<Tensor> parts{Tensor::zeros({3, 2}), Tensor::zeros({3, 5})};
  CHECK(concat(parts, 1).shape() == Shape{3, 7});
  std::vector<Tensor> mismatched{Tensor::zeros({3, 2}), Tensor::zeros({4, 5})};
  CHECK_THROWS_AS(concat(mismatched, 1), DimensionError);
}

TEST_CASE("softmax values and properties") {
  const auto p = softmax_rows(Tensor::from_data({1, 2}, {0.0, std::log(3.0)}));
  CHECK(p.at(0, 0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(p.at(0, 1) == doctest::Approx(0.75).epsilon(1e-15));

  const auto u = softmax_rows(Tensor::full({1, 4}, 2.5));
  for (std::size_t j = 0; j < 4; ++j) CHECK(u.at(0, j) == 0.25);

  std::mt19937_64 rng(3);
  const auto x = random_tensor({5, 7}, rng, 4.0, false);
  const auto s = softmax_rows(x);
  for (std::size_t i = 0; i < 5; ++i) {
    Real total = 0;
    for (std::size_t j = 0; j < 7; ++j) {
      CHECK(s.at(i, j) >= 0.0);
      total += s.at(i, j);
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
  const auto shifted = softmax_rows(add(x, Tensor::full({5, 7}, 13.0)));
  for (std::size_t k = 0; k < s.numel(); ++k) CHECK(std::abs(s.data()[k] - shifted.data()[k]) < 1e-15);
}

TEST_CASE("softmax key mask") {
  const std::vector<std::uint8_t> mask{1, 0, 1};
  const auto s = softmax_rows(Tensor::from_data({2, 3}, {1, 50, 1, 0, 0, 2}), mask);
  CHECK(s.at(0, 1) == 0.0);
  CHECK(s.at(1, 1) == 0.0);
  CHECK(s.at(0, 0) == doctest::Approx(0.5));
  const std::vector<std::uint8_t> none{0, 0, 0};
  CHECK_THROWS_AS(softmax_rows(Tensor::zeros({1, 3}), none), ContractError);
}

TEST_CASE("layer norm normalises rows") {
  const auto g = Tensor::full({3}, 1.0);
  const auto b = Tensor::zeros({3});
  const auto y = layer_norm(Tensor::from_data({1, 3}, {1, 2, 3}), g, b);
  const Real mean = (y.at(0) + y.at(1) + y.at(2)) / 3;
  Real var = 0;
  for (int i = 0; i < 3; ++i) var += (y.at(i) - mean) * (y.at(i) - mean) / 3;
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::abs(var - 1.0) < 1e-6);

  const auto c = layer_norm(Tensor::full({2, 3}, 4.2), g, b);
  for (Real v : c.data()) CHECK(v == 0.0);
}

TEST_CASE("selu and gelu values") {
  const auto y = selu(Tensor::from_data({3}, {0.0, 1.0, -1.0}));
  CHECK(y.at(0) == 0.0);
  CHECK(y.at(1) == doctest::Approx(1.0507009873554805).epsilon(1e-15));
  CHECK(y.at(2) == doctest::Approx(1.0507009873554805 * 1.6732632423543772 * (std::exp(-1.0) - 1.0)).epsilon(1e-14));
  CHECK(y.at(2) == doctest::Approx(-1.11133).epsilon(1e-5));

  const auto g = gelu(Tensor::from_data({2}, {0.0, 1.0}));
  CHECK(g.at(0) == 0.0);
  CHECK(g.at(1) == doctest::Approx(0.5 * (1.0 + std::erf(1.0 / std::numbers::sqrt2))).epsilon(1e-14));
}

TEST_CASE("dropout modes") {
  Rng rng(11);
  const auto x = Tensor::full({4, 4}, 3.0);
  CHECK(dropout(x, 0.0, Mode::train, &rng).same_node(x));
  CHECK(dropout(x, 0.5, Mode::eval, nullptr).same_node(x));
  CHECK_THROWS_AS(dropout(x, 1.0, Mode::train, &rng), ConfigError);
  CHECK_THROWS_AS(dropout(x, -0.1, Mode::train, &rng), ConfigError);

  Rng r1(5), r2(5);
  CHECK(values(dropout(x, 0.3, Mode::train, &r1)) == values(dropout(x, 0.3, Mode::train, &r2)));

  const std::size_t n = 100000;
  const Real p = 0.3;
  Rng r3(8);
  const auto big = dropout(Tensor::full({n}, 1.0), p, Mode::train, &r3);
  std::size_t survivors = 0;
  for (Real v : big.data()) {
    if (v != 0.0) {
      ++survivors;
      CHECK(v == doctest::Approx(1.0 / (1.0 - p)).epsilon(1e-15));
    }
  }
  CHECK(std::abs(static_cast<double>(survivors) / n - (1.0 - p)) < 0.01);
}

TEST_CASE("max pool over rows") {
  const std::vector<std::uint8_t> all{1, 1};
  CHECK(values(max_pool_rows(Tensor::from_data({2, 2}, {1, 4, 3, 2}), all)) == std::vector<Real>{3, 4});
  const auto single = Tensor::from_data({1, 3}, {-1, 5, 2});
  const std::vector<std::uint8_t> one{1};
  CHECK(values(max_pool_rows(single, one)) == values(single));
  const std::vector<std::uint8_t> skip_first{0, 1};
  CHECK(values(max_pool_rows(Tensor::from_data({2, 2}, {9, 9, 3, 2}), skip_first)) == std::vector<Real>{3, 2});
  const std::vector<std::uint8_t> nothing{0, 0};
  CHECK_THROWS_AS(max_pool_rows(Tensor::zeros({2, 2}), nothing), ContractError);

  // ties route the gradient to the first row
  const auto tied = Tensor::from_data({2, 1}, {1.0, 1.0}, true);
  backward(sum(max_pool_rows(tied, all)));
  CHECK(values(Tensor::from_data({2}, {tied.grad()[0], tied.grad()[1]})) == std::vector<Real>{1, 0});
}

TEST_CASE("embedding lookup and scatter-add gradient") {
  const auto table = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  const std::vector<std::int32_t> first{0};
  CHECK(values(embedding_lookup(table, first)) == std::vector<Real>{1, 2, 3});

  const std::vector<std::int32_t> twice{1, 1};
  const auto out = embedding_lookup(table, twice);
  CHECK(values(out) == std::vector<Real>{4, 5, 6, 4, 5, 6});
  const auto w = Tensor::from_data({2, 3}, {1, 2, 3, 10, 20, 30});
  backward(probe(out, w));
  CHECK(std::vector<Real>(table.grad().begin(), table.grad().end()) ==
        std::vector<Real>{0, 0, 0, 11, 22, 33});

  const std::vector<std::int32_t> out_of_range{2};
  CHECK_THROWS_AS(embedding_lookup(table, out_of_range), IndexError);
  CHECK_THROWS_AS(embedding_lookup(table, std::span<const std::int32_t>{}), ContractError);
}

TEST_CASE("backward closed forms, unreachable tensors and accumulation") {
  const auto x = Tensor::from_data({3}, {1.5, -2.0, 0.25}, true);
  const auto unused = Tensor::from_data({2}, {1, 1}, true);
  const auto loss = sum(mul(x, x));
  backward(loss);
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == 2 * x.at(i));
  CHECK((!unused.has_grad() || (unused.grad()[0] == 0.0 && unused.grad()[1] == 0.0)));

  CHECK_THROWS_AS(backward(x), ContractError);
}

TEST_CASE("backward twice on one record doubles gradients exactly") {
  std::mt19937_64 gen(21);
  const auto a = random_tensor({3, 4}, gen);
  const auto b = random_tensor({4, 2}, gen);
  const auto gamma = random_tensor({2}, gen);
  const auto beta = random_tensor({2}, gen);
  const auto loss = sum(selu(layer_norm(matmul(a, b), gamma, beta)));
  const auto record = DiffRecord::trace(loss);
  backward(loss, record);
  const std::vector<Real> once(a.grad().begin(), a.grad().end());
  const std::vector<Real> once_b(b.grad().begin(), b.grad().end());
  backward(loss, record);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(a.grad()[i] == 2 * once[i]);
  for (std::size_t i = 0; i < once_b.size(); ++i) CHECK(b.grad()[i] == 2 * once_b[i]);
}

TEST_CASE("gradient of the picked softmax probability is p_y (y - p)") {
  const auto logits = Tensor::from_data({1, 3}, {0.2, -1.0, 0.7}, true);
  const auto p = softmax_rows(logits);
  const auto onehot = Tensor::from_data({1, 3}, {0, 1, 0});
  backward(sum(mul(p, onehot)));
  // so d(-log p_y)/dz = -grad / p_y = p - y
  for (std::size_t j = 0; j < 3; ++j) {
    const Real expected = p.at(0, j) - onehot.at(0, j);
    CHECK(-logits.grad()[j] / p.at(0, 1) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("every differentiable op matches finite differences") {
  std::mt19937_64 gen(42);
  const auto a = random_tensor({3, 4}, gen);
  const auto b = random_tensor({4, 2}, gen);
  const auto c = random_tensor({3, 4}, gen);
  const auto v = random_tensor({4}, gen);
  const auto w34 = random_tensor({3, 4}, gen, 1.0, false);
  const auto w32 = random_tensor({3, 2}, gen, 1.0, false);
  const auto w43 = random_tensor({4, 3}, gen, 1.0, false);
  const auto w38 = random_tensor({3, 8}, gen, 1.0, false);
  const auto w4 = random_tensor({4}, gen, 1.0, false);
  const auto w26 = random_tensor({2, 6}, gen, 1.0, false);
  const auto w32b = random_tensor({3, 2}, gen, 1.0, false);
  constexpr double tol = 1e-6;

  CHECK(max_fd_error([&] { return probe(matmul(a, b), w32); }, {a, b}) < tol);
  CHECK(max_fd_error([&] { return sum(matmul(a, b)); }, {a}) < tol);
  CHECK(max_fd_error([&] { return probe(add(a, c), w34); }, {a, c}) < tol);
  CHECK(max_fd_error([&] { return probe(add(a, v), w34); }, {a, v}) < tol);
  CHECK(max_fd_error([&] { return probe(sub(a, c), w34); }, {a, c}) < tol);
  CHECK(max_fd_error([&] { return probe(mul(a, c), w34); }, {a, c}) < tol);
  CHECK(max_fd_error([&] { return probe(scale(a, -2.5), w34); }, {a}) < tol);
  CHECK(max_fd_error([&] {
          std::vector<Tensor> parts{a, c};
          return probe(concat(parts, 1), w38);
        }, {a, c}) < tol);
  CHECK(max_fd_error([&] {
          std::vector<Tensor> rows{v, mul(v, w4)};
          return sum(mul(stack(rows), Tensor::from_data({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8})));
        }, {v}) < tol);
  CHECK(max_fd_error([&] { return probe(reshape(a, {2, 6}), w26); }, {a}) < tol);
  CHECK(max_fd_error([&] { return probe(transpose(a), w43); }, {a}) < tol);
  CHECK(max_fd_error([&] { return probe(slice_cols(a, 1, 2), w32b); }, {a}) < tol);
  CHECK(max_fd_error([&] { return probe(softmax_rows(a), w34); }, {a}) < tol);
  const std::vector<std::uint8_t> key_mask{1, 0, 1, 1};
  CHECK(max_fd_error([&] { return probe(softmax_rows(a, key_mask), w34); }, {a}) < tol);
  CHECK(max_fd_error([&] { return probe(layer_norm(a, v, w4.detach()), w34); }, {a, v}) < tol);
  const auto beta = random_tensor({4}, gen);
  CHECK(max_fd_error([&] { return probe(layer_norm(a, v, beta), w34); }, {beta}) < tol);
  CHECK(max_fd_error([&] { return probe(selu(a), w34); }, {a}) < tol);
  CHECK(max_fd_error([&] { return probe(gelu(a), w34); }, {a}) < tol);
  const std::vector<std::uint8_t> rows_mask{1, 0, 1};
  CHECK(max_fd_error([&] { return probe(max_pool_rows(a, rows_mask), w4); }, {a}) < tol);
  const auto table = random_tensor({5, 4}, gen);
  const std::vector<std::int32_t> ids{3, 0, 3};
  CHECK(max_fd_error([&] { return probe(embedding_lookup(table, ids), w34); }, {table}) < tol);
}

TEST_CASE("forward ops are pure") {
  std::mt19937_64 gen(9);
  const auto a = random_tensor({4, 6}, gen, 1.0, false);
  const auto g = random_tensor({6}, gen, 1.0, false);
  const auto b = random_tensor({6}, gen, 1.0, false);
  CHECK(values(layer_norm(gelu(a), g, b)) == values(layer_norm(gelu(a), g, b)));
  CHECK(values(softmax_rows(selu(a))) == values(softmax_rows(selu(a))));
}

TEST_CASE("grad_check on a quadratic and its preconditions") {
  std::mt19937_64 gen(4);
  auto x = random_tensor({6}, gen);
  const auto w = random_tensor({6}, gen, 1.0, false);
  std::vector<Tensor> params{x};
  Rng rng(1);
  const auto f = [&] { return sum(mul(mul(x, x), w)); };
  const auto r = grad_check(f, params, 1e-5, 50, rng);
  CHECK(r.samples == 50);
  CHECK(r.max_rel_error < 1e-9);

  CHECK_THROWS_AS(grad_check(f, params, 1e-2, 5, rng), ConfigError);
  CHECK_THROWS_AS(grad_check(f, params, 1e-9, 5, rng), ConfigError);

  Rng drop_rng(2);
  const auto noisy = [&] { return sum(dropout(mul(x, x), 0.5, Mode::train, &drop_rng)); };
  CHECK_THROWS_AS(grad_check(noisy, params, 1e-5, 5, rng), ContractError);
}

TEST_CASE("no-grad guard skips recording") {
  const auto x = Tensor::from_data({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    CHECK(!grad_enabled());
    y = mul(x, x);
  }
  CHECK(grad_enabled());
  CHECK(!y.requires_grad());
}
