#include <doctest.h>

#include "pplr/neighbors.hpp"
#include "test_util.hpp"

using namespace pplr;

namespace {

DistanceMatrix from_rows(const oracle::Dense& d) { return {testutil::from_dense(d), Metric::kSquaredEuclidean}; }

}  // namespace

TEST_CASE("pairwise squared euclidean") {
  Matrix x(2, 2);
  x(1, 0) = 3;
  x(1, 1) = 4;
  const auto d = pairwise_sq_euclidean(x);
  CHECK(d(0, 1) == 25.0);
  CHECK(d(1, 0) == 25.0);
  CHECK(d(0, 0) == 0.0);

  Rng rng(11);
  for (int t = 0; t < 10; ++t) {
    const Matrix m = testutil::random_matrix(5, 3, rng);
    const auto got = pairwise_sq_euclidean(m);
    const auto want = oracle::sq_dists(testutil::to_dense(m));
    CHECK(got.is_symmetric(0.0));
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(got(i, j) - want[i][j]) <= 1e-10);
  }
}

TEST_CASE("top-k lists sort by distance and break ties by index") {
  const auto d = from_rows({{0, 1, 2, 3}, {1, 0, 1, 1}, {2, 1, 0, 1}, {3, 1, 1, 0}});
  const auto lists = topk_ranked_lists(d, 2, 0);
  CHECK(lists.row(0)[0] == 1);
  CHECK(lists.row(0)[1] == 2);
  CHECK(lists.row(1)[0] == 0);  // 0, 2, 3 all at 1
  CHECK(lists.row(1)[1] == 2);

  oracle::Dense tie(8, std::vector<double>(8, 5.0));
  for (std::size_t i = 0; i < 8; ++i) tie[i][i] = 0;
  tie[0][4] = tie[4][0] = tie[0][7] = tie[7][0] = 1.0;
  const auto t = topk_ranked_lists(from_rows(tie), 2, 0);
  CHECK(t.row(0)[0] == 4);
  CHECK(t.row(0)[1] == 7);

  CHECK_THROWS_AS(topk_ranked_lists(d, 4, 0), std::invalid_argument);
  const auto with_self = initial_rank_with_self(d, 2);
  CHECK(with_self[2] == std::vector<std::uint32_t>{2, 1, 3});
}

TEST_CASE("top-k lists are invariant under monotone transforms") {
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    const auto d = pairwise_sq_euclidean(testutil::random_matrix(30, 4, rng));
    DistanceMatrix warped = d;
    for (auto& v : warped.values.data()) v = std::exp(3.0 * std::sqrt(v)) - 1.0;
    CHECK(topk_ranked_lists(d, 10, 0).lists == topk_ranked_lists(warped, 10, 0).lists);
  }
}

TEST_CASE("euclidean and cosine rankings agree on normalized rows") {
  Rng rng(6);
  const Matrix x = l2_normalize(testutil::random_matrix(40, 8, rng));
  DistanceMatrix cosine{Matrix(40, 40), Metric::kSquaredEuclidean};
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = 0; j < 40; ++j) cosine.values(i, j) = i == j ? 0.0 : 1.0 - dot(x.row(i), x.row(j));
  CHECK(topk_ranked_lists(pairwise_sq_euclidean(x), 12, 0).lists == topk_ranked_lists(cosine, 12, 0).lists);
}

TEST_CASE("jaccard distance on duplicates is zero") {
  Rng rng(8);
  Matrix x = l2_normalize(testutil::random_matrix(12, 4, rng));
  for (std::size_t k = 0; k < 4; ++k) x(5, k) = x(2, k);
  const auto d = k_reciprocal_jaccard(x, {6, 2, 0.0});
  CHECK(d(2, 5) <= 1e-6);
}

TEST_CASE("jaccard with lambda 1 is the max-normalized euclidean matrix") {
  Rng rng(9);
  const Matrix x = testutil::random_matrix(15, 3, rng);
  const auto d = k_reciprocal_jaccard(x, {5, 2, 1.0});
  const auto e = pairwise_sq_euclidean(x);
  const double mx = *std::max_element(e.values.data().begin(), e.values.data().end());
  for (std::size_t i = 0; i < 15; ++i)
    for (std::size_t j = 0; j < 15; ++j) CHECK(d(i, j) == doctest::Approx(e(i, j) / mx).epsilon(1e-12));
}

TEST_CASE("jaccard matches the dense oracle on a two-blob layout") {
  oracle::Dense pts;
  for (int i = 0; i < 5; ++i) pts.push_back({0.05 * i, 0.02 * (i % 2)});
  for (int i = 0; i < 5; ++i) pts.push_back({1.0 + 0.04 * i, 1.0 - 0.03 * (i % 3)});
  const auto want = oracle::k_reciprocal_jaccard(pts, 4, 2, 0.0);
  const auto got = k_reciprocal_jaccard(testutil::from_dense(pts), {4, 2, 0.0});
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 10; ++j) CHECK(std::abs(got(i, j) - want[i][j]) <= 1e-6);
  // Blobs come out far apart.
  CHECK(got(0, 9) == doctest::Approx(1.0));
  CHECK(got(0, 1) < 0.5);
}

TEST_CASE("jaccard output is symmetric, bounded, zero on the diagonal") {
  Rng rng(10);
  for (int t = 0; t < 5; ++t) {
    const Matrix x = l2_normalize(testutil::blobs(60, 6, 4, 0.2, rng));
    const auto d = k_reciprocal_jaccard(x, {10, 3, 0.0});
    CHECK(d.is_symmetric(0.0));
    for (std::size_t i = 0; i < 60; ++i) {
      CHECK(d(i, i) == 0.0);
      for (std::size_t j = 0; j < 60; ++j) CHECK((d(i, j) >= 0.0 && d(i, j) <= 1.0));
    }
  }
}

TEST_CASE("jaccard rejects bad parameters") {
  Matrix x(5, 2, 1.0);
  CHECK_THROWS(k_reciprocal_jaccard(x, {0, 1, 0.0}));
  CHECK_THROWS(k_reciprocal_jaccard(x, {3, 1, 1.5}));
}
