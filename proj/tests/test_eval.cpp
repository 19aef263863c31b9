#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "nfs/error.hpp"
#include "nfs/eval.hpp"
#include "support/oracles.hpp"

using namespace nfs;

namespace {

EmbeddingBatch embeddings_of(Shape shape, std::vector<double> values,
                             std::vector<int> ids) {
  EmbeddingBatch batch;
  batch.vectors = Tensor::from_values(std::move(shape), std::move(values));
  batch.identities = std::move(ids);
  batch.modalities.assign(batch.identities.size(), Modality::kRgb);
  return batch;
}

std::vector<std::vector<int>> orders_of(const std::vector<RankedList>& ranked) {
  std::vector<std::vector<int>> out;
  for (const auto& r : ranked) out.push_back(r.gallery_order);
  return out;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("query vector present in the gallery ranks first") {
  EmbeddingBatch query = embeddings_of({1, 3}, {1, 2, 3}, {0});
  EmbeddingBatch gallery =
      embeddings_of({3, 3}, {3, 1, 2, 1, 2, 3, -1, -2, -3}, {5, 0, 7});
  auto ranked = rank_gallery(query, gallery);
  CHECK(ranked[0].gallery_order[0] == 1);
  CHECK(ranked[0].scores[0] == doctest::Approx(1.0));
}

TEST_CASE("orthogonal vectors score zero, zero vectors score zero by convention") {
  EmbeddingBatch query = embeddings_of({1, 2}, {1, 0}, {0});
  EmbeddingBatch gallery = embeddings_of({2, 2}, {0, 1, 0, 0}, {0, 1});
  auto ranked = rank_gallery(query, gallery);
  CHECK(ranked[0].scores[0] == 0.0);
  CHECK(ranked[0].scores[1] == 0.0);
  // tie broken by gallery index
  CHECK(ranked[0].gallery_order[0] == 0);
  CHECK(ranked[0].gallery_order[1] == 1);
}

TEST_CASE("ranking matches a naive oracle on random cases") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int nq = 10, ng = 10, d = 4;
    std::vector<double> q(nq * d), g(ng * d);
    for (auto& v : q) v = rng.normal();
    for (auto& v : g) v = rng.normal();
    EmbeddingBatch query = embeddings_of({nq, d}, q, std::vector<int>(nq, 0));
    EmbeddingBatch gallery = embeddings_of({ng, d}, g, std::vector<int>(ng, 0));
    auto ranked = rank_gallery(query, gallery);

    for (int i = 0; i < nq; ++i) {
      std::vector<std::pair<double, int>> scored;
      for (int j = 0; j < ng; ++j) {
        double dot = 0.0, qq = 0.0, gg = 0.0;
        for (int k = 0; k < d; ++k) {
          dot += q[static_cast<std::size_t>(i * d + k)] * g[static_cast<std::size_t>(j * d + k)];
          qq += q[static_cast<std::size_t>(i * d + k)] * q[static_cast<std::size_t>(i * d + k)];
          gg += g[static_cast<std::size_t>(j * d + k)] * g[static_cast<std::size_t>(j * d + k)];
        }
        scored.emplace_back(dot / std::sqrt(qq * gg), j);
      }
      std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      for (int j = 0; j < ng; ++j) {
        CHECK(ranked[static_cast<std::size_t>(i)].gallery_order[static_cast<std::size_t>(j)] ==
              scored[static_cast<std::size_t>(j)].second);
      }
    }
  }
}

TEST_CASE("cmc first hit at rank 2 gives [0,1,1]") {
  RankedList list;
  list.gallery_order = {0, 1, 2};
  list.scores = {0.9, 0.8, 0.7};
  const std::vector<int> gallery_ids = {7, 4, 4};  // ranked ids: B, A, A
  const auto cmc = cmc_curve({list}, {4}, gallery_ids, 3);
  CHECK(cmc == std::vector<double>{0.0, 1.0, 1.0});
}

TEST_CASE("perfect retrieval saturates the cmc") {
  RankedList list;
  list.gallery_order = {0, 1};
  list.scores = {1.0, 0.5};
  const auto cmc = cmc_curve({list}, {3}, {3, 9}, 2);
  CHECK(cmc == std::vector<double>{1.0, 1.0});
}

TEST_CASE("cmc requires the query identity in the gallery") {
  RankedList list;
  list.gallery_order = {0};
  list.scores = {1.0};
  CHECK_THROWS_WITH_AS(cmc_curve({list}, {5}, {6}, 1),
                       doctest::Contains("missing from the gallery"), Error);
}

TEST_CASE("AP of the relevance pattern 1,0,1,0 is 5/6") {
  RankedList list;
  list.gallery_order = {0, 1, 2, 3};
  list.scores = {0.9, 0.8, 0.7, 0.6};
  const double ap = mean_ap({list}, {1}, {1, 2, 1, 3});
  CHECK(std::abs(ap - 5.0 / 6.0) < 1e-9);
}

TEST_CASE("AP closed forms: all relevant, single relevant at rank r") {
  RankedList list;
  list.gallery_order = {0, 1, 2};
  list.scores = {3, 2, 1};
  CHECK(mean_ap({list}, {1}, {1, 1, 1}) == doctest::Approx(1.0));
  for (int r = 1; r <= 3; ++r) {
    std::vector<int> gallery_ids = {9, 9, 9};
    gallery_ids[static_cast<std::size_t>(r - 1)] = 1;
    CHECK(mean_ap({list}, {1}, gallery_ids) == doctest::Approx(1.0 / r));
  }
}

TEST_CASE("mean_ap requires a relevant item per query") {
  RankedList list;
  list.gallery_order = {0};
  list.scores = {1.0};
  CHECK_THROWS_WITH_AS(mean_ap({list}, {5}, {6}),
                       doctest::Contains("no relevant"), Error);
}

TEST_CASE("cmc and map match brute force on 200 random instances") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const int nq = 1 + static_cast<int>(rng.uniform_int(8));
    const int ng = 2 + static_cast<int>(rng.uniform_int(15));
    const int d = 3;
    std::vector<double> q(static_cast<std::size_t>(nq * d)), g(static_cast<std::size_t>(ng * d));
    for (auto& v : q) v = rng.normal();
    for (auto& v : g) v = rng.normal();
    std::vector<int> gallery_ids(static_cast<std::size_t>(ng));
    for (auto& id : gallery_ids) id = static_cast<int>(rng.uniform_int(4));
    std::vector<int> query_ids(static_cast<std::size_t>(nq));
    for (auto& id : query_ids) {
      id = gallery_ids[static_cast<std::size_t>(rng.uniform_int(ng))];
    }
    EmbeddingBatch query = embeddings_of({nq, d}, q, query_ids);
    EmbeddingBatch gallery = embeddings_of({ng, d}, g, gallery_ids);
    auto ranked = rank_gallery(query, gallery);
    const int max_rank = std::min(ng, 10);

    const auto cmc = cmc_curve(ranked, query_ids, gallery_ids, max_rank);
    const auto expected_cmc =
        nfs::test::brute_cmc(orders_of(ranked), query_ids, gallery_ids, max_rank);
    CHECK(cmc == expected_cmc);

    const double map = mean_ap(ranked, query_ids, gallery_ids);
    const double expected_map =
        nfs::test::brute_map(orders_of(ranked), query_ids, gallery_ids);
    CHECK(map == doctest::Approx(expected_map).epsilon(1e-14));

    for (std::size_t r = 1; r < cmc.size(); ++r) CHECK(cmc[r] >= cmc[r - 1]);
    CHECK(map >= 0.0);
    CHECK(map <= 1.0);
  }
}

TEST_CASE("metrics are invariant under gallery permutation and embedding scale") {
  Rng rng(13);
  const int nq = 5, ng = 12, d = 4;
  std::vector<double> q(nq * d), g(ng * d);
  for (auto& v : q) v = rng.normal();
  for (auto& v : g) v = rng.normal();
  std::vector<int> query_ids = {0, 1, 2, 0, 1};
  std::vector<int> gallery_ids(ng);
  for (auto& id : gallery_ids) id = static_cast<int>(rng.uniform_int(3));

  EmbeddingBatch query = embeddings_of({nq, d}, q, query_ids);
  EmbeddingBatch gallery = embeddings_of({ng, d}, g, gallery_ids);
  auto ranked = rank_gallery(query, gallery);
  const auto cmc = cmc_curve(ranked, query_ids, gallery_ids, 10);
  const double map = mean_ap(ranked, query_ids, gallery_ids);

  // permute gallery storage order
  std::vector<int> perm(ng);
  for (int i = 0; i < ng; ++i) perm[static_cast<std::size_t>(i)] = (i * 5 + 3) % ng;
  std::vector<double> g2(ng * d);
  std::vector<int> ids2(ng);
  for (int i = 0; i < ng; ++i) {
    ids2[static_cast<std::size_t>(i)] = gallery_ids[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    for (int k = 0; k < d; ++k) {
      g2[static_cast<std::size_t>(i * d + k)] =
          g[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)] * d + k)];
    }
  }
  EmbeddingBatch gallery2 = embeddings_of({ng, d}, g2, ids2);
  auto ranked2 = rank_gallery(query, gallery2);
  CHECK(cmc_curve(ranked2, query_ids, ids2, 10) == cmc);
  CHECK(mean_ap(ranked2, query_ids, ids2) == doctest::Approx(map).epsilon(1e-14));

  // positive rescaling of all embeddings
  std::vector<double> q3 = q, g3 = g;
  for (auto& v : q3) v *= 37.5;
  for (auto& v : g3) v *= 0.004;
  EmbeddingBatch query3 = embeddings_of({nq, d}, q3, query_ids);
  EmbeddingBatch gallery3 = embeddings_of({ng, d}, g3, gallery_ids);
  auto ranked3 = rank_gallery(query3, gallery3);
  for (int i = 0; i < nq; ++i) {
    CHECK(ranked3[static_cast<std::size_t>(i)].gallery_order ==
          ranked[static_cast<std::size_t>(i)].gallery_order);
  }
  CHECK(cmc_curve(ranked3, query_ids, gallery_ids, 10) == cmc);
  CHECK(mean_ap(ranked3, query_ids, gallery_ids) == doctest::Approx(map).epsilon(1e-14));
}

TEST_CASE("euclidean metric switch ranks by ascending distance") {
  EmbeddingBatch query = embeddings_of({1, 2}, {0, 0}, {0});
  EmbeddingBatch gallery = embeddings_of({3, 2}, {3, 0, 1, 0, 2, 0}, {1, 0, 2});
  auto ranked = rank_gallery(query, gallery, RankMetric::kEuclidean);
  CHECK(ranked[0].gallery_order == std::vector<int>{1, 2, 0});
}

TEST_CASE("report json round-trips losslessly") {
  EvalReport report;
  report.protocol = "visible_to_infrared";
  report.cmc = {0.25, 0.5, 0.875, 1.0};
  report.map = 0.4375;
  report.seed = 1234567890123ULL;
  const auto j = report_to_json(report);
  const EvalReport back = report_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.protocol == report.protocol);
  CHECK(back.cmc == report.cmc);
  CHECK(back.map == report.map);
  CHECK(back.seed == report.seed);
}

}  // TEST_SUITE
