#include "nfs/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <set>

#include "nfs/error.hpp"

namespace nfs {

EmbeddingBatch extract_embeddings(TwoStreamNet& net, RenderedDataset& data,
                                  const std::vector<int>& sample_indices,
                                  int batch_size) {
  const auto dim = net.embedding_dim();
  EmbeddingBatch all;
  std::vector<double> vectors;
  vectors.reserve(sample_indices.size() * static_cast<std::size_t>(dim));

  for (std::size_t start = 0; start < sample_indices.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop =
        std::min(sample_indices.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<int> rgb_rows, ir_rows;
    for (std::size_t i = start; i < stop; ++i) {
      const auto& spec =
          data.manifest().samples.at(static_cast<std::size_t>(sample_indices[i]));
      (spec.modality == Modality::kRgb ? rgb_rows : ir_rows)
          .push_back(sample_indices[i]);
    }
    IdentityBatch batch = data.assemble(rgb_rows, ir_rows);
    ForwardResult result = net.forward(batch, RunMode::kEval, false);
    const auto& v = result.embeddings.vectors.values();
    vectors.insert(vectors.end(), v.begin(), v.end());
    all.identities.insert(all.identities.end(), result.embeddings.identities.begin(),
                          result.embeddings.identities.end());
    all.modalities.insert(all.modalities.end(), result.embeddings.modalities.begin(),
                          result.embeddings.modalities.end());
  }
  all.vectors = Tensor::from_values(
      {static_cast<std::int64_t>(all.identities.size()), dim}, std::move(vectors));
  return all;
}

std::vector<RankedList> rank_gallery(const EmbeddingBatch& queries,
                                     const EmbeddingBatch& gallery,
                                     RankMetric metric) {
  const auto nq = queries.vectors.dim(0), ng = gallery.vectors.dim(0);
  const auto d = queries.vectors.dim(1);
  if (gallery.vectors.dim(1) != d) {
    throw ShapeError("rank_gallery: embedding dims differ, " +
                     std::to_string(d) + " vs " +
                     std::to_string(gallery.vectors.dim(1)));
  }
  const auto& q = queries.vectors.values();
  const auto& g = gallery.vectors.values();

  std::vector<double> q_norm(static_cast<std::size_t>(nq), 0.0);
  std::vector<double> g_norm(static_cast<std::size_t>(ng), 0.0);
  for (std::int64_t i = 0; i < nq; ++i) {
    double s = 0.0;
    for (std::int64_t k = 0; k < d; ++k) s += q[i * d + k] * q[i * d + k];
    q_norm[static_cast<std::size_t>(i)] = std::sqrt(s);
  }
  for (std::int64_t j = 0; j < ng; ++j) {
    double s = 0.0;
    for (std::int64_t k = 0; k < d; ++k) s += g[j * d + k] * g[j * d + k];
    g_norm[static_cast<std::size_t>(j)] = std::sqrt(s);
  }

  std::vector<RankedList> out(static_cast<std::size_t>(nq));
  std::vector<std::pair<double, int>> scored(static_cast<std::size_t>(ng));
  for (std::int64_t i = 0; i < nq; ++i) {
    for (std::int64_t j = 0; j < ng; ++j) {
      double score;
      if (metric == RankMetric::kCosine) {
        double dot_ij = 0.0;
        for (std::int64_t k = 0; k < d; ++k) dot_ij += q[i * d + k] * g[j * d + k];
        const double denom =
            q_norm[static_cast<std::size_t>(i)] * g_norm[static_cast<std::size_t>(j)];
        score = denom > 0.0 ? dot_ij / denom : 0.0;
      } else {
        double sq = 0.0;
        for (std::int64_t k = 0; k < d; ++k) {
          const double dlt = q[i * d + k] - g[j * d + k];
          sq += dlt * dlt;
        }
        score = -std::sqrt(sq);
      }
      scored[static_cast<std::size_t>(j)] = {score, static_cast<int>(j)};
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;  // deterministic tie-break
    });
    auto& list = out[static_cast<std::size_t>(i)];
    list.gallery_order.resize(scored.size());
    list.scores.resize(scored.size());
    for (std::size_t j = 0; j < scored.size(); ++j) {
      list.gallery_order[j] = scored[j].second;
      list.scores[j] = scored[j].first;
    }
  }
  return out;
}

std::vector<double> cmc_curve(const std::vector<RankedList>& rankings,
                              const std::vector<int>& query_ids,
                              const std::vector<int>& gallery_ids, int max_rank) {
  if (rankings.size() != query_ids.size()) {
    throw ShapeError("cmc_curve: rankings/query id count mismatch");
  }
  const std::set<int> gallery_set(gallery_ids.begin(), gallery_ids.end());
  std::vector<double> cmc(static_cast<std::size_t>(max_rank), 0.0);
  for (std::size_t qi = 0; qi < rankings.size(); ++qi) {
    const int qid = query_ids[qi];
    if (!gallery_set.count(qid)) {
      throw Error("cmc_curve: query identity " + std::to_string(qid) +
                  " missing from the gallery");
    }
    const auto& order = rankings[qi].gallery_order;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (gallery_ids[static_cast<std::size_t>(order[r])] == qid) {
        for (std::size_t k = std::min(r, static_cast<std::size_t>(max_rank));
             k < static_cast<std::size_t>(max_rank); ++k) {
          cmc[k] += 1.0;
        }
        break;
      }
    }
  }
  for (auto& v : cmc) v /= static_cast<double>(rankings.size());
  return cmc;
}

double mean_ap(const std::vector<RankedList>& rankings,
               const std::vector<int>& query_ids,
               const std::vector<int>& gallery_ids) {
  if (rankings.size() != query_ids.size()) {
    throw ShapeError("mean_ap: rankings/query id count mismatch");
  }
  double total = 0.0;
  for (std::size_t qi = 0; qi < rankings.size(); ++qi) {
    const int qid = query_ids[qi];
    const auto& order = rankings[qi].gallery_order;
    int hits = 0;
    double ap = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (gallery_ids[static_cast<std::size_t>(order[r])] == qid) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(r + 1);
      }
    }
    if (hits == 0) {
      throw Error("mean_ap: query identity " + std::to_string(qid) +
                  " has no relevant gallery item");
    }
    total += ap / static_cast<double>(hits);
  }
  return total / static_cast<double>(rankings.size());
}

EvalReport evaluate(TwoStreamNet& net, RenderedDataset& data,
                    const EvalProtocol& protocol, std::uint64_t seed) {
  const Modality gallery_modality = protocol.query_modality == Modality::kRgb
                                        ? Modality::kIr
                                        : Modality::kRgb;
  const auto query_idx = data.manifest().test_indices(protocol.query_modality);
  const auto gallery_idx = data.manifest().test_indices(gallery_modality);
  if (query_idx.empty() || gallery_idx.empty()) {
    throw Error("evaluate: empty query or gallery set");
  }

  EmbeddingBatch queries = extract_embeddings(net, data, query_idx);
  EmbeddingBatch gallery = extract_embeddings(net, data, gallery_idx);

  EvalReport report;
  report.protocol = protocol.name();
  report.seed = seed;
  report.ranked = rank_gallery(queries, gallery, protocol.metric);
  report.cmc = cmc_curve(report.ranked, queries.identities, gallery.identities,
                         protocol.max_rank);
  report.map = mean_ap(report.ranked, queries.identities, gallery.identities);
  return report;
}

nlohmann::json report_to_json(const EvalReport& report) {
  return nlohmann::json{{"protocol", report.protocol},
                        {"cmc", report.cmc},
                        {"map", report.map},
                        {"seed", report.seed}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport report;
  report.protocol = j.at("protocol").get<std::string>();
  report.cmc = j.at("cmc").get<std::vector<double>>();
  report.map = j.at("map").get<double>();
  report.seed = j.at("seed").get<std::uint64_t>();
  return report;
}

void print_report_table(std::ostream& os, const EvalReport& report) {
  os << "protocol: " << report.protocol << "\n";
  os << "  rank-1  rank-5  rank-10  mAP\n";
  auto pct = [](double v) { return v * 100.0; };
  char line[128];
  std::snprintf(line, sizeof(line), "  %6.2f  %6.2f  %7.2f  %5.2f\n",
                pct(report.rank_at(1)),
                report.cmc.size() >= 5 ? pct(report.rank_at(5)) : 0.0,
                report.cmc.size() >= 10 ? pct(report.rank_at(10)) : 0.0,
                pct(report.map));
  os << line;
}

void write_ranked_csv(std::ostream& os, const EvalReport& report) {
  os << "query,rank,gallery_index,score\n";
  for (std::size_t qi = 0; qi < report.ranked.size(); ++qi) {
    const auto& list = report.ranked[qi];
    for (std::size_t r = 0; r < list.gallery_order.size(); ++r) {
      os << qi << "," << (r + 1) << "," << list.gallery_order[r] << ","
         << list.scores[r] << "\n";
    }
  }
}

}  // namespace nfs
