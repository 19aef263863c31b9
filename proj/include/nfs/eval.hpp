#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "nfs/dataset.hpp"
#include "nfs/network.hpp"

namespace nfs {

enum class RankMetric { kCosine, kEuclidean };

struct EvalProtocol {
  Modality query_modality = Modality::kRgb;  // gallery is the other modality
  int max_rank = 20;
  RankMetric metric = RankMetric::kCosine;

  std::string name() const {
    return query_modality == Modality::kRgb ? "visible_to_infrared"
                                            : "infrared_to_visible";
  }
};

struct RankedList {
  std::vector<int> gallery_order;  // gallery indices, best match first
  std::vector<double> scores;      // similarity in the same order
};

struct EvalReport {
  std::string protocol;
  std::vector<double> cmc;  // cmc[r] = P(first hit within rank r+1)
  double map = 0.0;
  std::uint64_t seed = 0;
  std::vector<RankedList> ranked;  // per query; not serialized to JSON

  double rank_at(int r) const {  // r is 1-based
    return cmc.at(static_cast<std::size_t>(r - 1));
  }
};

// Deterministic eval-mode embeddings for the given samples, processed in
// fixed-size chunks.
EmbeddingBatch extract_embeddings(TwoStreamNet& net, RenderedDataset& data,
                                  const std::vector<int>& sample_indices,
                                  int batch_size = 64);

// Descending similarity; ties broken by ascending gallery index. Zero
// vectors get cosine similarity 0.
std::vector<RankedList> rank_gallery(const EmbeddingBatch& queries,
                                     const EmbeddingBatch& gallery,
                                     RankMetric metric = RankMetric::kCosine);

std::vector<double> cmc_curve(const std::vector<RankedList>& rankings,
                              const std::vector<int>& query_ids,
                              const std::vector<int>& gallery_ids, int max_rank);

double mean_ap(const std::vector<RankedList>& rankings,
               const std::vector<int>& query_ids,
               const std::vector<int>& gallery_ids);

EvalReport evaluate(TwoStreamNet& net, RenderedDataset& data,
                    const EvalProtocol& protocol, std::uint64_t seed);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

void print_report_table(std::ostream& os, const EvalReport& report);
void write_ranked_csv(std::ostream& os, const EvalReport& report);

}  // namespace nfs
