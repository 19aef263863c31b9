#include "nfs/config.hpp"

#include <fstream>

#include "nfs/error.hpp"

namespace nfs {

void RunConfig::resolve(bool with_search) {
  dataset.validate();
  model.input_h = dataset.height;
  model.input_w = dataset.width;
  model.num_identities = dataset.n_train_ids;
  model.searched_stages = with_search ? stages : std::vector<int>{};
  model.validate();
  bilevel.validate();
  if (with_search && stages.empty()) {
    throw ConfigError("empty stage set: search needs at least one stage");
  }
  if (eval_max_rank < 1) throw ConfigError("eval max_rank must be positive");
}

EvalProtocol RunConfig::protocol(Modality query_modality) const {
  EvalProtocol p;
  p.query_modality = query_modality;
  p.max_rank = eval_max_rank;
  p.metric = eval_metric;
  return p;
}

std::string order_name(BilevelOrder order) {
  return order == BilevelOrder::kFirst ? "first" : "second";
}

BilevelOrder order_from_string(const std::string& s) {
  if (s == "first") return BilevelOrder::kFirst;
  if (s == "second") return BilevelOrder::kSecond;
  throw ConfigError("unknown bilevel order '" + s + "', expected first or second");
}

std::string sampler_name(GateSampler sampler) {
  return sampler == GateSampler::kContinuousBernoulli ? "continuous" : "discrete";
}

GateSampler sampler_from_string(const std::string& s) {
  if (s == "continuous") return GateSampler::kContinuousBernoulli;
  if (s == "discrete") return GateSampler::kDiscreteBernoulli;
  throw ConfigError("unknown gate sampler '" + s + "'");
}

std::string metric_name(RankMetric metric) {
  return metric == RankMetric::kCosine ? "cosine" : "euclidean";
}

RankMetric metric_from_string(const std::string& s) {
  if (s == "cosine") return RankMetric::kCosine;
  if (s == "euclidean") return RankMetric::kEuclidean;
  throw ConfigError("unknown rank metric '" + s + "'");
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  return nlohmann::json{
      {"seed", c.seed},
      {"dataset",
       {{"seed", c.dataset.seed},
        {"train_ids", c.dataset.n_train_ids},
        {"test_ids", c.dataset.n_test_ids},
        {"images_per_modality", c.dataset.images_per_modality},
        {"signature_dim", c.dataset.signature_dim},
        {"height", c.dataset.height},
        {"width", c.dataset.width},
        {"noise_sigma", c.dataset.noise_sigma},
        {"jitter", c.dataset.jitter},
        {"max_clutter", c.dataset.max_clutter},
        {"stripe_gain", c.dataset.stripe_gain}}},
      {"model",
       {{"stem_channels", c.model.stem_channels},
        {"stage_widths", c.model.stage_widths}}},
      {"search",
       {{"stages", c.stages},
        {"gate_lr", c.bilevel.gate_lr},
        {"epochs", c.bilevel.search_epochs},
        {"order", order_name(c.bilevel.order)},
        {"sampler", sampler_name(c.bilevel.sampler)},
        {"unroll_xi", c.bilevel.unroll_xi}}},
      {"train",
       {{"epochs", c.bilevel.retrain_epochs},
        {"base_lr", c.bilevel.base_lr},
        {"momentum", c.bilevel.momentum},
        {"batch_p", c.bilevel.batch_p},
        {"batch_k", c.bilevel.batch_k},
        {"steps_per_epoch", c.bilevel.steps_per_epoch},
        {"lambda", c.bilevel.contrastive.lambda_weight},
        {"margin", c.bilevel.contrastive.margin_t}}},
      {"eval",
       {{"max_rank", c.eval_max_rank}, {"metric", metric_name(c.eval_metric)}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  c.seed = j.value("seed", c.seed);
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    c.dataset.seed = d.value("seed", c.dataset.seed);
    c.dataset.n_train_ids = d.value("train_ids", c.dataset.n_train_ids);
    c.dataset.n_test_ids = d.value("test_ids", c.dataset.n_test_ids);
    c.dataset.images_per_modality =
        d.value("images_per_modality", c.dataset.images_per_modality);
    c.dataset.signature_dim = d.value("signature_dim", c.dataset.signature_dim);
    c.dataset.height = d.value("height", c.dataset.height);
    c.dataset.width = d.value("width", c.dataset.width);
    c.dataset.noise_sigma = d.value("noise_sigma", c.dataset.noise_sigma);
    c.dataset.jitter = d.value("jitter", c.dataset.jitter);
    c.dataset.max_clutter = d.value("max_clutter", c.dataset.max_clutter);
    c.dataset.stripe_gain = d.value("stripe_gain", c.dataset.stripe_gain);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.model.stem_channels = m.value("stem_channels", c.model.stem_channels);
    c.model.stage_widths = m.value("stage_widths", c.model.stage_widths);
  }
  if (j.contains("search")) {
    const auto& s = j.at("search");
    c.stages = s.value("stages", c.stages);
    c.bilevel.gate_lr = s.value("gate_lr", c.bilevel.gate_lr);
    c.bilevel.search_epochs = s.value("epochs", c.bilevel.search_epochs);
    c.bilevel.order = order_from_string(s.value("order", order_name(c.bilevel.order)));
    c.bilevel.sampler =
        sampler_from_string(s.value("sampler", sampler_name(c.bilevel.sampler)));
    c.bilevel.unroll_xi = s.value("unroll_xi", c.bilevel.unroll_xi);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    c.bilevel.retrain_epochs = t.value("epochs", c.bilevel.retrain_epochs);
    c.bilevel.base_lr = t.value("base_lr", c.bilevel.base_lr);
    c.bilevel.momentum = t.value("momentum", c.bilevel.momentum);
    c.bilevel.batch_p = t.value("batch_p", c.bilevel.batch_p);
    c.bilevel.batch_k = t.value("batch_k", c.bilevel.batch_k);
    c.bilevel.steps_per_epoch = t.value("steps_per_epoch", c.bilevel.steps_per_epoch);
    c.bilevel.contrastive.lambda_weight =
        t.value("lambda", c.bilevel.contrastive.lambda_weight);
    c.bilevel.contrastive.margin_t = t.value("margin", c.bilevel.contrastive.margin_t);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    c.eval_max_rank = e.value("max_rank", c.eval_max_rank);
    c.eval_metric = metric_from_string(e.value("metric", metric_name(c.eval_metric)));
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace nfs
