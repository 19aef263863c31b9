#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "nfs/config.hpp"
#include "nfs/error.hpp"
#include "nfs/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> dataset_seed;
  std::optional<std::vector<int>> stages;
  std::optional<double> lambda;
  std::optional<double> margin;
  std::optional<std::string> order;
  std::optional<int> search_epochs;
  std::optional<int> train_epochs;
  std::optional<int> steps_per_epoch;
  std::optional<int> train_ids;
  std::optional<int> test_ids;
  std::optional<int> images_per_modality;
  std::string out = "runs/out";
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "JSON config file; flags override");
  cmd->add_option("--seed", flags.seed, "run seed");
  cmd->add_option("--dataset-seed", flags.dataset_seed, "dataset generator seed");
  cmd->add_option("--stages", flags.stages, "searched stages, e.g. 1,2,3")
      ->delimiter(',')
      ->expected(0, 16);
  cmd->add_option("--lambda", flags.lambda, "contrastive loss weight");
  cmd->add_option("--margin", flags.margin, "contrastive margin T");
  cmd->add_option("--order", flags.order, "bilevel order: first|second")
      ->check(CLI::IsMember({"first", "second"}));
  cmd->add_option("--search-epochs", flags.search_epochs, "search epoch budget");
  cmd->add_option("--train-epochs", flags.train_epochs, "retrain epoch budget");
  cmd->add_option("--steps-per-epoch", flags.steps_per_epoch,
                  "batches per epoch (0 = one visit per identity)");
  cmd->add_option("--train-ids", flags.train_ids, "training identities");
  cmd->add_option("--test-ids", flags.test_ids, "test identities");
  cmd->add_option("--images-per-modality", flags.images_per_modality,
                  "images per identity per modality");
  cmd->add_option("--out", flags.out, "output directory");
}

nfs::RunConfig resolve_flags(const CommonFlags& flags, bool stages_given) {
  nfs::RunConfig config;
  if (!flags.config_path.empty()) {
    config = nfs::load_run_config(flags.config_path);
  }
  if (flags.seed) config.seed = *flags.seed;
  if (flags.dataset_seed) config.dataset.seed = *flags.dataset_seed;
  if (stages_given) {
    if (!flags.stages || flags.stages->empty()) {
      throw nfs::ConfigError("empty stage set");
    }
    config.stages = *flags.stages;
  }
  if (flags.lambda) config.bilevel.contrastive.lambda_weight = *flags.lambda;
  if (flags.margin) config.bilevel.contrastive.margin_t = *flags.margin;
  if (flags.order) config.bilevel.order = nfs::order_from_string(*flags.order);
  if (flags.search_epochs) config.bilevel.search_epochs = *flags.search_epochs;
  if (flags.train_epochs) config.bilevel.retrain_epochs = *flags.train_epochs;
  if (flags.steps_per_epoch) config.bilevel.steps_per_epoch = *flags.steps_per_epoch;
  if (flags.train_ids) config.dataset.n_train_ids = *flags.train_ids;
  if (flags.test_ids) config.dataset.n_test_ids = *flags.test_ids;
  if (flags.images_per_modality) {
    config.dataset.images_per_modality = *flags.images_per_modality;
  }
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural feature search over a two-stream cross-modality network"};
  app.require_subcommand(1);

  CommonFlags search_flags, train_flags, ablate_flags, gen_flags;

  auto* search_cmd = app.add_subcommand("search", "bilevel gate search");
  add_common(search_cmd, search_flags);

  auto* train_cmd = app.add_subcommand("train", "train with optional derived gates");
  add_common(train_cmd, train_flags);
  std::string gates_path;
  train_cmd->add_option("--gates", gates_path, "gates container from a search run");

  auto* eval_cmd = app.add_subcommand("eval", "cross-modality retrieval evaluation");
  std::string checkpoint_path, protocol = "both", eval_out = "runs/out";
  bool ranked_csv = false;
  eval_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")
      ->required();
  eval_cmd->add_option("--protocol", protocol,
                       "visible_to_infrared|infrared_to_visible|both");
  eval_cmd->add_option("--out", eval_out, "output directory");
  eval_cmd->add_flag("--ranked-csv", ranked_csv, "dump per-query ranked lists");

  auto* ablate_cmd = app.add_subcommand("ablate", "module or stage-scope study");
  add_common(ablate_cmd, ablate_flags);
  std::vector<std::uint64_t> seeds;
  bool stage_table = false;
  ablate_cmd->add_option("--seeds", seeds, "run seeds, e.g. 1,2,3,4,5")
      ->delimiter(',');
  ablate_cmd->add_flag("--stage-table", stage_table,
                       "15-row stage-subset table instead of B/N/C variants");

  auto* gen_cmd = app.add_subcommand("gen-data", "synthetic benchmark manifest");
  add_common(gen_cmd, gen_flags);
  bool cache_images = false;
  gen_cmd->add_flag("--cache", cache_images, "also write all images as NFS1");

  CLI11_PARSE(app, argc, argv);

  try {
    if (search_cmd->parsed()) {
      auto config = resolve_flags(search_flags, search_cmd->count("--stages") > 0);
      nfs::cmd_search(config, search_flags.out);
    } else if (train_cmd->parsed()) {
      auto config = resolve_flags(train_flags, train_cmd->count("--stages") > 0);
      std::optional<fs::path> gates;
      if (!gates_path.empty()) gates = gates_path;
      nfs::cmd_train(config, gates, train_flags.out);
    } else if (eval_cmd->parsed()) {
      nfs::cmd_eval(checkpoint_path, protocol, eval_out, ranked_csv);
    } else if (ablate_cmd->parsed()) {
      auto config = resolve_flags(ablate_flags, ablate_cmd->count("--stages") > 0);
      nfs::AblateOptions options;
      if (!seeds.empty()) options.seeds = seeds;
      options.stage_table = stage_table;
      nfs::cmd_ablate(config, options, ablate_flags.out);
    } else if (gen_cmd->parsed()) {
      auto config = resolve_flags(gen_flags, gen_cmd->count("--stages") > 0);
      nfs::cmd_gen_data(config, gen_flags.out, cache_images);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
