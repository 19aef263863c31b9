#include "nfs/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "nfs/checkpoint.hpp"
#include "nfs/error.hpp"
#include "nfs/export.hpp"

namespace nfs {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTagSplitSeed = 0x5271;
constexpr std::uint64_t kTagRetrainInit = 0x2e14;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  nlohmann::json j;
  in >> j;
  return j;
}

// manifest.json holds one entry per command so search/train/eval can share a
// run directory.
void merge_manifest(const fs::path& root, const std::string& command,
                    const nlohmann::json& entry) {
  const fs::path path = root / "manifest.json";
  nlohmann::json manifest;
  if (fs::exists(path)) {
    try {
      manifest = read_json(path);
    } catch (const std::exception&) {
      manifest = nlohmann::json::object();
    }
  }
  manifest["runs"][command] = entry;
  write_json(path, manifest);
}

bool run_complete(const fs::path& root, const std::string& command) {
  const fs::path path = root / "manifest.json";
  if (!fs::exists(path)) return false;
  try {
    const auto manifest = read_json(path);
    return manifest.at("runs").at(command).value("status", "") == "complete";
  } catch (const std::exception&) {
    return false;
  }
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

TwoStreamNet rebuild_from_checkpoint(const Checkpoint& ckpt, RunConfig& config) {
  if (ckpt.meta.value("kind", "") != "model") {
    throw IoError("checkpoint is not a model checkpoint");
  }
  config = run_config_from_json(ckpt.meta.at("config"));
  const bool with_search = ckpt.meta.value("with_search", false);
  config.resolve(with_search);
  TwoStreamNet net = TwoStreamNet::init(config.model, config.seed);
  std::vector<NamedTensor> entries;
  for (const auto& e : ckpt.entries) {
    entries.push_back({e.name, Tensor::from_values(e.shape, e.values)});
  }
  net.load_state(entries);
  return net;
}

void save_model_checkpoint(const fs::path& path, TwoStreamNet& net,
                           const RunConfig& config, bool with_search) {
  std::vector<CheckpointEntry> entries;
  for (auto& e : net.state_entries()) {
    entries.push_back({e.name, e.tensor.shape(), e.tensor.values()});
  }
  nlohmann::json meta;
  meta["kind"] = "model";
  meta["config"] = run_config_to_json(config);
  meta["with_search"] = with_search;
  save_checkpoint(path, entries, meta);
}

}  // namespace

OutputDirs OutputDirs::create(const fs::path& root) {
  OutputDirs dirs;
  dirs.root = root;
  dirs.checkpoints = root / "checkpoints";
  dirs.gates = root / "gates";
  dirs.logs = root / "logs";
  dirs.reports = root / "reports";
  for (const auto& d : {dirs.root, dirs.checkpoints, dirs.gates, dirs.logs,
                        dirs.reports}) {
    fs::create_directories(d);
  }
  return dirs;
}

void cmd_search(RunConfig config, const fs::path& out) {
  config.resolve(true);
  OutputDirs dirs = OutputDirs::create(out);

  RenderedDataset data(build_dataset(config.dataset));
  const std::uint64_t split_seed = mix64(config.seed, kTagSplitSeed);
  SplitSpec split = split_search_sets(data.manifest(), split_seed);

  TwoStreamNet net = TwoStreamNet::init(config.model, config.seed);
  SearchLog log = run_search(net, data, split, config.bilevel, config.seed);

  {
    std::ofstream csv(dirs.logs / "search_log.csv");
    if (!csv) throw IoError("cannot open search log for writing");
    write_search_log_csv(csv, log);
  }
  save_gates_file(dirs.gates / "gates.nfs1", net);
  export_gates(dirs.gates, net.active_cells());
  save_model_checkpoint(dirs.checkpoints / "search.nfs1", net, config, true);

  nlohmann::json entry;
  entry["config"] = run_config_to_json(config);
  entry["seeds"] = {{"run", config.seed},
                    {"dataset", config.dataset.seed},
                    {"split", split_seed}};
  entry["split_hash"] = hex64(split.hash());
  entry["split_sizes"] = {split.search_train.size(), split.search_val.size()};
  entry["artifacts"] = {{"gates", "gates/gates.nfs1"},
                        {"checkpoint", "checkpoints/search.nfs1"},
                        {"search_log", "logs/search_log.csv"}};
  entry["status"] = "complete";
  merge_manifest(dirs.root, "search", entry);
}

void cmd_train(RunConfig config,
               const std::optional<fs::path>& gates_file,
               const fs::path& out) {
  const bool with_search = gates_file.has_value();
  if (with_search) {
    // The searched stages come from the gates file, not the flags.
    config.stages = gates_file_stages(*gates_file);
  }
  config.resolve(with_search);
  OutputDirs dirs = OutputDirs::create(out);

  RenderedDataset data(build_dataset(config.dataset));
  TwoStreamNet net = TwoStreamNet::init(config.model, config.seed);
  if (with_search) load_gates_file(*gates_file, net);

  std::ofstream csv(dirs.logs / "loss.csv");
  if (!csv) throw IoError("cannot open loss csv for writing");
  write_loss_csv_header(csv);
  retrain(net, data, config.bilevel, config.seed,
          mix64(config.seed, kTagRetrainInit),
          [&csv](const TrainStepLog& row) { write_loss_csv_row(csv, row); });

  save_model_checkpoint(dirs.checkpoints / "model.nfs1", net, config, with_search);

  nlohmann::json entry;
  entry["config"] = run_config_to_json(config);
  entry["seeds"] = {{"run", config.seed}, {"dataset", config.dataset.seed}};
  entry["gates_file"] = with_search ? gates_file->string() : "";
  entry["artifacts"] = {{"checkpoint", "checkpoints/model.nfs1"},
                        {"loss_csv", "logs/loss.csv"}};
  entry["status"] = "complete";
  merge_manifest(dirs.root, "train", entry);
}

std::vector<EvalReport> cmd_eval(const fs::path& checkpoint,
                                 const std::string& protocol, const fs::path& out,
                                 bool dump_ranked_csv) {
  std::vector<Modality> directions;
  if (protocol == "visible_to_infrared") {
    directions = {Modality::kRgb};
  } else if (protocol == "infrared_to_visible") {
    directions = {Modality::kIr};
  } else if (protocol == "both") {
    directions = {Modality::kRgb, Modality::kIr};
  } else {
    throw ConfigError("unknown protocol '" + protocol +
                      "', expected visible_to_infrared, infrared_to_visible or both");
  }

  Checkpoint ckpt = load_checkpoint(checkpoint);
  RunConfig config;
  TwoStreamNet net = rebuild_from_checkpoint(ckpt, config);
  RenderedDataset data(build_dataset(config.dataset));

  OutputDirs dirs = OutputDirs::create(out);
  std::vector<EvalReport> reports;
  nlohmann::json artifact_list = nlohmann::json::array();
  for (Modality query : directions) {
    EvalReport report = evaluate(net, data, config.protocol(query), config.seed);
    print_report_table(std::cout, report);
    const fs::path report_path = dirs.reports / ("eval_" + report.protocol + ".json");
    write_json(report_path, report_to_json(report));
    artifact_list.push_back("reports/eval_" + report.protocol + ".json");
    if (dump_ranked_csv) {
      std::ofstream csv(dirs.reports / ("ranked_" + report.protocol + ".csv"));
      if (!csv) throw IoError("cannot open ranked csv for writing");
      write_ranked_csv(csv, report);
    }
    reports.push_back(std::move(report));
  }

  nlohmann::json entry;
  entry["checkpoint"] = checkpoint.string();
  entry["protocol"] = protocol;
  entry["artifacts"] = {{"reports", artifact_list}};
  entry["status"] = "complete";
  merge_manifest(dirs.root, "eval", entry);
  return reports;
}

namespace {

struct VariantSpec {
  std::string name;
  bool search = false;
  bool contrastive = false;
};

// One search+train+eval pipeline under dir; reuses completed results.
std::pair<double, double> run_variant_once(RunConfig config, bool search,
                                           const fs::path& dir) {
  const fs::path ckpt = dir / "checkpoints" / "model.nfs1";
  if (!run_complete(dir, "eval")) {
    if (search) {
      if (!run_complete(dir, "search")) cmd_search(config, dir);
      cmd_train(config, dir / "gates" / "gates.nfs1", dir);
    } else {
      cmd_train(config, std::nullopt, dir);
    }
    cmd_eval(ckpt, "both", dir);
  }
  const auto v2i =
      report_from_json(read_json(dir / "reports" / "eval_visible_to_infrared.json"));
  const auto i2v =
      report_from_json(read_json(dir / "reports" / "eval_infrared_to_visible.json"));
  return {(v2i.rank_at(1) + i2v.rank_at(1)) / 2.0, (v2i.map + i2v.map) / 2.0};
}

std::string format_ablate_csv(const std::vector<AblateRow>& rows) {
  std::ostringstream os;
  os << "variant,rank1_mean,map_mean,seeds\n";
  for (const auto& row : rows) {
    os << row.variant << "," << row.rank1_mean << "," << row.map_mean << ","
       << row.seeds << "\n";
  }
  return os.str();
}

std::string format_ablate_markdown(const std::vector<AblateRow>& rows,
                                   const std::string& title) {
  std::ostringstream os;
  os << "# " << title << "\n\n";
  os << "| variant | rank1_mean | map_mean | seeds |\n";
  os << "|---|---|---|---|\n";
  char line[160];
  for (const auto& row : rows) {
    std::snprintf(line, sizeof(line), "| %s | %.4f | %.4f | %d |\n",
                  row.variant.c_str(), row.rank1_mean, row.map_mean, row.seeds);
    os << line;
  }
  return os.str();
}

std::string stage_set_name(const std::vector<int>& stages) {
  std::string name = "stages";
  for (int s : stages) name += "_" + std::to_string(s);
  return name;
}

}  // namespace

std::vector<AblateRow> cmd_ablate(RunConfig config, const AblateOptions& options,
                                  const fs::path& out) {
  if (options.seeds.empty()) throw ConfigError("ablate needs at least one seed");
  fs::create_directories(out);
  std::vector<AblateRow> rows;

  if (!options.stage_table) {
    const std::vector<VariantSpec> variants = {
        {"B", false, false},
        {"B+N", true, false},
        {"B+C", false, true},
        {"B+N+C", true, true},
    };
    for (const auto& variant : variants) {
      AblateRow row;
      row.variant = variant.name;
      for (std::uint64_t seed : options.seeds) {
        RunConfig run = config;
        run.seed = seed;
        if (!variant.contrastive) run.bilevel.contrastive.lambda_weight = 0.0;
        const fs::path dir =
            out / variant.name / ("seed_" + std::to_string(seed));
        auto [rank1, map] = run_variant_once(run, variant.search, dir);
        row.rank1_mean += rank1;
        row.map_mean += map;
        ++row.seeds;
        std::cout << "[ablate] " << variant.name << " seed " << seed
                  << ": rank1=" << rank1 << " map=" << map << "\n";
      }
      row.rank1_mean /= row.seeds;
      row.map_mean /= row.seeds;
      rows.push_back(row);
    }
    write_text(out / "ablation_summary.csv", format_ablate_csv(rows));
    write_text(out / "ablation_summary.md",
               format_ablate_markdown(rows, "Module ablation"));
    return rows;
  }

  // Stage-subset study: all 15 non-empty subsets of the four stages.
  std::vector<std::vector<int>> subsets;
  for (int size = 1; size <= 4; ++size) {
    for (int mask = 1; mask < 16; ++mask) {
      std::vector<int> stages;
      for (int s = 0; s < 4; ++s) {
        if (mask & (1 << s)) stages.push_back(s + 1);
      }
      if (static_cast<int>(stages.size()) == size) subsets.push_back(stages);
    }
  }
  for (const auto& stages : subsets) {
    AblateRow row;
    row.variant = stage_set_name(stages);
    for (std::uint64_t seed : options.seeds) {
      RunConfig run = config;
      run.seed = seed;
      run.stages = stages;
      const fs::path dir = out / row.variant / ("seed_" + std::to_string(seed));
      auto [rank1, map] = run_variant_once(run, true, dir);
      row.rank1_mean += rank1;
      row.map_mean += map;
      ++row.seeds;
      std::cout << "[ablate] " << row.variant << " seed " << seed
                << ": rank1=" << rank1 << " map=" << map << "\n";
    }
    row.rank1_mean /= row.seeds;
    row.map_mean /= row.seeds;
    rows.push_back(row);
  }
  write_text(out / "stage_table.csv", format_ablate_csv(rows));
  write_text(out / "stage_table.md",
             format_ablate_markdown(rows, "Search scope by stage subset"));
  return rows;
}

nlohmann::json dataset_manifest_to_json(const DatasetManifest& manifest) {
  nlohmann::json j;
  const auto& c = manifest.config;
  j["seed"] = c.seed;
  j["train_ids"] = c.n_train_ids;
  j["test_ids"] = c.n_test_ids;
  j["images_per_modality"] = c.images_per_modality;
  j["train_id_range"] = {0, c.n_train_ids};
  j["test_id_range"] = {c.n_train_ids, c.n_train_ids + c.n_test_ids};
  auto& samples = j["samples"] = nlohmann::json::array();
  for (const auto& s : manifest.samples) {
    samples.push_back({{"id", s.id},
                       {"modality", modality_name(s.modality)},
                       {"instance", s.instance},
                       {"dx", s.dx},
                       {"dy", s.dy},
                       {"noise_seed", s.noise_seed},
                       {"clutter_seed", s.clutter_seed}});
  }
  return j;
}

void cmd_gen_data(const RunConfig& config, const fs::path& out, bool cache_images) {
  config.dataset.validate();
  fs::create_directories(out);
  DatasetManifest manifest = build_dataset(config.dataset);
  write_json(out / "dataset_manifest.json", dataset_manifest_to_json(manifest));

  if (cache_images) {
    RenderedDataset data(manifest);
    std::vector<CheckpointEntry> entries;
    const auto H = manifest.config.height, W = manifest.config.width;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
      const auto& spec = manifest.samples[i];
      const std::int64_t channels = spec.modality == Modality::kRgb ? 3 : 1;
      entries.push_back({"sample" + std::to_string(i),
                         {channels, H, W},
                         data.image(static_cast<int>(i))});
    }
    nlohmann::json meta;
    meta["kind"] = "image_cache";
    meta["dataset_seed"] = manifest.config.seed;
    save_checkpoint(out / "images.nfs1", entries, meta);
  }
}

}  // namespace nfs
