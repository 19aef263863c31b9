#include "nfs/export.hpp"

#include <cmath>
#include <fstream>
#include <ostream>

#include "nfs/checkpoint.hpp"
#include "nfs/error.hpp"

namespace nfs {

void write_pgm(const std::filesystem::path& path, const std::vector<double>& data,
               std::int64_t channels, std::int64_t height, std::int64_t width) {
  if (static_cast<std::int64_t>(data.size()) != channels * height * width) {
    throw ShapeError("write_pgm: data size does not match dimensions");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "P5\n" << width << " " << (channels * height) << "\n255\n";
  for (double v : data) {
    const double clamped = std::min(1.0, std::max(0.0, v));
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void export_gates(const std::filesystem::path& dir,
                  const std::vector<SearchCell*>& cells) {
  std::filesystem::create_directories(dir);
  std::ofstream prob_csv(dir / "channel_probabilities.csv");
  std::ofstream gate_csv(dir / "channel_gates.csv");
  if (!prob_csv || !gate_csv) {
    throw IoError("cannot open channel gate CSVs under '" + dir.string() + "'");
  }
  for (SearchCell* cell : cells) {
    const auto probs = cell->probabilities();
    if (cell->level == Level::kPixel) {
      const auto& shape = cell->P.shape();
      write_pgm(dir / (cell->name() + ".prob.pgm"), probs, shape[0], shape[1],
                shape[2]);
      if (!cell->derived_gate.empty()) {
        write_pgm(dir / (cell->name() + ".gate.pgm"), cell->derived_gate, shape[0],
                  shape[1], shape[2]);
      }
    } else {
      prob_csv << cell->name();
      for (double p : probs) prob_csv << "," << p;
      prob_csv << "\n";
      if (!cell->derived_gate.empty()) {
        gate_csv << cell->name();
        for (double g : cell->derived_gate) gate_csv << "," << static_cast<int>(g);
        gate_csv << "\n";
      }
    }
  }
}

void save_gates_file(const std::filesystem::path& path, TwoStreamNet& net) {
  std::vector<CheckpointEntry> entries;
  for (SearchCell* cell : net.active_cells()) {
    entries.push_back({cell->name() + ".P", cell->P.shape(), cell->P.values()});
    if (cell->derived_gate.empty()) {
      throw Error("save_gates_file: cell " + cell->name() + " has no derived gates");
    }
    entries.push_back({cell->name() + ".G", cell->P.shape(), cell->derived_gate});
  }
  nlohmann::json meta;
  meta["kind"] = "gates";
  meta["stages"] = net.config().searched_stages;
  save_checkpoint(path, entries, meta);
}

std::vector<int> gates_file_stages(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.meta.value("kind", "") != "gates") {
    throw IoError("'" + path.string() + "' is not a gates file");
  }
  return ckpt.meta.at("stages").get<std::vector<int>>();
}

void load_gates_file(const std::filesystem::path& path, TwoStreamNet& net) {
  Checkpoint ckpt = load_checkpoint(path);
  for (SearchCell* cell : net.active_cells()) {
    const auto* p_entry = ckpt.find(cell->name() + ".P");
    const auto* g_entry = ckpt.find(cell->name() + ".G");
    if (!p_entry || !g_entry) {
      throw IoError("gates file is missing entries for cell " + cell->name());
    }
    if (p_entry->shape != cell->P.shape()) {
      throw IoError("gates file entry " + cell->name() + ".P has shape " +
                    shape_str(p_entry->shape) + ", the model needs " +
                    shape_str(cell->P.shape()));
    }
    cell->P.values() = p_entry->values;
    cell->derived_gate = g_entry->values;
    cell->frozen = true;
    cell->P.set_requires_grad(false);
  }
  net.mark_gates_loaded();
}

void write_loss_csv_header(std::ostream& os) {
  os << "epoch,step,l_id,l_tri,l_c,total,lr\n";
}

void write_loss_csv_row(std::ostream& os, const TrainStepLog& row) {
  os << row.epoch << "," << row.step << "," << row.losses.id << ","
     << row.losses.tri << "," << row.losses.contrastive << "," << row.losses.total
     << "," << row.lr << "\n";
}

void write_search_log_csv(std::ostream& os, const SearchLog& log) {
  os << "epoch,l_train,l_val";
  if (!log.epochs.empty()) {
    for (const auto& [name, fraction] : log.epochs.front().gate_fractions) {
      os << "," << name << ".on_fraction";
    }
  }
  os << "\n";
  for (const auto& entry : log.epochs) {
    os << entry.epoch << "," << entry.l_train << "," << entry.l_val;
    for (const auto& [name, fraction] : entry.gate_fractions) {
      os << "," << fraction;
    }
    os << "\n";
  }
}

}  // namespace nfs
