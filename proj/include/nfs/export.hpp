#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "nfs/engine.hpp"
#include "nfs/network.hpp"

namespace nfs {

// P5 PGM, maxval 255. A [C,H,W] tensor becomes a vertical mosaic of the C
// channel tiles.
void write_pgm(const std::filesystem::path& path, const std::vector<double>& data,
               std::int64_t channels, std::int64_t height, std::int64_t width);

// Per-cell exports: pixel cells as PGM images (probabilities scaled to
// 0..255, derived gates as {0,255}), channel cells as CSV lines of
// probabilities / {0,1} gates.
void export_gates(const std::filesystem::path& dir,
                  const std::vector<SearchCell*>& cells);

// Gate container (NFS1) for reloading into a train run: P and derived G per
// cell plus the searched stage list in the metadata.
void save_gates_file(const std::filesystem::path& path, TwoStreamNet& net);
void load_gates_file(const std::filesystem::path& path, TwoStreamNet& net);
std::vector<int> gates_file_stages(const std::filesystem::path& path);

void write_loss_csv_header(std::ostream& os);
void write_loss_csv_row(std::ostream& os, const TrainStepLog& row);
void write_search_log_csv(std::ostream& os, const SearchLog& log);

}  // namespace nfs
