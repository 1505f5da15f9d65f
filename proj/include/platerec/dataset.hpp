#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "platerec/render.hpp"

namespace platerec {

/// Malformed or missing dataset files. Messages carry the path and, for
/// manifest problems, the 1-based row number.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { train, val };

std::string to_string(Split split);

struct ManifestRow {
  std::string file;
  std::string raw_label;
  Split split = Split::train;
};

struct Manifest {
  std::vector<ManifestRow> rows;
  std::size_t count(Split split) const;
};

struct Dataset {
  std::vector<PlateImage> images;
  std::vector<Split> splits;

  std::vector<PlateImage> subset(Split split) const;
};

/// 8-bit binary PGM (P5, maxval 255); values are rounded from [0,1].
void write_pgm(const std::filesystem::path& path, const Tensor<double>& image);
/// Reads a P5 PGM into a 1×H×W tensor with values in [0,1].
Tensor<double> read_pgm(const std::filesystem::path& path);

/// Per-image seed derived from (master seed, index), independent of
/// generation order.
std::uint64_t child_seed(std::uint64_t master, std::uint64_t index);

/// Writes `n_total` rendered plates plus manifest.tsv into `out_dir`. After a
/// seeded shuffle of the indices, the last `val_count` become validation.
Manifest generate_dataset(std::size_t n_total, std::size_t val_count,
                          const std::filesystem::path& out_dir, std::uint64_t seed,
                          const Canvas& canvas = {});

Manifest read_manifest(const std::filesystem::path& dir);
void write_manifest(const std::filesystem::path& dir, const Manifest& manifest);

/// Loads every manifest row in order, re-validating labels.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace platerec
