#include "platerec/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace platerec {

namespace fs = std::filesystem;

std::string to_string(Split split) { return split == Split::train ? "train" : "val"; }

std::size_t Manifest::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [&](const ManifestRow& r) { return r.split == split; }));
}

std::vector<PlateImage> Dataset::subset(Split split) const {
  std::vector<PlateImage> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (splits[i] == split) out.push_back(images[i]);
  }
  return out;
}

void write_pgm(const fs::path& path, const Tensor<double>& image) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw ShapeError("write_pgm: expected 1×H×W image, got " + shape_to_string(image.shape()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  out << "P5\n" << image.dim(2) << ' ' << image.dim(1) << "\n255\n";
  std::vector<unsigned char> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DatasetError("write failed for " + path.string());
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string token;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) break;
      continue;
    }
    token += static_cast<char>(ch);
  }
  return token;
}

}  // namespace

Tensor<double> read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open image " + path.string());
  if (pgm_token(in) != "P5") throw DatasetError(path.string() + ": not a binary PGM (P5)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(pgm_token(in));
    h = std::stoul(pgm_token(in));
    maxval = std::stoul(pgm_token(in));
  } catch (const std::exception&) {
    throw DatasetError(path.string() + ": malformed PGM header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw DatasetError(path.string() + ": unsupported PGM geometry or maxval");
  }
  std::vector<unsigned char> bytes(w * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw DatasetError(path.string() + ": truncated image data (" + std::to_string(in.gcount()) +
                       " of " + std::to_string(bytes.size()) + " bytes)");
  }
  Tensor<double> image({1, h, w});
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    image[i] = static_cast<double>(bytes[i]) / static_cast<double>(maxval);
  }
  return image;
}

std::uint64_t child_seed(std::uint64_t master, std::uint64_t index) {
  // splitmix64 finalizer over a combined key
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void write_manifest(const fs::path& dir, const Manifest& manifest) {
  const fs::path path = dir / "manifest.tsv";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  out << "file\traw_label\tsplit\n";
  for (const ManifestRow& row : manifest.rows) {
    out << row.file << '\t' << row.raw_label << '\t' << to_string(row.split) << '\n';
  }
  if (!out) throw DatasetError("write failed for " + path.string());
}

Manifest generate_dataset(std::size_t n_total, std::size_t val_count, const fs::path& out_dir,
                          std::uint64_t seed, const Canvas& canvas) {
  if (val_count == 0 || val_count >= n_total) {
    throw std::invalid_argument("generate_dataset: need 0 < val_count < n_total (got val " +
                                std::to_string(val_count) + ", total " + std::to_string(n_total) +
                                ")");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw DatasetError("cannot create dataset directory " + out_dir.string() +
                       (ec ? ": " + ec.message() : ""));
  }

  std::vector<std::size_t> order(n_total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(seed);
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  std::vector<Split> split_of(n_total, Split::train);
  for (std::size_t k = n_total - val_count; k < n_total; ++k) split_of[order[k]] = Split::val;

  const int width = static_cast<int>(std::to_string(n_total - 1).size());
  Manifest manifest;
  for (std::size_t i = 0; i < n_total; ++i) {
    const std::uint64_t s = child_seed(seed, i);
    std::mt19937_64 rng(s);
    const std::string raw = sample_plate(rng);
    const PlateImage image = render_plate(raw, child_seed(s, 0), canvas);
    std::ostringstream name;
    name << "plate_" << std::setw(std::max(5, width)) << std::setfill('0') << i << ".pgm";
    write_pgm(out_dir / name.str(), image.pixels);
    manifest.rows.push_back({name.str(), raw, split_of[i]});
  }
  write_manifest(out_dir, manifest);
  return manifest;
}

Manifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.tsv";
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open manifest " + path.string());
  Manifest manifest;
  std::string line;
  std::size_t row_no = 0;
  if (!std::getline(in, line)) throw DatasetError(path.string() + ": empty manifest");
  ++row_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "file\traw_label\tsplit") {
    throw DatasetError(path.string() + ": row 1: expected header 'file<TAB>raw_label<TAB>split'");
  }
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const std::string where = path.string() + ": row " + std::to_string(row_no);
    if (cols.size() != 3 || cols[0].empty()) {
      throw DatasetError(where + ": expected 3 tab-separated columns");
    }
    ManifestRow row;
    row.file = cols[0];
    row.raw_label = cols[1];
    if (cols[2] == "train") {
      row.split = Split::train;
    } else if (cols[2] == "val") {
      row.split = Split::val;
    } else {
      throw DatasetError(where + ": unknown split '" + cols[2] + "'");
    }
    if (!validate_plate(row.raw_label)) {
      throw DatasetError(where + ": invalid plate label '" + row.raw_label + "'");
    }
    manifest.rows.push_back(std::move(row));
  }
  return manifest;
}

Dataset load_dataset(const fs::path& dir) {
  const Manifest manifest = read_manifest(dir);
  Dataset data;
  data.images.reserve(manifest.rows.size());
  for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
    const ManifestRow& row = manifest.rows[i];
    PlateImage image;
    try {
      image.pixels = read_pgm(dir / row.file);
    } catch (const DatasetError& e) {
      throw DatasetError("manifest row " + std::to_string(i + 2) + ": " + e.what());
    }
    image.label = PlateLabel::from_raw(row.raw_label);
    data.images.push_back(std::move(image));
    data.splits.push_back(row.split);
  }
  return data;
}

}  // namespace platerec
