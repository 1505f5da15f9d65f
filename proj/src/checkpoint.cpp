#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "platerec/model.hpp"

namespace platerec {

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'P', 'L'};
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeF64 = 1;

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U out{};
    auto* src = reinterpret_cast<const unsigned char*>(&v);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(U); ++i) dst[i] = src[sizeof(U) - 1 - i];
    return out;
  } else {
    return v;
  }
}

class Writer {
 public:
  template <typename U>
  void put(U v) {
    v = to_little(v);
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& bytes, std::size_t end, std::string path)
      : bytes_(bytes), end_(end), path_(std::move(path)) {}

  template <typename U>
  U get() {
    U v;
    std::memcpy(&v, take(sizeof(U)), sizeof(U));
    return to_little(v);
  }
  const unsigned char* take(std::size_t n) {
    if (n > end_ - pos_) throw CheckpointError(path_ + ": truncated checkpoint");
    const unsigned char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    const auto* p = take(n);
    return {reinterpret_cast<const char*>(p), n};
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<unsigned char>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string path_;
};

std::uint32_t crc_of(const unsigned char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Validates magic, version and CRC, then parses the header up to the tensor list.
CheckpointInfo parse_header(const std::vector<unsigned char>& bytes, Reader& reader,
                            const std::string& path) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path + ": not a checkpoint (bad magic)");
  }
  reader.take(sizeof(kMagic));
  CheckpointInfo info;
  info.version = reader.get<std::uint32_t>();
  if (info.version != kCheckpointVersion) {
    throw CheckpointError(path + ": unsupported format version " + std::to_string(info.version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < 12) throw CheckpointError(path + ": truncated checkpoint");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  stored = to_little(stored);
  if (stored != crc_of(bytes.data(), bytes.size() - 4)) {
    throw CheckpointError(path + ": checksum mismatch (corrupted or truncated file)");
  }
  const auto precision = reader.get<std::uint8_t>();
  if (precision != kDtypeF32 && precision != kDtypeF64) {
    throw CheckpointError(path + ": unknown precision tag " + std::to_string(precision));
  }
  info.precision = precision == kDtypeF32 ? Precision::f32 : Precision::f64;
  try {
    info.config = ModelConfig::from_text(reader.get_string());
    info.config.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(path + ": bad config block: " + e.what());
  }
  return info;
}

}  // namespace

template <typename T>
void save_checkpoint(Recognizer<T>& model, const std::filesystem::path& path) {
  Writer w;
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put(kCheckpointVersion);
  const std::uint8_t dtype = precision_of<T>() == Precision::f32 ? kDtypeF32 : kDtypeF64;
  w.put(dtype);
  w.put_string(model.config().to_text());
  const NamedTensors<T> state = model.state();
  w.put(static_cast<std::uint32_t>(state.size()));
  for (const auto& [name, tensor] : state) {
    w.put_string(name);
    w.put(dtype);
    w.put(static_cast<std::uint32_t>(tensor->rank()));
    for (std::size_t d : tensor->shape()) w.put(static_cast<std::uint64_t>(d));
    for (T v : tensor->data()) w.put(v);
  }
  w.put(crc_of(w.bytes().data(), w.bytes().size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(w.bytes().data()),
            static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = read_file(path);
  Reader reader(bytes, bytes.size() >= 4 ? bytes.size() - 4 : 0, path.string());
  return parse_header(bytes, reader, path.string());
}

template <typename T>
Recognizer<T> load_checkpoint(const std::filesystem::path& path,
                              std::optional<Variant> expected_variant) {
  const std::string where = path.string();
  const std::vector<unsigned char> bytes = read_file(path);
  Reader reader(bytes, bytes.size() >= 4 ? bytes.size() - 4 : 0, where);
  const CheckpointInfo info = parse_header(bytes, reader, where);
  if (info.precision != precision_of<T>()) {
    throw CheckpointError(where + ": precision mismatch (file holds " +
                          (info.precision == Precision::f32 ? "f32" : "f64") + ")");
  }
  if (expected_variant && *expected_variant != info.config.variant) {
    throw CheckpointError(where + ": variant mismatch (file holds " +
                          to_string(info.config.variant) + ", expected " +
                          to_string(*expected_variant) + ")");
  }
  Recognizer<T> model(info.config, 0);
  NamedTensors<T> state = model.state();
  const auto count = reader.get<std::uint32_t>();
  if (count != state.size()) {
    throw CheckpointError(where + ": expected " + std::to_string(state.size()) +
                          " tensors, found " + std::to_string(count));
  }
  const std::uint8_t want_dtype = precision_of<T>() == Precision::f32 ? kDtypeF32 : kDtypeF64;
  for (auto& [name, tensor] : state) {
    const std::string got = reader.get_string();
    if (got != name) throw CheckpointError(where + ": expected tensor '" + name + "', found '" + got + "'");
    if (reader.get<std::uint8_t>() != want_dtype) {
      throw CheckpointError(where + ": tensor '" + name + "' has the wrong dtype");
    }
    const auto rank = reader.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(reader.get<std::uint64_t>());
    if (shape != tensor->shape()) {
      throw CheckpointError(where + ": tensor '" + name + "' has shape " + shape_to_string(shape) +
                            ", model expects " + shape_to_string(tensor->shape()));
    }
    for (T& v : tensor->data()) v = reader.get<T>();
  }
  if (!reader.done()) throw CheckpointError(where + ": trailing bytes after tensors");
  model.set_mode(Mode::infer);
  return model;
}

template void save_checkpoint<float>(Recognizer<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(Recognizer<double>&, const std::filesystem::path&);
template Recognizer<float> load_checkpoint<float>(const std::filesystem::path&,
                                                  std::optional<Variant>);
template Recognizer<double> load_checkpoint<double>(const std::filesystem::path&,
                                                    std::optional<Variant>);

}  // namespace platerec
