#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

#include "datn/config_io.hpp"
#include "datn/errors.hpp"
#include "datn/train.hpp"

namespace datn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'A', 'T', 'N'};
constexpr const char* kShadowTensor = "shadow.epsilon";

template <typename T>
constexpr std::uint8_t dtype_code() {
  return sizeof(T) == 4 ? 1 : 2;
}

class Writer {
 public:
  template <typename U>
  void put(U x) {
    const auto* p = reinterpret_cast<const char*>(&x);
    buf_.append(p, sizeof(U));
  }
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void string64(const std::string& s) {
    put<std::uint64_t>(s.size());
    buf_ += s;
  }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  template <typename U>
  U get() {
    U x;
    std::memcpy(&x, take(sizeof(U)), sizeof(U));
    return x;
  }
  const char* take(std::size_t n) {
    if (n > data_.size() - pos_) throw FormatError("checkpoint is truncated");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string string(std::size_t n) { return {take(n), n}; }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

template <typename T>
void put_tensor(Writer& w, const std::string& name, const Tensor<T>& t) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.put<std::uint8_t>(dtype_code<T>());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.put<std::uint64_t>(d);
  w.bytes(t.raw(), t.size() * sizeof(T));
}

template <typename T>
std::pair<std::string, Tensor<T>> get_tensor(Reader& r) {
  const auto name_len = r.get<std::uint32_t>();
  std::string name = r.string(name_len);
  const auto code = r.get<std::uint8_t>();
  if (code != 1 && code != 2) throw FormatError("tensor '" + name + "' has unknown dtype code " + std::to_string(code));
  const auto rank = r.get<std::uint32_t>();
  if (rank > 8) throw FormatError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = r.get<std::uint64_t>();
    if (d != 0 && n > (std::size_t(1) << 40) / d) throw FormatError("tensor '" + name + "' is implausibly large");
    n *= d;
  }
  Tensor<T> t(shape);
  if (code == dtype_code<T>()) {
    std::memcpy(t.raw(), r.take(n * sizeof(T)), n * sizeof(T));
  } else if (code == 1) {
    const char* p = r.take(n * sizeof(float));
    for (std::size_t i = 0; i < n; ++i) {
      float x;
      std::memcpy(&x, p + i * sizeof(float), sizeof(float));
      t[i] = static_cast<T>(x);
    }
  } else {
    const char* p = r.take(n * sizeof(double));
    for (std::size_t i = 0; i < n; ++i) {
      double x;
      std::memcpy(&x, p + i * sizeof(double), sizeof(double));
      t[i] = static_cast<T>(x);
    }
  }
  return {std::move(name), std::move(t)};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Magic, version and manifest; leaves the reader after the manifest.
std::string read_header(Reader& r) {
  const char* magic = r.take(4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto len = r.get<std::uint64_t>();
  return r.string(len);
}

}  // namespace

template <typename T>
void save_checkpoint(const Model<T>& model, const TrainConfig& train, const std::string& path,
                     const std::string& rng_state) {
  nlohmann::ordered_json manifest;
  manifest["format"] = "datn-checkpoint";
  manifest["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
  manifest["model_seed"] = model.seed();
  manifest["model"] = to_json(model.config());
  manifest["train"] = to_json(train);

  Writer w;
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.string64(manifest.dump(2));
  w.put<std::uint64_t>(model.version());
  w.string64(rng_state);
  const bool eps = !model.shadow_epsilon().empty();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.parameters().size() + (eps ? 1 : 0)));
  for (const auto& p : model.parameters()) put_tensor(w, p.name, p.value);
  if (eps) put_tensor(w, kShadowTensor, model.shadow_epsilon());

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint '" + tmp + "'");
    out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
    if (!out) throw FormatError("failed writing checkpoint '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

std::string read_checkpoint_manifest(const std::string& path) {
  Reader r(read_file(path));
  return read_header(r);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  Reader r(read_file(path));
  const std::string text = read_header(r);
  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint manifest is not JSON: ") + e.what());
  }
  ModelConfig cfg;
  TrainConfig tc;
  std::uint64_t seed = 0;
  try {
    cfg = model_from_json(manifest.at("model"));
    tc = train_from_json(manifest.at("train"));
    seed = manifest.at("model_seed").get<std::uint64_t>();
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint manifest is invalid: ") + e.what());
  }

  const auto version = r.get<std::uint64_t>();
  const auto rng_len = r.get<std::uint64_t>();
  std::string rng = r.string(rng_len);
  const auto count = r.get<std::uint32_t>();
  std::map<std::string, Tensor<T>> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = get_tensor<T>(r);
    if (!table.emplace(name, std::move(t)).second) throw FormatError("duplicate tensor '" + name + "'");
  }
  if (!r.done()) throw FormatError("trailing bytes after the tensor table");

  Model<T> model(cfg, seed);
  for (auto& p : model.parameters()) {
    auto it = table.find(p.name);
    if (it == table.end()) throw FormatError("checkpoint lacks parameter '" + p.name + "'");
    if (it->second.shape() != p.value.shape()) {
      throw FormatError("parameter '" + p.name + "' has shape " + shape_string(it->second.shape()) + ", expected " +
                        shape_string(p.value.shape()));
    }
    p.value = std::move(it->second);
    table.erase(it);
  }
  if (auto it = table.find(kShadowTensor); it != table.end()) {
    try {
      model.set_shadow_epsilon(std::move(it->second));
    } catch (const ShapeError& e) {
      throw FormatError(e.what());
    }
    table.erase(it);
  }
  if (!table.empty()) throw FormatError("checkpoint holds unknown tensor '" + table.begin()->first + "'");
  model.set_version(version);
  return {std::move(model), std::move(tc), std::move(rng)};
}

template void save_checkpoint<float>(const Model<float>&, const TrainConfig&, const std::string&, const std::string&);
template void save_checkpoint<double>(const Model<double>&, const TrainConfig&, const std::string&,
                                      const std::string&);
template Checkpoint<float> load_checkpoint<float>(const std::string&);
template Checkpoint<double> load_checkpoint<double>(const std::string&);

}  // namespace datn
