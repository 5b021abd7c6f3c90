#pragma once

// Versioned binary checkpoint of parameters, Adam moments, step counter and
// the model configuration.
//
// Layout (little-endian):
//   "UACK" | u32 version=1 | u32 tensor_count
//   per tensor: u32 name_len | name (UTF-8) | u8 dtype (0=f32, 1=f64) | u8 ndim | u64 dims[ndim] | raw data
//   u64 step | u32 json_len | config echo (UTF-8 JSON)

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "uacanet/training.hpp"

namespace uacanet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[4] = {'U', 'A', 'C', 'K'};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointTensor {
  std::string name;
  std::uint8_t dtype = 0;
  Shape shape;
  std::vector<double> values;
};

struct CheckpointData {
  std::uint32_t version = kCheckpointVersion;
  std::vector<CheckpointTensor> tensors;
  std::uint64_t step = 0;
  nlohmann::json config;
};

inline std::string adam_first_name(const std::string& p) { return "adam.m/" + p; }
inline std::string adam_second_name(const std::string& p) { return "adam.v/" + p; }

namespace detail {

class ByteWriter {
 public:
  template <typename U>
  void put(U v) {
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    bytes_.append(buf, sizeof(U));
  }
  void put_bytes(const void* p, std::size_t n) { bytes_.append(static_cast<const char*>(p), n); }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  const char* take(std::size_t n, const char* what) {
    need(n, what);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t offset() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(concat_msg("checkpoint truncated while reading ", what, " at byte ", pos_));
    }
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
void write_tensor(ByteWriter& w, const std::string& name, const Shape& shape, const std::vector<T>& values) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
  w.put_bytes(name.data(), name.size());
  w.put<std::uint8_t>(std::is_same_v<T, float> ? 0 : 1);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(shape.size()));
  for (auto d : shape) w.put<std::uint64_t>(static_cast<std::uint64_t>(d));
  w.put_bytes(values.data(), values.size() * sizeof(T));
}

}  // namespace detail

/// Serialises parameters, Adam moments, the iteration counter and the model config.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const UACANet<T>& model, const AdamState<T>& adam,
                     std::uint64_t step) {
  const auto params = model.named_parameters();
  std::vector<std::pair<std::string, std::pair<Shape, std::vector<T>>>> entries;
  for (const auto& [name, p] : params) entries.push_back({name, {p.shape(), p.values()}});
  for (const auto& [name, p] : params) {
    auto m = adam.first_moment.find(name);
    auto v = adam.second_moment.find(name);
    if (m != adam.first_moment.end()) entries.push_back({adam_first_name(name), {p.shape(), m->second}});
    if (v != adam.second_moment.end()) entries.push_back({adam_second_name(name), {p.shape(), v->second}});
  }
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, e] : entries) detail::write_tensor(w, name, e.first, e.second);
  w.put<std::uint64_t>(step);
  const std::string echo = nlohmann::json{{"model", model.config().to_json()}}.dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(echo.size()));
  w.put_bytes(echo.data(), echo.size());

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Parses a checkpoint file completely; nothing is applied anywhere.
inline CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  detail::ByteReader r({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()});
  CheckpointData data;
  if (r.get_string(4, "magic") != std::string(kCheckpointMagic, 4)) {
    throw CheckpointError(path.string() + ": bad magic, not a UACK checkpoint");
  }
  data.version = r.get<std::uint32_t>("version");
  if (data.version != kCheckpointVersion) {
    throw CheckpointError(detail::concat_msg(path.string(), ": unsupported checkpoint version ", data.version,
                                             " (expected ", kCheckpointVersion, ")"));
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    t.name = r.get_string(name_len, "tensor name");
    t.dtype = r.get<std::uint8_t>("dtype");
    if (t.dtype > 1) throw CheckpointError(detail::concat_msg("tensor '", t.name, "': unknown dtype code ", int(t.dtype)));
    const auto ndim = r.get<std::uint8_t>("ndim");
    std::uint64_t n = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      const auto extent = r.get<std::uint64_t>("dims");
      if (extent > (1ULL << 40)) throw CheckpointError("tensor '" + t.name + "': implausible extent");
      t.shape.push_back(static_cast<std::int64_t>(extent));
      n *= extent;
    }
    const std::size_t elem = t.dtype == 0 ? 4 : 8;
    if (n > r.remaining() / elem) {
      throw CheckpointError(detail::concat_msg("checkpoint truncated in data of tensor '", t.name, "' at byte ",
                                               r.offset()));
    }
    const char* raw = r.take(n * elem, "tensor data");
    t.values.resize(n);
    for (std::uint64_t k = 0; k < n; ++k) {
      if (t.dtype == 0) {
        float f;
        std::memcpy(&f, raw + k * 4, 4);
        t.values[k] = f;
      } else {
        std::memcpy(&t.values[k], raw + k * 8, 8);
      }
    }
    data.tensors.push_back(std::move(t));
  }
  data.step = r.get<std::uint64_t>("step counter");
  const auto json_len = r.get<std::uint32_t>("config echo length");
  const auto echo = r.get_string(json_len, "config echo");
  try {
    data.config = nlohmann::json::parse(echo);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("config echo is not valid JSON: ") + e.what());
  }
  if (r.remaining() != 0) throw CheckpointError(detail::concat_msg("trailing bytes after config echo at ", r.offset()));
  return data;
}

/// Model configuration stored in a checkpoint.
inline ModelConfig checkpoint_model_config(const CheckpointData& data) {
  try {
    return ModelConfig::from_json(data.config.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("config echo lacks a model section: ") + e.what());
  }
}

/// Validates `data` against `model` and only then copies every tensor in.
/// Returns the stored step counter.
template <typename T>
std::uint64_t apply_checkpoint(const CheckpointData& data, const UACANet<T>& model, AdamState<T>* adam) {
  const auto stored = checkpoint_model_config(data);
  if (auto field = model.config().first_difference(stored); !field.empty()) {
    throw CheckpointError("checkpoint config mismatch on model." + field + ": checkpoint has " +
                          stored.to_json().at(field).dump() + ", current config has " +
                          model.config().to_json().at(field).dump());
  }
  const auto params = model.named_parameters();
  std::map<std::string, Tensor<T>> by_name;
  for (const auto& [name, p] : params) by_name.emplace(name, p);
  std::map<std::string, const CheckpointTensor*> found;
  for (const auto& t : data.tensors) {
    std::string base = t.name;
    if (t.name.rfind("adam.m/", 0) == 0 || t.name.rfind("adam.v/", 0) == 0) base = t.name.substr(7);
    auto it = by_name.find(base);
    if (it == by_name.end()) throw CheckpointError("unknown tensor '" + t.name + "' in checkpoint");
    if (t.shape != it->second.shape()) {
      throw CheckpointError("tensor '" + t.name + "' has shape " + shape_str(t.shape) + ", model expects " +
                            shape_str(it->second.shape()));
    }
    if (!found.emplace(t.name, &t).second) throw CheckpointError("duplicate tensor '" + t.name + "'");
  }
  for (const auto& [name, p] : params)
    if (!found.count(name)) throw CheckpointError("checkpoint lacks parameter '" + name + "'");

  for (auto [name, p] : params) {
    const auto& src = found.at(name)->values;
    auto dst = p.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
    p.zero_grad();
  }
  if (adam) {
    AdamState<T> restored;
    restored.step = static_cast<std::int64_t>(data.step);
    for (const auto& [name, t] : found) {
      std::vector<T> vals(t->values.size());
      std::transform(t->values.begin(), t->values.end(), vals.begin(), [](double v) { return static_cast<T>(v); });
      if (name.rfind("adam.m/", 0) == 0) restored.first_moment[name.substr(7)] = std::move(vals);
      else if (name.rfind("adam.v/", 0) == 0) restored.second_moment[name.substr(7)] = std::move(vals);
    }
    *adam = std::move(restored);
  }
  return data.step;
}

template <typename T>
std::uint64_t load_checkpoint(const std::filesystem::path& path, const UACANet<T>& model, AdamState<T>* adam = nullptr) {
  return apply_checkpoint(read_checkpoint(path), model, adam);
}

}  // namespace uacanet
