#include "shakelab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "shakelab/errors.hpp"

namespace shakelab {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'H', 'K', 'C', 'K', 'P', 'T', '\0'};

std::uint64_t fnv1a(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename V>
  void put(V v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(V));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void put_string32(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t n, std::string source)
      : data_(data), n_(n), source_(std::move(source)) {}

  template <typename V>
  V get() {
    V v;
    std::memcpy(&v, take(sizeof(V)), sizeof(V));
    return v;
  }
  const unsigned char* take(std::size_t n) {
    if (n > n_ - pos_) throw FormatError(source_ + ": checkpoint is truncated");
    const unsigned char* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  const unsigned char* data_;
  std::size_t n_;
  std::size_t pos_ = 0;
  std::string source_;
};

template <typename T>
void put_tensor(Writer& w, const std::string& name, const Tensor<T>& t) {
  w.put_string32(name);
  w.put(static_cast<std::uint8_t>(sizeof(T) == 4 ? DType::F32 : DType::F64));
  w.put(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.put(static_cast<std::uint64_t>(d));
  w.put_bytes(t.data(), t.size() * sizeof(T));
}

}  // namespace

const CheckpointTensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     const SgdOptimizer<T>* optimizer, const CheckpointMeta& meta) {
  nlohmann::json m;
  m["config"] = meta.config_json.empty() ? nlohmann::json::object()
                                         : nlohmann::json::parse(meta.config_json);
  m["next_epoch"] = meta.progress.next_epoch;
  m["step"] = meta.progress.step;
  m["shake_counter"] = meta.progress.shake_counter;
  m["stats"] = {{"mean", meta.stats.mean}, {"std", meta.stats.std}};
  m["history"] = nlohmann::json::array();
  for (const auto& r : meta.history) {
    m["history"].push_back({r.epoch, r.lr, r.train_loss, r.train_err, r.test_err, r.seconds});
  }
  m["model_dtype"] = sizeof(T) == 4 ? "single" : "double";
  const std::string meta_text = m.dump();

  std::vector<std::pair<std::string, const Tensor<T>*>> table;
  for (const auto& p : model.params()) table.emplace_back("param/" + p.name, &p.value);
  for (const auto& b : model.buffers()) table.emplace_back("buffer/" + b.name, &b.value);
  if (optimizer) {
    const auto& vel = optimizer->velocity();
    for (std::size_t i = 0; i < vel.size(); ++i) {
      table.emplace_back("velocity/" + model.params()[i].name, &vel[i]);
    }
  }

  Writer w;
  w.put_bytes(kMagic, sizeof kMagic);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint64_t>(meta_text.size()));
  w.put_bytes(meta_text.data(), meta_text.size());
  w.put(static_cast<std::uint64_t>(table.size()));
  for (const auto& [name, t] : table) put_tensor(w, name, *t);
  w.put(fnv1a(w.bytes().data(), w.bytes().size()));

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(w.bytes().data()),
              static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw Error("short write to checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  const std::string src = path.string();
  if (bytes.size() < sizeof kMagic + sizeof(std::uint64_t) ||
      std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError(src + ": not a checkpoint file");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);
  if (stored != fnv1a(bytes.data(), body)) {
    throw FormatError(src + ": checksum mismatch (truncated or corrupted)");
  }

  Reader r(bytes.data(), body, src);
  r.take(sizeof kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(src + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto meta_len = r.get<std::uint64_t>();
  const auto* meta_bytes = r.take(meta_len);
  try {
    const auto m = nlohmann::json::parse(meta_bytes, meta_bytes + meta_len);
    ckpt.meta.config_json = m.at("config").dump();
    ckpt.meta.progress.next_epoch = m.at("next_epoch").get<int>();
    ckpt.meta.progress.step = m.at("step").get<long>();
    ckpt.meta.progress.shake_counter = m.at("shake_counter").get<std::uint64_t>();
    ckpt.meta.model_dtype = m.at("model_dtype").get<std::string>();
    ckpt.meta.stats.mean = m.at("stats").at("mean").get<std::vector<double>>();
    ckpt.meta.stats.std = m.at("stats").at("std").get<std::vector<double>>();
    for (const auto& row : m.at("history")) {
      EpochRecord r;
      r.epoch = row.at(0).get<int>();
      r.lr = row.at(1).get<double>();
      r.train_loss = row.at(2).get<double>();
      r.train_err = row.at(3).get<double>();
      r.test_err = row.at(4).get<double>();
      r.seconds = row.at(5).get<double>();
      ckpt.meta.history.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(src + ": bad metadata block: " + e.what());
  }

  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto name_len = r.get<std::uint32_t>();
    const auto* name = r.take(name_len);
    t.name.assign(reinterpret_cast<const char*>(name), name_len);
    const auto dtype = r.get<std::uint8_t>();
    if (dtype > 1) throw FormatError(src + ": unknown dtype for " + t.name);
    t.dtype = static_cast<DType>(dtype);
    const auto rank = r.get<std::uint32_t>();
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto extent = r.get<std::uint64_t>();
      if (extent == 0) throw FormatError(src + ": zero extent in " + t.name);
      t.shape.push_back(extent);
      n *= extent;
    }
    const std::size_t width = t.dtype == DType::F32 ? 4 : 8;
    if (n > r.remaining() / width) throw FormatError(src + ": checkpoint is truncated");
    const auto* raw = r.take(n * width);
    t.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      if (t.dtype == DType::F32) {
        float f;
        std::memcpy(&f, raw + k * 4, 4);
        t.values[k] = f;
      } else {
        std::memcpy(&t.values[k], raw + k * 8, 8);
      }
    }
    ckpt.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError(src + ": trailing bytes after tensor table");
  return ckpt;
}

template <typename T>
void apply_checkpoint(const Checkpoint& ckpt, Model<T>& model, SgdOptimizer<T>* optimizer) {
  std::vector<std::pair<const CheckpointTensor*, Tensor<T>*>> plan;
  auto bind = [&](const std::string& name, Tensor<T>& dst) {
    const CheckpointTensor* src = ckpt.find(name);
    if (!src) throw FormatError("checkpoint has no tensor '" + name + "'");
    if (src->shape != dst.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " +
                        shape_string(src->shape) + ", model expects " +
                        shape_string(dst.shape()));
    }
    plan.emplace_back(src, &dst);
  };
  for (auto& p : model.params()) bind("param/" + p.name, p.value);
  for (auto& b : model.buffers()) bind("buffer/" + b.name, b.value);
  if (optimizer) {
    auto& vel = optimizer->velocity();
    if (vel.size() != model.params().size()) {
      throw UsageError("optimizer does not match the model");
    }
    for (std::size_t i = 0; i < vel.size(); ++i) {
      bind("velocity/" + model.params()[i].name, vel[i]);
    }
  }
  for (auto& [src, dst] : plan) {
    for (std::size_t k = 0; k < dst->size(); ++k) (*dst)[k] = static_cast<T>(src->values[k]);
  }
}

template void save_checkpoint(const std::filesystem::path&, const Model<float>&,
                              const SgdOptimizer<float>*, const CheckpointMeta&);
template void save_checkpoint(const std::filesystem::path&, const Model<double>&,
                              const SgdOptimizer<double>*, const CheckpointMeta&);
template void apply_checkpoint(const Checkpoint&, Model<float>&, SgdOptimizer<float>*);
template void apply_checkpoint(const Checkpoint&, Model<double>&, SgdOptimizer<double>*);

}  // namespace shakelab
