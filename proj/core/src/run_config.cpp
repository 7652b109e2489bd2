#include "shakelab/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "json.hpp"
#include "shakelab/errors.hpp"

namespace shakelab {

using nlohmann::json;

std::string_view to_string(DataSource source) {
  return source == DataSource::Synthetic ? "synthetic" : "cifar10-bin";
}

DataSource parse_data_source(std::string_view text) {
  if (text == "synthetic") return DataSource::Synthetic;
  if (text == "cifar10-bin") return DataSource::Cifar10Bin;
  throw ConfigError("data.source: expected 'synthetic' or 'cifar10-bin', got '" +
                    std::string(text) + "'");
}

namespace {

class Section {
 public:
  Section(const json& j, std::string path, std::set<std::string> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    for (const auto& [key, _] : j_.items()) {
      if (!allowed.count(key)) throw ConfigError(field(key) + ": unknown key");
    }
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }
  bool has(const std::string& key) const { return j_.contains(key); }
  const json& at(const std::string& key) const { return j_.at(key); }

  template <typename V>
  void get(const std::string& key, V& out) const {
    if (!j_.contains(key)) return;
    if constexpr (std::is_integral_v<V> && !std::is_same_v<V, bool>) {
      if (!j_.at(key).is_number_integer()) {
        throw ConfigError(field(key) + ": expected an integer, got " + j_.at(key).dump());
      }
    }
    if constexpr (std::is_same_v<V, bool>) {
      if (!j_.at(key).is_boolean()) {
        throw ConfigError(field(key) + ": expected true or false, got " + j_.at(key).dump());
      }
    }
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception&) {
      throw ConfigError(field(key) + ": wrong type (" + j_.at(key).dump() + ")");
    }
  }

  // Integers that must not be negative.
  template <typename V>
  void get_count(const std::string& key, V& out) const {
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0)) {
      throw ConfigError(field(key) + ": expected a non-negative integer, got " + v.dump());
    }
    out = v.get<V>();
  }

  template <typename Parse>
  auto get_enum(const std::string& key, Parse parse) const {
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(field(key) + ": expected a string");
    return parse(v.get<std::string>());
  }

 private:
  const json& j_;
  std::string path_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.empty()) return path;
  if (path.is_relative() && !base.empty()) path = base / path;
  return path.lexically_normal();
}

void parse_model(const json& j, RunConfig& c) {
  Section s(j, "model", {"family", "depth", "base_width", "num_classes"});
  if (s.has("family")) c.model.family = s.get_enum("family", parse_family);
  s.get("depth", c.model.depth);
  s.get("base_width", c.model.base_width);
  s.get("num_classes", c.model.num_classes);
}

void parse_shake(const json& j, RunConfig& c) {
  Section s(j, "shake", {"forward", "backward", "level", "alpha_lo", "alpha_hi"});
  auto& sh = c.model.shake;
  if (s.has("forward")) sh.forward = s.get_enum("forward", parse_forward_mode);
  if (s.has("backward")) sh.backward = s.get_enum("backward", parse_backward_mode);
  if (s.has("level")) sh.level = s.get_enum("level", parse_level);
  s.get("alpha_lo", sh.alpha_lo);
  s.get("alpha_hi", sh.alpha_hi);
}

void parse_train(const json& j, RunConfig& c) {
  Section s(j, "train", {"epochs", "batch_size", "lr0", "warm_start", "momentum",
                         "weight_decay", "seed", "precision", "deterministic"});
  auto& t = c.train;
  s.get("epochs", t.epochs);
  s.get("batch_size", t.batch_size);
  s.get("lr0", t.lr0);
  if (s.has("warm_start")) {
    if (s.at("warm_start").is_null()) {
      t.warm_start.reset();
    } else {
      Section w(s.at("warm_start"), "train.warm_start", {"lr", "epochs"});
      WarmStart ws;
      w.get("lr", ws.lr);
      w.get("epochs", ws.epochs);
      t.warm_start = ws;
    }
  }
  s.get("momentum", t.momentum);
  s.get("weight_decay", t.weight_decay);
  s.get_count("seed", t.seed);
  if (s.has("precision")) t.precision = s.get_enum("precision", parse_precision);
  s.get("deterministic", t.deterministic);
}

void parse_data(const json& j, RunConfig& c, const std::filesystem::path& base) {
  Section s(j, "data", {"source", "train_files", "test_file", "train_subset",
                        "test_subset", "augment", "synthetic"});
  auto& d = c.data;
  if (s.has("source")) d.source = s.get_enum("source", parse_data_source);
  if (s.has("train_files")) {
    std::vector<std::string> files;
    s.get("train_files", files);
    d.train_files.clear();
    for (const auto& f : files) d.train_files.push_back(resolve(base, f));
  }
  if (s.has("test_file")) {
    std::string f;
    s.get("test_file", f);
    d.test_file = resolve(base, f);
  }
  s.get_count("train_subset", d.train_subset);
  s.get_count("test_subset", d.test_subset);
  s.get("augment", d.augment);
  if (s.has("synthetic")) {
    Section y(s.at("synthetic"), "data.synthetic",
              {"num_classes", "train_size", "test_size", "image_size", "seed"});
    y.get("num_classes", d.synthetic.num_classes);
    y.get_count("train_size", d.synthetic.train_size);
    y.get_count("test_size", d.synthetic.test_size);
    y.get_count("image_size", d.synthetic.image_size);
    y.get_count("seed", d.synthetic.seed);
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (data.source == DataSource::Synthetic) {
    const auto& y = data.synthetic;
    if (y.num_classes < 2 || y.num_classes > model.num_classes) {
      throw ConfigError("data.synthetic.num_classes: must be in [2, model.num_classes]");
    }
    if (y.train_size == 0) throw ConfigError("data.synthetic.train_size: must be positive");
    if (y.test_size == 0) throw ConfigError("data.synthetic.test_size: must be positive");
    if (y.image_size < 4 || y.image_size % 4 != 0) {
      throw ConfigError("data.synthetic.image_size: must be a positive multiple of 4");
    }
  } else {
    if (data.train_files.empty()) {
      throw ConfigError("data.train_files: cifar10-bin source needs at least one file");
    }
    if (data.test_file.empty()) {
      throw ConfigError("data.test_file: cifar10-bin source needs a test file");
    }
    if (model.num_classes != 10) {
      throw ConfigError("model.num_classes: cifar10-bin data has 10 classes");
    }
  }
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Section root(j, "", {"model", "shake", "train", "data", "output_dir"});
  RunConfig c;
  if (root.has("model")) parse_model(j.at("model"), c);
  if (root.has("shake")) parse_shake(j.at("shake"), c);
  if (root.has("train")) parse_train(j.at("train"), c);
  if (root.has("data")) parse_data(j.at("data"), c, base_dir);
  if (root.has("output_dir")) {
    std::string out;
    root.get("output_dir", out);
    c.output_dir = resolve(base_dir, out);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

std::string dump_run_config(const RunConfig& c) {
  json j;
  j["model"] = {{"family", to_string(c.model.family)},
                {"depth", c.model.depth},
                {"base_width", c.model.base_width},
                {"num_classes", c.model.num_classes}};
  const auto& sh = c.model.shake;
  j["shake"] = {{"forward", to_string(sh.forward)},
                {"backward", to_string(sh.backward)},
                {"level", to_string(sh.level)},
                {"alpha_lo", sh.alpha_lo},
                {"alpha_hi", sh.alpha_hi}};
  const auto& t = c.train;
  j["train"] = {{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"lr0", t.lr0},
                {"warm_start", t.warm_start ? json{{"lr", t.warm_start->lr},
                                                   {"epochs", t.warm_start->epochs}}
                                            : json(nullptr)},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"seed", t.seed},
                {"precision", to_string(t.precision)},
                {"deterministic", t.deterministic}};
  const auto& d = c.data;
  std::vector<std::string> train_files;
  for (const auto& f : d.train_files) train_files.push_back(f.string());
  j["data"] = {{"source", to_string(d.source)},
               {"train_files", train_files},
               {"test_file", d.test_file.string()},
               {"train_subset", d.train_subset},
               {"test_subset", d.test_subset},
               {"augment", d.augment},
               {"synthetic",
                {{"num_classes", d.synthetic.num_classes},
                 {"train_size", d.synthetic.train_size},
                 {"test_size", d.synthetic.test_size},
                 {"image_size", d.synthetic.image_size},
                 {"seed", d.synthetic.seed}}}};
  j["output_dir"] = c.output_dir.string();
  return j.dump(2) + "\n";
}

namespace {

void truncate(Dataset& data, std::size_t n) {
  if (n > 0 && n < data.size()) data.resize(n);
}

// Synthetic test images continue the training sequence, so the two sets
// are disjoint draws from the same distribution.
Dataset synthetic_range(const SyntheticDataConfig& y, std::size_t offset, std::size_t n) {
  Dataset all = synthetic_dataset(y.num_classes, offset + n, y.seed, y.image_size);
  return Dataset(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(offset)),
                 std::make_move_iterator(all.end()));
}

}  // namespace

LoadedData load_data(const RunConfig& config) {
  LoadedData out;
  const auto& d = config.data;
  if (d.source == DataSource::Synthetic) {
    out.train = synthetic_range(d.synthetic, 0, d.synthetic.train_size);
    out.test = synthetic_range(d.synthetic, d.synthetic.train_size, d.synthetic.test_size);
  } else {
    out.train = read_cifar10_bins(d.train_files);
    out.test = read_cifar10_bin(d.test_file);
  }
  truncate(out.train, d.train_subset);
  truncate(out.test, d.test_subset);
  out.stats = compute_stats(out.train);
  return out;
}

Dataset load_test_data(const RunConfig& config) {
  const auto& d = config.data;
  Dataset test;
  if (d.source == DataSource::Synthetic) {
    test = synthetic_range(d.synthetic, d.synthetic.train_size, d.synthetic.test_size);
  } else {
    test = read_cifar10_bin(d.test_file);
  }
  truncate(test, d.test_subset);
  return test;
}

}  // namespace shakelab
