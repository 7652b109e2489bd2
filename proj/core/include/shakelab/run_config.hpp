#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "shakelab/data.hpp"
#include "shakelab/model.hpp"
#include "shakelab/train.hpp"

namespace shakelab {

enum class DataSource { Synthetic, Cifar10Bin };

std::string_view to_string(DataSource source);
DataSource parse_data_source(std::string_view text);

struct SyntheticDataConfig {
  int num_classes = 10;
  std::size_t train_size = 512;
  std::size_t test_size = 256;
  std::size_t image_size = 32;
  std::uint64_t seed = 0;

  friend bool operator==(const SyntheticDataConfig&, const SyntheticDataConfig&) = default;
};

struct DataConfig {
  DataSource source = DataSource::Synthetic;
  std::vector<std::filesystem::path> train_files;
  std::filesystem::path test_file;
  // Use only the first n images of each set; 0 keeps all of them.
  std::size_t train_subset = 0;
  std::size_t test_subset = 0;
  bool augment = true;
  SyntheticDataConfig synthetic;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct RunConfig {
  ModelSpec model;
  TrainConfig train;
  DataConfig data;
  std::filesystem::path output_dir = "run";

  // Checks every section; throws ConfigError naming the field.
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Parses JSON text. Missing keys take their defaults, unknown keys are
// rejected. Relative paths are resolved against base_dir.
RunConfig parse_run_config(const std::string& text,
                           const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

// Every field written out, so parsing the result gives back the same config.
std::string dump_run_config(const RunConfig& config);

struct LoadedData {
  Dataset train;
  Dataset test;
  DatasetStats stats;  // computed on the training set
};

LoadedData load_data(const RunConfig& config);
// Test set only, for evaluation of a stored run.
Dataset load_test_data(const RunConfig& config);

}  // namespace shakelab
