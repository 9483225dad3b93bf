#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rfspmd/rng.hpp"

namespace rfspmd {

using ClassId = std::uint32_t;

// Row-major numeric feature matrix with one class label per row.
// All indices are 0-based; the letter file's A..Z map to 0..25.
class Dataset {
 public:
  Dataset(std::size_t n_rows, std::size_t n_features, std::vector<double> features,
          std::vector<ClassId> labels, std::size_t n_classes,
          std::vector<std::string> feature_names = {});

  std::size_t n_rows() const { return labels_.size(); }
  std::size_t n_features() const { return n_features_; }
  std::size_t n_classes() const { return n_classes_; }

  std::span<const double> row(std::size_t i) const {
    return {features_.data() + i * n_features_, n_features_};
  }
  double at(std::size_t row, std::size_t col) const { return features_[row * n_features_ + col]; }
  const std::vector<double>& features() const { return features_; }
  const std::vector<ClassId>& labels() const { return labels_; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }

  // Copy of the listed rows, in the given order.
  Dataset subset(std::span<const std::size_t> rows) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::size_t n_features_;
  std::size_t n_classes_;
  std::vector<double> features_;
  std::vector<ClassId> labels_;
  std::vector<std::string> feature_names_;
};

// Layout of a labeled CSV: a capital letter label then integer features.
struct LabeledCsvFormat {
  // Expected feature columns; nullopt infers it from the first line.
  std::optional<std::size_t> n_features = 16;
  std::size_t n_classes = 26;
};

Dataset load_dataset(const std::filesystem::path& path, const LabeledCsvFormat& format = {});
Dataset parse_dataset(std::string_view text, const LabeledCsvFormat& format = {},
                      std::string_view source_name = "<memory>");

// Writes the same layout load_dataset reads. Requires integer-valued
// features and n_classes <= 26.
void write_dataset(const Dataset& ds, const std::filesystem::path& path);
std::string format_dataset(const Dataset& ds);

struct TrainTestSplit {
  std::vector<std::size_t> train_indices;  // sorted
  std::vector<std::size_t> test_indices;   // sorted
};

// round(n * test_frac) rows sampled without replacement for testing.
TrainTestSplit train_test_split(std::size_t n_rows, double test_frac, RngStream stream);
inline TrainTestSplit train_test_split(const Dataset& ds, double test_frac, RngStream stream) {
  return train_test_split(ds.n_rows(), test_frac, std::move(stream));
}

// Learnable synthetic data: each class gets a distinct integer mean vector,
// rows are mean + integer uniform noise. The first n_classes rows cover the
// classes in a stream-drawn permutation; the rest draw labels uniformly.
Dataset synth_dataset(std::size_t n, std::size_t p, std::size_t n_classes, RngStream stream);

}  // namespace rfspmd
