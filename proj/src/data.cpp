#include "rfspmd/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "rfspmd/error.hpp"

namespace rfspmd {

Dataset::Dataset(std::size_t n_rows, std::size_t n_features, std::vector<double> features,
                 std::vector<ClassId> labels, std::size_t n_classes,
                 std::vector<std::string> feature_names)
    : n_features_(n_features),
      n_classes_(n_classes),
      features_(std::move(features)),
      labels_(std::move(labels)),
      feature_names_(std::move(feature_names)) {
  if (n_rows == 0 || n_features == 0) throw InvalidArgument("Dataset: need n >= 1 and p >= 1");
  if (n_classes < 2) throw InvalidArgument("Dataset: need at least 2 classes");
  if (labels_.size() != n_rows) throw InvalidArgument("Dataset: label count != row count");
  if (features_.size() != n_rows * n_features) {
    throw InvalidArgument("Dataset: feature matrix size != n * p");
  }
  if (!feature_names_.empty() && feature_names_.size() != n_features) {
    throw InvalidArgument("Dataset: feature_names size != p");
  }
  for (ClassId c : labels_) {
    if (c >= n_classes_) throw InvalidArgument("Dataset: label out of range");
  }
  for (double v : features_) {
    if (!std::isfinite(v)) throw InvalidArgument("Dataset: non-finite feature value");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  std::vector<double> feats;
  std::vector<ClassId> labs;
  feats.reserve(rows.size() * n_features_);
  labs.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= n_rows()) throw InvalidArgument("Dataset::subset: row index out of range");
    auto src = row(r);
    feats.insert(feats.end(), src.begin(), src.end());
    labs.push_back(labels_[r]);
  }
  return Dataset(rows.size(), n_features_, std::move(feats), std::move(labs), n_classes_,
                 feature_names_);
}

namespace {

std::string where(std::string_view source, std::size_t line) {
  std::ostringstream os;
  os << source << ":" << line;
  return os.str();
}

}  // namespace

Dataset parse_dataset(std::string_view text, const LabeledCsvFormat& format,
                      std::string_view source_name) {
  if (format.n_classes < 2 || format.n_classes > 26) {
    throw InvalidArgument("LabeledCsvFormat: n_classes must be in [2, 26]");
  }
  std::optional<std::size_t> p = format.n_features;
  std::vector<double> features;
  std::vector<ClassId> labels;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    std::vector<std::string_view> fields;
    std::size_t start = 0;
    for (;;) {
      std::size_t comma = line.find(',', start);
      if (comma == std::string_view::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    if (!p) {
      if (fields.size() < 2) {
        throw InvalidArgument(where(source_name, line_no) + ": expected a label and features");
      }
      p = fields.size() - 1;
    }
    if (fields.size() != *p + 1) {
      throw InvalidArgument(where(source_name, line_no) + ": expected " +
                            std::to_string(*p + 1) + " fields, found " +
                            std::to_string(fields.size()));
    }
    const std::string_view label = fields[0];
    if (label.size() != 1 || label[0] < 'A' || label[0] > 'Z') {
      throw InvalidArgument(where(source_name, line_no) + " field 1: label '" +
                            std::string(label) + "' is not a capital letter A-Z");
    }
    const auto cls = static_cast<ClassId>(label[0] - 'A');
    if (cls >= format.n_classes) {
      throw InvalidArgument(where(source_name, line_no) + " field 1: label '" +
                            std::string(label) + "' outside the first " +
                            std::to_string(format.n_classes) + " classes");
    }
    labels.push_back(cls);
    for (std::size_t f = 1; f < fields.size(); ++f) {
      std::string_view field = fields[f];
      long long value = 0;
      auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
      if (ec != std::errc() || end != field.data() + field.size() || field.empty()) {
        throw InvalidArgument(where(source_name, line_no) + " field " + std::to_string(f + 1) +
                              ": '" + std::string(field) + "' is not an integer");
      }
      features.push_back(static_cast<double>(value));
    }
  }
  if (labels.empty()) throw InvalidArgument(std::string(source_name) + ": no data rows");
  const std::size_t n = labels.size();
  return Dataset(n, *p, std::move(features), std::move(labels), format.n_classes);
}

Dataset load_dataset(const std::filesystem::path& path, const LabeledCsvFormat& format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open dataset file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str(), format, path.string());
}

std::string format_dataset(const Dataset& ds) {
  if (ds.n_classes() > 26) throw InvalidArgument("format_dataset: more than 26 classes");
  std::string out;
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    out.push_back(static_cast<char>('A' + ds.labels()[r]));
    for (double v : ds.row(r)) {
      if (v != std::floor(v) || std::fabs(v) > 9.0e15) {
        throw InvalidArgument("format_dataset: feature values must be integers");
      }
      out.push_back(',');
      out += std::to_string(static_cast<long long>(v));
    }
    out.push_back('\n');
  }
  return out;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  const std::string text = format_dataset(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write dataset file: " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

TrainTestSplit train_test_split(std::size_t n_rows, double test_frac, RngStream stream) {
  if (!(test_frac >= 0.0 && test_frac <= 1.0)) {
    throw InvalidArgument("train_test_split: test_frac must be in [0, 1]");
  }
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n_rows) * test_frac));
  TrainTestSplit split;
  split.test_indices = sample_without_replacement(stream, n_rows, n_test);
  std::sort(split.test_indices.begin(), split.test_indices.end());
  split.train_indices.reserve(n_rows - n_test);
  std::size_t t = 0;
  for (std::size_t i = 0; i < n_rows; ++i) {
    if (t < split.test_indices.size() && split.test_indices[t] == i) {
      ++t;
    } else {
      split.train_indices.push_back(i);
    }
  }
  return split;
}

Dataset synth_dataset(std::size_t n, std::size_t p, std::size_t n_classes, RngStream stream) {
  if (n_classes < 2 || n < n_classes || p == 0) {
    throw InvalidArgument("synth_dataset: need n >= n_classes >= 2 and p >= 1");
  }
  constexpr std::uint64_t kMeanLevels = 8;  // means on a grid of spacing 4
  constexpr std::uint64_t kNoise = 7;       // noise in [-3, 3]

  std::vector<std::vector<long long>> means;
  std::set<std::vector<long long>> seen;
  std::size_t attempts = 0;
  while (means.size() < n_classes) {
    std::vector<long long> m(p);
    for (auto& v : m) v = static_cast<long long>(stream.rand_below(kMeanLevels)) * 4;
    // With tiny p the grid can run out of distinct vectors; widen it.
    if (++attempts > 64 * n_classes) m[0] += static_cast<long long>(attempts) * 4;
    if (seen.insert(m).second) means.push_back(std::move(m));
  }

  std::vector<ClassId> labels(n);
  auto cover = sample_without_replacement(stream, n_classes, n_classes);
  for (std::size_t i = 0; i < n_classes; ++i) labels[i] = static_cast<ClassId>(cover[i]);
  for (std::size_t i = n_classes; i < n; ++i) {
    labels[i] = static_cast<ClassId>(stream.rand_below(n_classes));
  }

  std::vector<double> features;
  features.reserve(n * p);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      const long long noise = static_cast<long long>(stream.rand_below(kNoise)) - 3;
      features.push_back(static_cast<double>(means[labels[i]][j] + noise));
    }
  }
  return Dataset(n, p, std::move(features), std::move(labels), n_classes);
}

}  // namespace rfspmd
