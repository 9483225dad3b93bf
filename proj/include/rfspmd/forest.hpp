#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rfspmd/data.hpp"

namespace rfspmd {

using Bytes = std::vector<std::uint8_t>;

struct ForestParams {
  std::size_t n_trees = 500;
  std::optional<std::size_t> mtry;            // default floor(sqrt(p))
  std::size_t min_node_size = 1;
  std::optional<std::size_t> max_depth;       // default unlimited
  std::optional<std::size_t> bootstrap_size;  // default n_train

  std::size_t resolved_mtry(std::size_t n_features) const;
  std::size_t resolved_bootstrap_size(std::size_t n_train) const;
  // Throws InvalidArgument unless 1 <= mtry <= p, n_trees >= 1, min_node_size >= 1.
  void validate(std::size_t n_features) const;

  friend bool operator==(const ForestParams&, const ForestParams&) = default;
};

// Column-major copy of the training rows, shared read-only by every
// concurrent tree build.
class TrainingSet {
 public:
  explicit TrainingSet(const Dataset& ds);
  TrainingSet(const Dataset& ds, std::span<const std::size_t> rows);

  std::size_t n_rows() const { return labels_.size(); }
  std::size_t n_features() const { return n_features_; }
  std::size_t n_classes() const { return n_classes_; }
  double value(std::size_t feature, std::size_t row) const {
    return columns_[feature * labels_.size() + row];
  }
  ClassId label(std::size_t row) const { return labels_[row]; }

 private:
  std::size_t n_features_;
  std::size_t n_classes_;
  std::vector<double> columns_;
  std::vector<ClassId> labels_;
};

// Gini impurity 1 - sum p_i^2 of a class tally.
double gini_impurity(std::span<const std::uint32_t> counts);

// Binary classification tree stored as a flat preorder node array: an
// internal node's left child directly follows it. Rows with
// value <= threshold go left.
class DecisionTree {
 public:
  struct Node {
    std::int32_t feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    std::uint32_t right = 0;    // internal: index of right child; leaf: leaf ordinal
    bool is_leaf() const { return feature < 0; }
    friend bool operator==(const Node&, const Node&) = default;
  };

  DecisionTree(std::uint64_t global_index, std::size_t n_classes, std::size_t n_features,
               std::vector<Node> nodes, std::vector<std::uint32_t> leaf_counts);

  std::uint64_t global_index() const { return global_index_; }
  std::size_t n_classes() const { return n_classes_; }
  std::size_t n_features() const { return n_features_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t leaf_count() const { return leaf_majority_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

  std::span<const std::uint32_t> leaf_counts(std::size_t leaf) const {
    return {leaf_counts_.data() + leaf * n_classes_, n_classes_};
  }
  ClassId leaf_class(std::size_t leaf) const { return leaf_majority_[leaf]; }

  // Index of the leaf node reached by `row`.
  std::size_t leaf_node_for(std::span<const double> row) const;
  ClassId predict(std::span<const double> row) const;
  std::size_t depth() const;

  friend bool operator==(const DecisionTree& a, const DecisionTree& b) {
    return a.global_index_ == b.global_index_ && a.n_classes_ == b.n_classes_ &&
           a.n_features_ == b.n_features_ && a.nodes_ == b.nodes_ &&
           a.leaf_counts_ == b.leaf_counts_;
  }

 private:
  std::uint64_t global_index_;
  std::size_t n_classes_;
  std::size_t n_features_;
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> leaf_counts_;  // n_classes per leaf
  std::vector<ClassId> leaf_majority_;
};

// What the builder saw and chose at one node; handed to an optional
// observer so tests can check every split against brute force.
struct SplitRecord {
  std::span<const std::uint32_t> rows;          // bag positions' training rows
  std::span<const std::size_t> features;        // sampled candidates, ascending
  std::optional<std::size_t> feature;           // nullopt: no positive split
  double threshold = 0.0;
  double decrease = 0.0;                        // parent Gini - weighted child Gini
};
using SplitObserver = std::function<void(const SplitRecord&)>;

// Bootstrap draw and recursive Gini splitting, keyed by stream
// (seed, (kTree, global_index)).
DecisionTree build_tree(const TrainingSet& train, const ForestParams& params, std::uint64_t seed,
                        std::uint64_t global_index, const SplitObserver& observer = {});

// Trees ordered by global index, all sharing one shape and parameter set.
class Forest {
 public:
  Forest(std::size_t n_classes, std::size_t n_features, ForestParams params,
         std::vector<DecisionTree> trees = {});

  std::size_t n_classes() const { return n_classes_; }
  std::size_t n_features() const { return n_features_; }
  const ForestParams& params() const { return params_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }
  std::size_t size() const { return trees_.size(); }
  bool empty() const { return trees_.empty(); }

  friend bool operator==(const Forest&, const Forest&) = default;

 private:
  std::size_t n_classes_;
  std::size_t n_features_;
  ForestParams params_;
  std::vector<DecisionTree> trees_;
};

// One tree per listed global index; throws InvalidArgument on duplicates.
Forest build_forest_block(const TrainingSet& train, const ForestParams& params,
                          std::span<const std::uint64_t> tree_indices, std::uint64_t seed);

// Merge blocks and sort by global index.
Forest combine(std::span<const Forest> blocks);

// Majority vote over per-tree leaf classes, ties to the lowest class.
std::vector<ClassId> predict_forest(const Forest& forest, std::span<const double> rows,
                                    std::size_t n_columns);
std::vector<ClassId> predict_forest(const Forest& forest, const Dataset& ds,
                                    std::span<const std::size_t> row_indices);

double accuracy(std::span<const ClassId> predicted, std::span<const ClassId> truth);
std::size_t count_correct(std::span<const ClassId> predicted, std::span<const ClassId> truth);

// Portable little-endian tree encoding:
//   "RFT1" | global_index u64 | n_classes u16 | n_features u16 | node_count u32
//   then preorder records: kind u8 (0 leaf, 1 internal);
//   leaf: len u16 + len x u32 counts (trailing zeros trimmed);
//   internal: feature u16 | threshold f64 | left_subtree_node_count u32.
Bytes serialize_tree(const DecisionTree& tree);
DecisionTree deserialize_tree(std::span<const std::uint8_t> bytes);

// Forest block for transport: "RFF1" | n_classes u16 | n_features u16 |
// tree_count u32 | (u32 length + tree bytes) per tree. Params travel
// out of band.
Bytes serialize_forest(const Forest& forest);
Forest deserialize_forest(std::span<const std::uint8_t> bytes, const ForestParams& params);

}  // namespace rfspmd
