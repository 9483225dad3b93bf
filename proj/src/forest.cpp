#include "rfspmd/forest.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "rfspmd/error.hpp"

namespace rfspmd {

std::size_t ForestParams::resolved_mtry(std::size_t n_features) const {
  if (mtry) return *mtry;
  const auto m = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n_features))));
  return std::max<std::size_t>(m, 1);
}

std::size_t ForestParams::resolved_bootstrap_size(std::size_t n_train) const {
  return bootstrap_size.value_or(n_train);
}

void ForestParams::validate(std::size_t n_features) const {
  const std::size_t m = resolved_mtry(n_features);
  if (m < 1 || m > n_features) {
    throw InvalidArgument("ForestParams: mtry must be in [1, " + std::to_string(n_features) + "]");
  }
  if (n_trees < 1) throw InvalidArgument("ForestParams: n_trees must be >= 1");
  if (min_node_size < 1) throw InvalidArgument("ForestParams: min_node_size must be >= 1");
  if (bootstrap_size && *bootstrap_size < 1) {
    throw InvalidArgument("ForestParams: bootstrap_size must be >= 1");
  }
}

TrainingSet::TrainingSet(const Dataset& ds)
    : n_features_(ds.n_features()), n_classes_(ds.n_classes()), labels_(ds.labels()) {
  const std::size_t n = ds.n_rows();
  columns_.resize(n * n_features_);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t f = 0; f < n_features_; ++f) columns_[f * n + r] = ds.at(r, f);
  }
}

TrainingSet::TrainingSet(const Dataset& ds, std::span<const std::size_t> rows)
    : n_features_(ds.n_features()), n_classes_(ds.n_classes()) {
  const std::size_t n = rows.size();
  columns_.resize(n * n_features_);
  labels_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i] >= ds.n_rows()) throw InvalidArgument("TrainingSet: row index out of range");
    labels_.push_back(ds.labels()[rows[i]]);
    for (std::size_t f = 0; f < n_features_; ++f) columns_[f * n + i] = ds.at(rows[i], f);
  }
}

double gini_impurity(std::span<const std::uint32_t> counts) {
  double total = 0;
  for (auto c : counts) total += c;
  if (total == 0) return 0.0;
  double sum_sq = 0;
  for (auto c : counts) {
    const double p = c / total;
    sum_sq += p * p;
  }
  return 1.0 - sum_sq;
}

// ---------------------------------------------------------------------------
// DecisionTree

DecisionTree::DecisionTree(std::uint64_t global_index, std::size_t n_classes,
                           std::size_t n_features, std::vector<Node> nodes,
                           std::vector<std::uint32_t> leaf_counts)
    : global_index_(global_index),
      n_classes_(n_classes),
      n_features_(n_features),
      nodes_(std::move(nodes)),
      leaf_counts_(std::move(leaf_counts)) {
  if (n_classes_ < 1 || n_features_ < 1) throw InvalidArgument("DecisionTree: empty shape");
  if (nodes_.empty()) throw InvalidArgument("DecisionTree: no nodes");
  if (leaf_counts_.size() % n_classes_ != 0) {
    throw InvalidArgument("DecisionTree: leaf count table size mismatch");
  }
  const std::size_t leaves = leaf_counts_.size() / n_classes_;
  std::size_t seen_leaves = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (node.is_leaf()) {
      if (node.right != seen_leaves) throw InvalidArgument("DecisionTree: leaf ordinals out of order");
      ++seen_leaves;
    } else {
      if (static_cast<std::size_t>(node.feature) >= n_features_) {
        throw InvalidArgument("DecisionTree: feature index out of range");
      }
      if (node.right <= i + 1 || node.right >= nodes_.size()) {
        throw InvalidArgument("DecisionTree: bad right-child reference");
      }
    }
  }
  if (seen_leaves != leaves) throw InvalidArgument("DecisionTree: leaf table/node mismatch");
  // Preorder layout: subtree(i) = i, subtree(i+1), subtree(right) contiguously.
  std::vector<std::size_t> subtree(nodes_.size(), 1);
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    const Node& node = nodes_[i];
    if (node.is_leaf()) continue;
    if (node.right != i + 1 + subtree[i + 1]) {
      throw InvalidArgument("DecisionTree: right child does not follow the left subtree");
    }
    subtree[i] = 1 + subtree[i + 1] + subtree[node.right];
  }
  if (subtree[0] != nodes_.size()) throw InvalidArgument("DecisionTree: nodes outside the root subtree");

  leaf_majority_.resize(leaves);
  for (std::size_t leaf = 0; leaf < leaves; ++leaf) {
    auto counts = this->leaf_counts(leaf);
    std::uint64_t sum = 0;
    for (auto c : counts) sum += c;
    if (sum == 0) throw InvalidArgument("DecisionTree: leaf with no training rows");
    leaf_majority_[leaf] =
        static_cast<ClassId>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
}

std::size_t DecisionTree::leaf_node_for(std::span<const double> row) const {
  std::size_t i = 0;
  while (!nodes_[i].is_leaf()) {
    const Node& node = nodes_[i];
    i = row[static_cast<std::size_t>(node.feature)] <= node.threshold ? i + 1 : node.right;
  }
  return i;
}

ClassId DecisionTree::predict(std::span<const double> row) const {
  return leaf_majority_[nodes_[leaf_node_for(row)].right];
}

std::size_t DecisionTree::depth() const {
  // Preorder walk with an explicit stack of (node, depth).
  std::size_t best = 0;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [i, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    if (!nodes_[i].is_leaf()) {
      stack.emplace_back(nodes_[i].right, d + 1);
      stack.emplace_back(i + 1, d + 1);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Tree building

namespace {

// Split quality is compared exactly. For a split with left/right sizes
// (nl, nr) and squared class-count sums (a, b), the weighted child Gini is
// n - (a/nl + b/nr); maximizing a/nl + b/nr = (a*nr + b*nl) / (nl*nr)
// maximizes the impurity decrease. Fractions compare by cross
// multiplication in 128-bit integers.
struct Score {
  unsigned __int128 num = 0;
  unsigned __int128 den = 1;

  bool better_than(const Score& other) const { return num * other.den > other.num * den; }
};

struct BestSplit {
  bool found = false;
  std::size_t feature = 0;
  double threshold = 0.0;
  Score score;
};

struct Entry {
  double value;
  ClassId label;
};

class TreeBuilder {
 public:
  TreeBuilder(const TrainingSet& train, const ForestParams& params, RngStream stream,
              const SplitObserver& observer)
      : train_(train),
        params_(params),
        stream_(std::move(stream)),
        observer_(observer),
        n_classes_(train.n_classes()),
        mtry_(params.resolved_mtry(train.n_features())) {}

  DecisionTree build(std::uint64_t global_index) {
    const std::size_t bag_size = params_.resolved_bootstrap_size(train_.n_rows());
    auto draws = sample_with_replacement(stream_, train_.n_rows(), bag_size);
    bag_.assign(draws.begin(), draws.end());

    struct Task {
      std::size_t begin, end, depth;
      std::size_t parent;  // node whose `right` points here; npos for root/left
    };
    constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::vector<Task> stack{{0, bag_.size(), 0, npos}};
    std::vector<std::uint32_t> counts(n_classes_);

    while (!stack.empty()) {
      const Task task = stack.back();
      stack.pop_back();
      const std::size_t index = nodes_.size();
      if (task.parent != npos) nodes_[task.parent].right = static_cast<std::uint32_t>(index);

      std::fill(counts.begin(), counts.end(), 0);
      for (std::size_t i = task.begin; i < task.end; ++i) ++counts[train_.label(bag_[i])];

      const std::size_t size = task.end - task.begin;
      const bool pure = std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }) <= 1;
      const bool too_small = size < 2 * params_.min_node_size;
      const bool too_deep = params_.max_depth && task.depth >= *params_.max_depth;

      BestSplit best;
      if (!pure && !too_small && !too_deep) best = find_split(task.begin, task.end, counts);

      if (!best.found) {
        nodes_.push_back({-1, 0.0, static_cast<std::uint32_t>(leaf_counts_.size() / n_classes_)});
        leaf_counts_.insert(leaf_counts_.end(), counts.begin(), counts.end());
        continue;
      }

      auto* first = bag_.data() + task.begin;
      auto* last = bag_.data() + task.end;
      auto* mid = std::partition(first, last, [&](std::uint32_t row) {
        return train_.value(best.feature, row) <= best.threshold;
      });
      const std::size_t split_at = task.begin + static_cast<std::size_t>(mid - first);
      nodes_.push_back({static_cast<std::int32_t>(best.feature), best.threshold, 0});
      stack.push_back({split_at, task.end, task.depth + 1, index});
      stack.push_back({task.begin, split_at, task.depth + 1, npos});
    }
    return DecisionTree(global_index, n_classes_, train_.n_features(), std::move(nodes_),
                        std::move(leaf_counts_));
  }

 private:
  BestSplit find_split(std::size_t begin, std::size_t end, std::span<const std::uint32_t> counts) {
    auto features = sample_without_replacement(stream_, train_.n_features(), mtry_);
    std::sort(features.begin(), features.end());

    const std::size_t n = end - begin;
    std::uint64_t parent_sq = 0;
    for (auto c : counts) parent_sq += std::uint64_t{c} * c;

    left_.assign(n_classes_, 0);
    right_.assign(n_classes_, 0);
    BestSplit best;
    for (std::size_t feature : features) {
      entries_.clear();
      for (std::size_t i = begin; i < end; ++i) {
        entries_.push_back({train_.value(feature, bag_[i]), train_.label(bag_[i])});
      }
      std::sort(entries_.begin(), entries_.end(),
                [](const Entry& a, const Entry& b) { return a.value < b.value; });
      if (entries_.front().value == entries_.back().value) continue;

      std::fill(left_.begin(), left_.end(), 0);
      std::copy(counts.begin(), counts.end(), right_.begin());
      std::uint64_t left_sq = 0;
      std::uint64_t right_sq = parent_sq;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const ClassId c = entries_[i].label;
        left_sq += 2 * std::uint64_t{left_[c]} + 1;
        right_sq -= 2 * std::uint64_t{right_[c]} - 1;
        ++left_[c];
        --right_[c];
        const double lo = entries_[i].value;
        const double hi = entries_[i + 1].value;
        if (lo == hi) continue;
        const std::uint64_t nl = i + 1;
        const std::uint64_t nr = n - nl;
        Score score{static_cast<unsigned __int128>(left_sq) * nr +
                        static_cast<unsigned __int128>(right_sq) * nl,
                    static_cast<unsigned __int128>(nl) * nr};
        if (!best.found || score.better_than(best.score)) {
          double threshold = lo + (hi - lo) / 2;
          if (!(threshold >= lo && threshold < hi)) threshold = lo;
          best = {true, feature, threshold, score};
        }
      }
    }

    // Require a strictly positive decrease: score > parent_sq / n.
    if (best.found && !best.score.better_than(Score{parent_sq, n})) best.found = false;

    if (observer_) report(begin, end, features, best, parent_sq);
    return best;
  }

  void report(std::size_t begin, std::size_t end, std::span<const std::size_t> features,
              const BestSplit& best, std::uint64_t parent_sq) {
    const std::vector<std::uint32_t> rows(bag_.begin() + begin, bag_.begin() + end);
    SplitRecord record{rows, features, std::nullopt, 0.0, 0.0};
    if (best.found) {
      const double n = static_cast<double>(end - begin);
      const double proxy = static_cast<double>(best.score.num) / static_cast<double>(best.score.den);
      record.feature = best.feature;
      record.threshold = best.threshold;
      record.decrease = (proxy - static_cast<double>(parent_sq) / n) / n;
    }
    observer_(record);
  }

  const TrainingSet& train_;
  const ForestParams& params_;
  RngStream stream_;
  const SplitObserver& observer_;
  std::size_t n_classes_;
  std::size_t mtry_;

  std::vector<std::uint32_t> bag_;
  std::vector<DecisionTree::Node> nodes_;
  std::vector<std::uint32_t> leaf_counts_;
  std::vector<Entry> entries_;
  std::vector<std::uint32_t> left_, right_;
};

}  // namespace

DecisionTree build_tree(const TrainingSet& train, const ForestParams& params, std::uint64_t seed,
                        std::uint64_t global_index, const SplitObserver& observer) {
  if (train.n_rows() == 0) throw InvalidArgument("build_tree: empty training set");
  params.validate(train.n_features());
  TreeBuilder builder(train, params, make_stream(seed, {StreamPurpose::kTree, global_index}),
                      observer);
  return builder.build(global_index);
}

// ---------------------------------------------------------------------------
// Forest

Forest::Forest(std::size_t n_classes, std::size_t n_features, ForestParams params,
               std::vector<DecisionTree> trees)
    : n_classes_(n_classes), n_features_(n_features), params_(std::move(params)),
      trees_(std::move(trees)) {
  std::sort(trees_.begin(), trees_.end(), [](const DecisionTree& a, const DecisionTree& b) {
    return a.global_index() < b.global_index();
  });
  for (std::size_t i = 0; i < trees_.size(); ++i) {
    if (trees_[i].n_classes() != n_classes_ || trees_[i].n_features() != n_features_) {
      throw InvalidArgument("Forest: tree shape does not match forest");
    }
    if (i > 0 && trees_[i].global_index() == trees_[i - 1].global_index()) {
      throw InvalidArgument("Forest: duplicate global tree index " +
                            std::to_string(trees_[i].global_index()));
    }
  }
}

Forest build_forest_block(const TrainingSet& train, const ForestParams& params,
                          std::span<const std::uint64_t> tree_indices, std::uint64_t seed) {
  std::set<std::uint64_t> unique(tree_indices.begin(), tree_indices.end());
  if (unique.size() != tree_indices.size()) {
    throw InvalidArgument("build_forest_block: duplicate tree indices");
  }
  std::vector<DecisionTree> trees;
  trees.reserve(tree_indices.size());
  for (std::uint64_t index : tree_indices) trees.push_back(build_tree(train, params, seed, index));
  return Forest(train.n_classes(), train.n_features(), params, std::move(trees));
}

Forest combine(std::span<const Forest> blocks) {
  if (blocks.empty()) throw InvalidArgument("combine: no blocks");
  const Forest& first = blocks.front();
  std::vector<DecisionTree> trees;
  for (const Forest& block : blocks) {
    if (block.n_classes() != first.n_classes() || block.n_features() != first.n_features() ||
        !(block.params() == first.params())) {
      throw InvalidArgument("combine: blocks disagree on shape or parameters");
    }
    trees.insert(trees.end(), block.trees().begin(), block.trees().end());
  }
  return Forest(first.n_classes(), first.n_features(), first.params(), std::move(trees));
}

namespace {

ClassId vote(const Forest& forest, std::span<const double> row, std::vector<std::uint32_t>& tally) {
  std::fill(tally.begin(), tally.end(), 0);
  for (const DecisionTree& tree : forest.trees()) ++tally[tree.predict(row)];
  return static_cast<ClassId>(std::max_element(tally.begin(), tally.end()) - tally.begin());
}

void check_predictable(const Forest& forest, std::size_t n_columns) {
  if (forest.empty()) throw InvalidArgument("predict_forest: empty forest");
  if (n_columns != forest.n_features()) {
    throw InvalidArgument("predict_forest: expected " + std::to_string(forest.n_features()) +
                          " columns, got " + std::to_string(n_columns));
  }
}

}  // namespace

std::vector<ClassId> predict_forest(const Forest& forest, std::span<const double> rows,
                                    std::size_t n_columns) {
  check_predictable(forest, n_columns);
  if (rows.size() % n_columns != 0) {
    throw InvalidArgument("predict_forest: row buffer is not a whole number of rows");
  }
  std::vector<std::uint32_t> tally(forest.n_classes());
  std::vector<ClassId> out;
  out.reserve(rows.size() / n_columns);
  for (std::size_t off = 0; off < rows.size(); off += n_columns) {
    out.push_back(vote(forest, rows.subspan(off, n_columns), tally));
  }
  return out;
}

std::vector<ClassId> predict_forest(const Forest& forest, const Dataset& ds,
                                    std::span<const std::size_t> row_indices) {
  check_predictable(forest, ds.n_features());
  std::vector<std::uint32_t> tally(forest.n_classes());
  std::vector<ClassId> out;
  out.reserve(row_indices.size());
  for (std::size_t r : row_indices) out.push_back(vote(forest, ds.row(r), tally));
  return out;
}

std::size_t count_correct(std::span<const ClassId> predicted, std::span<const ClassId> truth) {
  if (predicted.size() != truth.size()) throw InvalidArgument("accuracy: length mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i];
  return hits;
}

double accuracy(std::span<const ClassId> predicted, std::span<const ClassId> truth) {
  const std::size_t hits = count_correct(predicted, truth);
  if (predicted.empty()) throw InvalidArgument("accuracy: empty input");
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

}  // namespace rfspmd
