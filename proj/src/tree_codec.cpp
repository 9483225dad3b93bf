#include <cstring>
#include <limits>
#include <string>

#include "rfspmd/error.hpp"
#include "rfspmd/forest.hpp"

namespace rfspmd {
namespace {

class Writer {
 public:
  explicit Writer(Bytes& out) : out_(out) {}

  template <typename T>
  void put(T value) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
  }
  void put_f64(double value) {
    std::uint64_t bits;
    std::memcpy(&bits, &value, sizeof bits);
    put(bits);
  }
  void put_raw(std::span<const std::uint8_t> bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }

 private:
  Bytes& out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> in, const char* what) : in_(in), what_(what) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(T{in_[pos_ + i]} << (8 * i));
    pos_ += sizeof(T);
    return value;
  }
  double get_f64() {
    const auto bits = get<std::uint64_t>();
    double value;
    std::memcpy(&value, &bits, sizeof value);
    return value;
  }
  std::span<const std::uint8_t> get_raw(std::size_t n) {
    need(n);
    auto out = in_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  void expect_magic(const char (&magic)[5]) {
    auto got = get_raw(4);
    if (std::memcmp(got.data(), magic, 4) != 0) fail("bad magic");
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }
  [[noreturn]] void fail(const std::string& why) const {
    throw DecodeError(std::string(what_) + ": " + why + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) fail("truncated buffer");
  }

  std::span<const std::uint8_t> in_;
  const char* what_;
  std::size_t pos_ = 0;
};

}  // namespace

Bytes serialize_tree(const DecisionTree& tree) {
  if (tree.n_classes() > std::numeric_limits<std::uint16_t>::max() ||
      tree.n_features() > std::numeric_limits<std::uint16_t>::max()) {
    throw InvalidArgument("serialize_tree: shape exceeds u16 fields");
  }
  Bytes out;
  Writer w(out);
  w.put_raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("RFT1"), 4));
  w.put(std::uint64_t{tree.global_index()});
  w.put(static_cast<std::uint16_t>(tree.n_classes()));
  w.put(static_cast<std::uint16_t>(tree.n_features()));
  w.put(static_cast<std::uint32_t>(tree.node_count()));
  const auto& nodes = tree.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& node = nodes[i];
    if (node.is_leaf()) {
      auto counts = tree.leaf_counts(node.right);
      std::size_t len = counts.size();
      while (len > 1 && counts[len - 1] == 0) --len;
      w.put(std::uint8_t{0});
      w.put(static_cast<std::uint16_t>(len));
      for (std::size_t c = 0; c < len; ++c) w.put(std::uint32_t{counts[c]});
    } else {
      w.put(std::uint8_t{1});
      w.put(static_cast<std::uint16_t>(node.feature));
      w.put_f64(node.threshold);
      w.put(static_cast<std::uint32_t>(node.right - i - 1));
    }
  }
  return out;
}

namespace {

DecisionTree read_tree(Reader& r) {
  r.expect_magic("RFT1");
  const auto global_index = r.get<std::uint64_t>();
  const auto n_classes = r.get<std::uint16_t>();
  const auto n_features = r.get<std::uint16_t>();
  const auto node_count = r.get<std::uint32_t>();
  if (n_classes == 0 || n_features == 0) r.fail("zero classes or features");
  if (node_count == 0) r.fail("empty tree");
  // Every record is at least 3 bytes; reject impossible counts before allocating.
  if (node_count > r.remaining() / 3) r.fail("node count exceeds buffer");

  std::vector<DecisionTree::Node> nodes;
  std::vector<std::uint32_t> leaf_counts;
  nodes.reserve(node_count);
  std::uint32_t leaves = 0;
  for (std::uint32_t i = 0; i < node_count; ++i) {
    const auto kind = r.get<std::uint8_t>();
    if (kind == 0) {
      const auto len = r.get<std::uint16_t>();
      if (len == 0 || len > n_classes) r.fail("leaf class tally length out of range");
      const std::size_t base = leaf_counts.size();
      leaf_counts.resize(base + n_classes, 0);
      for (std::uint16_t c = 0; c < len; ++c) leaf_counts[base + c] = r.get<std::uint32_t>();
      nodes.push_back({-1, 0.0, leaves++});
    } else if (kind == 1) {
      const auto feature = r.get<std::uint16_t>();
      const double threshold = r.get_f64();
      const auto left_size = r.get<std::uint32_t>();
      if (feature >= n_features) r.fail("feature index out of range");
      const std::uint64_t right = std::uint64_t{i} + 1 + left_size;
      if (left_size == 0 || right >= node_count) r.fail("left subtree size out of range");
      nodes.push_back({feature, threshold, static_cast<std::uint32_t>(right)});
    } else {
      r.fail("unknown node kind " + std::to_string(kind));
    }
  }
  try {
    return DecisionTree(global_index, n_classes, n_features, std::move(nodes), std::move(leaf_counts));
  } catch (const InvalidArgument& e) {
    r.fail(e.what());
  }
}

}  // namespace

DecisionTree deserialize_tree(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "deserialize_tree");
  DecisionTree tree = read_tree(r);
  if (!r.done()) r.fail("trailing bytes");
  return tree;
}

Bytes serialize_forest(const Forest& forest) {
  Bytes out;
  Writer w(out);
  w.put_raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("RFF1"), 4));
  w.put(static_cast<std::uint16_t>(forest.n_classes()));
  w.put(static_cast<std::uint16_t>(forest.n_features()));
  w.put(static_cast<std::uint32_t>(forest.size()));
  for (const auto& tree : forest.trees()) {
    const Bytes encoded = serialize_tree(tree);
    w.put(static_cast<std::uint32_t>(encoded.size()));
    w.put_raw(encoded);
  }
  return out;
}

Forest deserialize_forest(std::span<const std::uint8_t> bytes, const ForestParams& params) {
  Reader r(bytes, "deserialize_forest");
  r.expect_magic("RFF1");
  const auto n_classes = r.get<std::uint16_t>();
  const auto n_features = r.get<std::uint16_t>();
  const auto count = r.get<std::uint32_t>();
  if (count > r.remaining() / 4) r.fail("tree count exceeds buffer");
  std::vector<DecisionTree> trees;
  trees.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>();
    trees.push_back(deserialize_tree(r.get_raw(len)));
  }
  if (!r.done()) r.fail("trailing bytes");
  try {
    return Forest(n_classes, n_features, params, std::move(trees));
  } catch (const InvalidArgument& e) {
    throw DecodeError(std::string("deserialize_forest: ") + e.what());
  }
}

}  // namespace rfspmd
