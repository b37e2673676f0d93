#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "csv.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace cartelgame {

// Column order of the screen features in training and prediction tables.
inline const std::vector<std::string>& screen_feature_names() {
  static const std::vector<std::string> names{"SPD", "CV", "RD", "RDNORM", "DIFFP"};
  return names;
}

inline bool is_missing(double x) { return std::isnan(x); }

// Feature rows with binary labels; NaN marks a missing feature value.
struct LabeledDataset {
  std::vector<std::string> feature_names;
  std::vector<std::vector<double>> features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t arity() const { return feature_names.size(); }

  std::size_t count(int label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
  }

  void add(std::vector<double> row, int label) {
    if (row.size() != arity()) throw ValidationError("feature row has the wrong arity");
    if (label != 0 && label != 1) throw ValidationError("labels must be 0 or 1");
    features.push_back(std::move(row));
    labels.push_back(label);
  }

  LabeledDataset subset(std::span<const std::size_t> rows) const {
    LabeledDataset out{feature_names, {}, {}};
    out.features.reserve(rows.size());
    out.labels.reserve(rows.size());
    for (auto r : rows) {
      out.features.push_back(features.at(r));
      out.labels.push_back(labels.at(r));
    }
    return out;
  }
};

// Unlabeled rows keyed by an external id (the Part-3 dataset).
struct FeatureTable {
  std::vector<std::string> feature_names;
  std::vector<long long> ids;
  std::vector<std::vector<double>> features;
};

namespace detail {
inline std::vector<std::size_t> require_columns(const csv::Table& t, const std::vector<std::string>& names) {
  std::vector<std::size_t> cols;
  std::vector<std::string> missing;
  for (const auto& n : names) {
    if (auto c = t.column(n)) {
      cols.push_back(*c);
    } else {
      missing.push_back(n);
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing column(s):";
    for (const auto& m : missing) msg += " " + m;
    throw ValidationError(msg);
  }
  return cols;
}

}  // namespace detail

// Training CSV: columns cartel,SPD,CV,RD,RDNORM,DIFFP in any order, extra
// columns ignored, ';' or ',' separated. Empty or NA fields are missing.
inline LabeledDataset read_training_csv(std::string_view text) {
  const auto table = csv::parse(text);
  const auto& features = screen_feature_names();
  auto label_col = detail::require_columns(table, {"cartel"}).front();
  auto cols = detail::require_columns(table, features);
  LabeledDataset out{features, {}, {}};
  std::vector<std::string> problems;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto line = table.line_numbers[r];
    if (row.size() != table.header.size()) {
      problems.push_back("line " + std::to_string(line) + ": expected " + std::to_string(table.header.size()) +
                         " fields, found " + std::to_string(row.size()));
      continue;
    }
    const auto& label = row[label_col];
    if (label != "0" && label != "1") {
      problems.push_back("line " + std::to_string(line) + ": cartel label '" + label + "' is not 0 or 1");
      continue;
    }
    std::vector<double> x;
    try {
      for (std::size_t f = 0; f < cols.size(); ++f) x.push_back(csv::parse_real(row[cols[f]], line, features[f]));
    } catch (const ValidationError& e) {
      problems.push_back(e.what());
      continue;
    }
    out.features.push_back(std::move(x));
    out.labels.push_back(label == "1" ? 1 : 0);
  }
  csv::throw_collected(problems);
  if (out.size() == 0) throw ValidationError("training data has no rows");
  return out;
}

// Reads an ID column plus the named feature columns.
inline FeatureTable read_feature_csv(std::string_view text,
                                     const std::vector<std::string>& names = screen_feature_names()) {
  const auto table = csv::parse(text);
  const auto id_col = detail::require_columns(table, {"ID"}).front();
  const auto cols = detail::require_columns(table, names);
  FeatureTable out{names, {}, {}};
  std::vector<std::string> problems;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto line = table.line_numbers[r];
    if (row.size() != table.header.size()) {
      problems.push_back("line " + std::to_string(line) + ": wrong field count");
      continue;
    }
    try {
      const double id = csv::parse_real(row[id_col], line, "ID");
      if (is_missing(id) || id != std::floor(id)) throw ValidationError("line " + std::to_string(line) + ": bad ID");
      std::vector<double> x;
      for (std::size_t f = 0; f < cols.size(); ++f) x.push_back(csv::parse_real(row[cols[f]], line, names[f]));
      out.ids.push_back(static_cast<long long>(id));
      out.features.push_back(std::move(x));
    } catch (const ValidationError& e) {
      problems.push_back(e.what());
    }
  }
  csv::throw_collected(problems);
  return out;
}

// ---------------------------------------------------------------------------
// Trees

struct TreeNode {
  int feature = -1;  // -1 on leaves
  double threshold = 0.0;  // x <= threshold goes left
  bool missing_left = true;
  int left = -1;
  int right = -1;
  std::array<std::uint32_t, 2> counts{};  // class counts of the training sample
  int label = 0;  // majority class

  bool leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

class DecisionTree {
public:
  DecisionTree() = default;
  explicit DecisionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  const std::vector<TreeNode>& nodes() const { return nodes_; }

  const TreeNode& leaf_for(std::span<const double> x) const {
    int i = 0;
    while (!nodes_[static_cast<std::size_t>(i)].leaf()) {
      const auto& n = nodes_[static_cast<std::size_t>(i)];
      const double v = x[static_cast<std::size_t>(n.feature)];
      const bool go_left = is_missing(v) ? n.missing_left : v <= n.threshold;
      i = go_left ? n.left : n.right;
    }
    return nodes_[static_cast<std::size_t>(i)];
  }

  int predict(std::span<const double> x) const { return leaf_for(x).label; }

  std::size_t depth() const { return depth_from(0); }

  bool operator==(const DecisionTree&) const = default;

private:
  std::size_t depth_from(int i) const {
    const auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.leaf()) return 0;
    return 1 + std::max(depth_from(n.left), depth_from(n.right));
  }

  std::vector<TreeNode> nodes_;
};

struct ForestParams {
  int n_trees = 500;
  int mtry = 0;           // 0 = floor(sqrt(feature count))
  int min_node_size = 1;  // nodes this small or smaller become leaves
  int max_depth = 0;      // 0 = unlimited
  bool bootstrap = true;  // false grows every tree on the full sample
  int threads = 0;        // 0 = hardware concurrency

  int resolved_mtry(std::size_t features) const {
    if (mtry > 0) return mtry;
    return std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(features)))));
  }
};

namespace detail {

// Grows one CART classification tree with Gini impurity.
//
// Rows missing the split feature follow the branch that receives more of
// the node's non-missing rows (left on ties), both while scoring candidate
// splits and at prediction time.
class TreeGrower {
public:
  TreeGrower(const LabeledDataset& data, const ForestParams& params, std::span<const std::size_t> feature_order,
             std::uint64_t seed)
      : data_(data), params_(params), order_(feature_order), rng_(seed) {}

  DecisionTree grow() {
    const std::size_t n = data_.size();
    std::vector<std::size_t> sample(n);
    if (params_.bootstrap) {
      for (auto& s : sample) s = static_cast<std::size_t>(rng_.below(n));
    } else {
      std::iota(sample.begin(), sample.end(), std::size_t{0});
    }
    nodes_.clear();
    struct Pending {
      int node;
      std::vector<std::size_t> rows;
      int depth;
    };
    std::vector<Pending> stack;
    nodes_.push_back(TreeNode{});
    stack.push_back({0, std::move(sample), 0});
    while (!stack.empty()) {
      Pending p = std::move(stack.back());
      stack.pop_back();
      TreeNode node;
      for (auto r : p.rows) ++node.counts[static_cast<std::size_t>(data_.labels[r])];
      node.label = majority(node.counts);
      const bool pure = node.counts[0] == 0 || node.counts[1] == 0;
      const bool small = p.rows.size() <= static_cast<std::size_t>(std::max(1, params_.min_node_size));
      const bool deep = params_.max_depth > 0 && p.depth >= params_.max_depth;
      std::optional<Split> split;
      if (!pure && !small && !deep) split = best_split(p.rows, node.counts);
      if (!split) {
        nodes_[static_cast<std::size_t>(p.node)] = node;
        continue;
      }
      node.feature = static_cast<int>(split->feature);
      node.threshold = split->threshold;
      node.missing_left = split->missing_left;
      std::vector<std::size_t> left, right;
      for (auto r : p.rows) {
        const double v = data_.features[r][split->feature];
        const bool go_left = is_missing(v) ? split->missing_left : v <= split->threshold;
        (go_left ? left : right).push_back(r);
      }
      node.left = static_cast<int>(nodes_.size());
      node.right = node.left + 1;
      nodes_.push_back(TreeNode{});
      nodes_.push_back(TreeNode{});
      nodes_[static_cast<std::size_t>(p.node)] = node;
      // right pushed first so the left subtree is expanded first
      stack.push_back({node.right, std::move(right), p.depth + 1});
      stack.push_back({node.left, std::move(left), p.depth + 1});
    }
    return DecisionTree(std::move(nodes_));
  }

private:
  struct Split {
    std::size_t feature;
    double threshold;
    bool missing_left;
    double score;  // sum over children of (sum of squared class counts / size)
  };

  int majority(const std::array<std::uint32_t, 2>& c) {
    if (c[0] != c[1]) return c[1] > c[0] ? 1 : 0;
    return static_cast<int>(rng_.below(2));
  }

  static double purity(double c0, double c1) {
    const double n = c0 + c1;
    return n > 0.0 ? (c0 * c0 + c1 * c1) / n : 0.0;
  }

  std::optional<Split> best_split(const std::vector<std::size_t>& rows, const std::array<std::uint32_t, 2>& counts) {
    const auto p = order_.size();
    const auto mtry = static_cast<std::size_t>(std::min<int>(params_.resolved_mtry(p), static_cast<int>(p)));
    const double parent = purity(counts[0], counts[1]);
    std::optional<Split> best;
    for (auto pos : rng_.sample(p, mtry)) {
      const std::size_t f = order_[pos];
      auto candidate = best_split_on(rows, f);
      if (candidate && candidate->score > parent + 1e-12 * static_cast<double>(rows.size()) &&
          (!best || candidate->score > best->score)) {
        best = candidate;
      }
    }
    return best;
  }

  std::optional<Split> best_split_on(const std::vector<std::size_t>& rows, std::size_t f) {
    values_.clear();
    std::array<double, 2> missing{0.0, 0.0};
    for (auto r : rows) {
      const double v = data_.features[r][f];
      if (is_missing(v)) {
        missing[static_cast<std::size_t>(data_.labels[r])] += 1.0;
      } else {
        values_.emplace_back(v, data_.labels[r]);
      }
    }
    if (values_.size() < 2) return std::nullopt;
    std::sort(values_.begin(), values_.end());
    std::array<double, 2> total{0.0, 0.0};
    for (const auto& [v, y] : values_) total[static_cast<std::size_t>(y)] += 1.0;
    std::array<double, 2> left{0.0, 0.0};
    std::optional<Split> best;
    const auto k = values_.size();
    for (std::size_t i = 0; i + 1 < k; ++i) {
      left[static_cast<std::size_t>(values_[i].second)] += 1.0;
      const double lo = values_[i].first;
      const double hi = values_[i + 1].first;
      if (!(lo < hi)) continue;
      const double n_left = static_cast<double>(i + 1);
      const double n_right = static_cast<double>(k - i - 1);
      const bool missing_left = n_left >= n_right;
      std::array<double, 2> l = left;
      std::array<double, 2> r{total[0] - left[0], total[1] - left[1]};
      auto& m_side = missing_left ? l : r;
      m_side[0] += missing[0];
      m_side[1] += missing[1];
      const double score = purity(l[0], l[1]) + purity(r[0], r[1]);
      if (!best || score > best->score) {
        double mid = lo + (hi - lo) / 2.0;
        if (!(mid < hi)) mid = lo;
        best = Split{f, mid, missing_left, score};
      }
    }
    return best;
  }

  const LabeledDataset& data_;
  const ForestParams& params_;
  std::span<const std::size_t> order_;
  Rng rng_;
  std::vector<TreeNode> nodes_;
  std::vector<std::pair<double, int>> values_;
};

// Feature indices sorted by name, so that sampling depends on the feature
// set and not on the column order.
inline std::vector<std::size_t> name_order(const std::vector<std::string>& names) {
  std::vector<std::size_t> order(names.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return names[a] < names[b]; });
  return order;
}

}  // namespace detail

// Trained ensemble; immutable after fit.
struct DecisionForest {
  ForestParams params;
  std::uint64_t seed = 0;
  std::vector<std::string> feature_names;
  std::vector<DecisionTree> trees;
  std::optional<int> single_class;  // set when training data had one class only

  std::size_t arity() const { return feature_names.size(); }
};

inline DecisionForest fit(const LabeledDataset& train, const ForestParams& params, std::uint64_t seed) {
  if (train.size() == 0) throw ValidationError("cannot fit on an empty dataset");
  if (params.n_trees < 1) throw DomainError("n_trees must be >= 1");
  const auto p = train.arity();
  if (p == 0) throw DomainError("dataset has no features");
  if (params.mtry < 0 || params.mtry > static_cast<int>(p)) throw DomainError("mtry must lie in 1..feature count");
  if (params.min_node_size < 1) throw DomainError("min_node_size must be >= 1");
  for (const auto& row : train.features)
    if (row.size() != p) throw ValidationError("feature row has the wrong arity");

  DecisionForest forest;
  forest.params = params;
  forest.params.mtry = params.resolved_mtry(p);
  forest.seed = seed;
  forest.feature_names = train.feature_names;
  if (train.count(0) == 0) forest.single_class = 1;
  if (train.count(1) == 0) forest.single_class = 0;

  Rng master(derive_seed(seed, 4));
  std::vector<std::uint64_t> tree_seeds(static_cast<std::size_t>(params.n_trees));
  for (auto& s : tree_seeds) s = master.next();
  const auto order = detail::name_order(train.feature_names);
  forest.trees.resize(tree_seeds.size());

  auto worker = [&](std::size_t first, std::size_t stride) {
    for (std::size_t t = first; t < tree_seeds.size(); t += stride)
      forest.trees[t] = detail::TreeGrower(train, forest.params, order, tree_seeds[t]).grow();
  };
  std::size_t threads = params.threads > 0 ? static_cast<std::size_t>(params.threads)
                                           : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, tree_seeds.size());
  if (threads <= 1) {
    worker(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(worker, k, threads);
  }
  return forest;
}

// Fraction of trees voting for class 1.
inline double predict_proba(const DecisionForest& forest, std::span<const double> x) {
  if (x.size() != forest.arity())
    throw ValidationError("expected " + std::to_string(forest.arity()) + " features, got " + std::to_string(x.size()));
  std::size_t votes = 0;
  for (const auto& t : forest.trees) votes += static_cast<std::size_t>(t.predict(x));
  return static_cast<double>(votes) / static_cast<double>(forest.trees.size());
}

// Reorders table columns to the forest's feature order by name.
inline std::vector<std::vector<double>> align_features(const DecisionForest& forest,
                                                       const std::vector<std::string>& names,
                                                       const std::vector<std::vector<double>>& rows) {
  std::vector<std::size_t> map;
  for (const auto& want : forest.feature_names) {
    auto it = std::find(names.begin(), names.end(), want);
    if (it == names.end()) throw ValidationError("input lacks feature column " + want);
    map.push_back(static_cast<std::size_t>(it - names.begin()));
  }
  std::vector<std::vector<double>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.size() != names.size()) throw ValidationError("feature row has the wrong arity");
    std::vector<double> x;
    for (auto m : map) x.push_back(r[m]);
    out.push_back(std::move(x));
  }
  return out;
}

struct ClassificationResult {
  std::vector<double> probabilities;
  std::vector<int> labels;  // 1 = suspicious
  double threshold = 0.5;

  std::size_t suspicious_count() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  }
};

inline ClassificationResult classify(const DecisionForest& forest, const std::vector<std::vector<double>>& rows,
                                     double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw DomainError("threshold must lie in [0, 1]");
  ClassificationResult out;
  out.threshold = threshold;
  for (const auto& r : rows) {
    const double p = predict_proba(forest, r);
    out.probabilities.push_back(p);
    out.labels.push_back(p >= threshold ? 1 : 0);
  }
  return out;
}

inline double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size())
    throw ValidationError("length mismatch: " + std::to_string(predicted.size()) + " predictions vs " +
                          std::to_string(truth.size()) + " labels");
  if (predicted.empty()) throw ValidationError("accuracy of an empty set is undefined");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

struct ConfusionMatrix {
  std::size_t true_positive = 0, false_positive = 0, true_negative = 0, false_negative = 0;
};

inline ConfusionMatrix confusion(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw ValidationError("length mismatch");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == 1) {
      ++(truth[i] == 1 ? m.true_positive : m.false_positive);
    } else {
      ++(truth[i] == 1 ? m.false_negative : m.true_negative);
    }
  }
  return m;
}

struct TrainTestSplit {
  LabeledDataset train;
  LabeledDataset test;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
};

// floor(fraction * N) rows drawn without replacement for training, the rest
// (in original order) for testing.
inline TrainTestSplit train_test_split(const LabeledDataset& data, double train_fraction, std::uint64_t seed) {
  if (data.size() == 0) throw ValidationError("cannot split an empty dataset");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw DomainError("train fraction must lie in (0, 1)");
  const auto n = data.size();
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  Rng rng(derive_seed(seed, 5));
  TrainTestSplit s;
  s.train_rows = rng.sample(n, n_train);
  std::vector<bool> in_train(n, false);
  for (auto r : s.train_rows) in_train[r] = true;
  for (std::size_t r = 0; r < n; ++r)
    if (!in_train[r]) s.test_rows.push_back(r);
  s.train = data.subset(s.train_rows);
  s.test = data.subset(s.test_rows);
  return s;
}

// Split, fit on the training part, classify the held-out part.
inline double holdout_accuracy(const LabeledDataset& data, const ForestParams& params, double train_fraction,
                               double threshold, std::uint64_t seed) {
  const auto split = train_test_split(data, train_fraction, seed);
  const auto forest = fit(split.train, params, seed);
  const auto result = classify(forest, split.test.features, threshold);
  return accuracy(result.labels, split.test.labels);
}

// ---------------------------------------------------------------------------
// Portable text format
//
//   cartelgame-forest 1
//   params <n_trees> <mtry> <min_node_size> <max_depth> <bootstrap>
//   seed <seed>
//   single_class <-1|0|1>
//   features <p> <name>...
//   tree <node count>
//   <feature> <threshold> <missing_left> <left> <right> <count0> <count1> <label>
//   ...
//   end

inline constexpr int kForestFormatVersion = 1;

inline std::string to_text(const DecisionForest& f) {
  std::ostringstream os;
  os << "cartelgame-forest " << kForestFormatVersion << '\n';
  os << "params " << f.params.n_trees << ' ' << f.params.mtry << ' ' << f.params.min_node_size << ' '
     << f.params.max_depth << ' ' << (f.params.bootstrap ? 1 : 0) << '\n';
  os << "seed " << f.seed << '\n';
  os << "single_class " << (f.single_class ? *f.single_class : -1) << '\n';
  os << "features " << f.feature_names.size();
  for (const auto& n : f.feature_names) os << ' ' << n;
  os << '\n';
  for (const auto& t : f.trees) {
    os << "tree " << t.nodes().size() << '\n';
    for (const auto& n : t.nodes()) {
      os << n.feature << ' ' << csv::format_real(n.threshold) << ' ' << (n.missing_left ? 1 : 0) << ' ' << n.left
         << ' ' << n.right << ' ' << n.counts[0] << ' ' << n.counts[1] << ' ' << n.label << '\n';
    }
  }
  os << "end\n";
  return os.str();
}

inline DecisionForest from_text(std::string_view text) {
  std::istringstream is{std::string(text)};
  auto fail = [](const std::string& why) -> DecisionForest { throw ValidationError("bad forest file: " + why); };
  std::string tag;
  int version = 0;
  if (!(is >> tag >> version) || tag != "cartelgame-forest") return fail("missing header");
  if (version != kForestFormatVersion) return fail("unsupported version " + std::to_string(version));
  DecisionForest f;
  int bootstrap = 1;
  int single = -1;
  std::size_t p = 0;
  if (!(is >> tag) || tag != "params") return fail("expected params");
  is >> f.params.n_trees >> f.params.mtry >> f.params.min_node_size >> f.params.max_depth >> bootstrap;
  f.params.bootstrap = bootstrap != 0;
  if (!(is >> tag >> f.seed) || tag != "seed") return fail("expected seed");
  if (!(is >> tag >> single) || tag != "single_class") return fail("expected single_class");
  if (single >= 0) f.single_class = single;
  if (!(is >> tag >> p) || tag != "features") return fail("expected features");
  f.feature_names.resize(p);
  for (auto& n : f.feature_names) is >> n;
  while (is >> tag && tag == "tree") {
    std::size_t count = 0;
    is >> count;
    std::vector<TreeNode> nodes(count);
    for (auto& n : nodes) {
      std::string threshold;
      int missing_left = 0;
      if (!(is >> n.feature >> threshold >> missing_left >> n.left >> n.right >> n.counts[0] >> n.counts[1] >> n.label))
        return fail("truncated tree");
      n.threshold = csv::parse_real(threshold, 0, "threshold");
      n.missing_left = missing_left != 0;
      const auto limit = static_cast<int>(count);
      if (!n.leaf() && (n.feature >= static_cast<int>(p) || n.left <= 0 || n.right <= 0 || n.left >= limit ||
                        n.right >= limit))
        return fail("node out of range");
    }
    if (nodes.empty()) return fail("empty tree");
    f.trees.emplace_back(std::move(nodes));
  }
  if (tag != "end") return fail("missing end marker");
  if (f.trees.size() != static_cast<std::size_t>(f.params.n_trees)) return fail("tree count mismatch");
  return f;
}

}  // namespace cartelgame
