#include "twostep/tree.hpp"

#include "twostep/error.hpp"

#include <algorithm>
#include <numeric>

namespace twostep {

namespace {

struct Grower {
    const Eigen::MatrixXd& x;
    std::span<const int> y;
    std::span<const double> w;
    const TreeParams& params;
    Rng* rng;
    std::vector<TreeNode>& nodes;
    std::vector<std::pair<double, Index>> scratch;
    std::vector<int> features;

    int build(std::vector<Index>& rows, int depth) {
        double wt = 0.0, wpos = 0.0;
        for (Index r : rows) {
            wt += w[r];
            if (y[r] == 1) wpos += w[r];
        }
        const int id = static_cast<int>(nodes.size());
        nodes.push_back({});
        nodes[static_cast<std::size_t>(id)].value = wt > 0 ? wpos / wt : 0.0;
        nodes[static_cast<std::size_t>(id)].weight = wt;

        const bool pure = wpos <= 0.0 || wpos >= wt;
        if (depth >= params.max_depth || pure || wt < 2.0 * params.min_leaf_weight) return id;

        const int p = static_cast<int>(x.cols());
        std::iota(features.begin(), features.end(), 0);
        int m = p;
        if (params.mtry > 0 && params.mtry < p) {
            m = params.mtry;
            for (int i = 0; i < m; ++i) {
                const auto j = i + static_cast<int>(rng->below(static_cast<std::uint64_t>(p - i)));
                std::swap(features[static_cast<std::size_t>(i)], features[static_cast<std::size_t>(j)]);
            }
            std::sort(features.begin(), features.begin() + m);
        }

        const double parent_impurity = 2.0 * wpos * (wt - wpos) / wt;
        double best_impurity = parent_impurity - 1e-12;
        int best_feature = -1;
        double best_threshold = 0.0;
        for (int fi = 0; fi < m; ++fi) {
            const int f = features[static_cast<std::size_t>(fi)];
            scratch.clear();
            for (Index r : rows) scratch.emplace_back(x(static_cast<Eigen::Index>(r), f), r);
            std::sort(scratch.begin(), scratch.end());
            double lw = 0.0, lpos = 0.0;
            for (std::size_t i = 0; i + 1 < scratch.size(); ++i) {
                const Index r = scratch[i].second;
                lw += w[r];
                if (y[r] == 1) lpos += w[r];
                if (scratch[i].first == scratch[i + 1].first) continue;
                const double rw = wt - lw;
                if (lw < params.min_leaf_weight || rw < params.min_leaf_weight) continue;
                const double rpos = wpos - lpos;
                const double impurity = 2.0 * lpos * (lw - lpos) / lw + 2.0 * rpos * (rw - rpos) / rw;
                if (impurity < best_impurity) {
                    best_impurity = impurity;
                    best_feature = f;
                    best_threshold = 0.5 * (scratch[i].first + scratch[i + 1].first);
                }
            }
        }
        if (best_feature < 0) return id;

        std::vector<Index> left, right;
        for (Index r : rows) {
            (x(static_cast<Eigen::Index>(r), best_feature) <= best_threshold ? left : right).push_back(r);
        }
        rows.clear();
        rows.shrink_to_fit();
        const int l = build(left, depth + 1);
        const int rgt = build(right, depth + 1);
        auto& node = nodes[static_cast<std::size_t>(id)];
        node.feature = best_feature;
        node.threshold = best_threshold;
        node.left = l;
        node.right = rgt;
        return id;
    }
};

}  // namespace

DecisionTree DecisionTree::grow(const Eigen::MatrixXd& x, std::span<const int> y, std::span<const double> w,
                                const TreeParams& params, Rng* rng) {
    if (static_cast<std::size_t>(x.rows()) != y.size() || y.size() != w.size()) {
        fail(ErrorKind::LengthMismatch, "tree inputs differ in length");
    }
    if (params.mtry > 0 && params.mtry < x.cols() && rng == nullptr) {
        fail(ErrorKind::InvalidConfig, "feature subsampling requires a random stream");
    }
    DecisionTree tree;
    std::vector<Index> rows;
    for (Index i = 0; i < y.size(); ++i) {
        if (w[i] > 0) rows.push_back(i);
    }
    Grower g{x, y, w, params, rng, tree.nodes_, {}, std::vector<int>(static_cast<std::size_t>(x.cols()))};
    g.scratch.reserve(rows.size());
    g.build(rows, 0);
    return tree;
}

double DecisionTree::predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    int i = 0;
    for (;;) {
        const auto& n = nodes_[static_cast<std::size_t>(i)];
        if (n.feature < 0) return n.value;
        i = row[n.feature] <= n.threshold ? n.left : n.right;
    }
}

int DecisionTree::depth() const {
    std::vector<int> d(nodes_.size(), 0);
    int best = 0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto& n = nodes_[i];
        if (n.feature >= 0) {
            d[static_cast<std::size_t>(n.left)] = d[i] + 1;
            d[static_cast<std::size_t>(n.right)] = d[i] + 1;
        }
        best = std::max(best, d[i]);
    }
    return best;
}

bool operator==(const TreeNode& a, const TreeNode& b) {
    return a.feature == b.feature && a.threshold == b.threshold && a.left == b.left && a.right == b.right &&
           a.value == b.value && a.weight == b.weight;
}

bool operator==(const DecisionTree& a, const DecisionTree& b) { return a.nodes_ == b.nodes_; }

nlohmann::json DecisionTree::to_json() const {
    std::vector<int> feature, left, right;
    std::vector<double> threshold, value, weight;
    for (const auto& n : nodes_) {
        feature.push_back(n.feature);
        left.push_back(n.left);
        right.push_back(n.right);
        threshold.push_back(n.threshold);
        value.push_back(n.value);
        weight.push_back(n.weight);
    }
    return {{"feature", feature}, {"threshold", threshold}, {"left", left},
            {"right", right},     {"value", value},         {"weight", weight}};
}

DecisionTree DecisionTree::from_json(const nlohmann::json& j) {
    const auto feature = j.at("feature").get<std::vector<int>>();
    const auto left = j.at("left").get<std::vector<int>>();
    const auto right = j.at("right").get<std::vector<int>>();
    const auto threshold = j.at("threshold").get<std::vector<double>>();
    const auto value = j.at("value").get<std::vector<double>>();
    const auto weight = j.at("weight").get<std::vector<double>>();
    const auto n = feature.size();
    if (left.size() != n || right.size() != n || threshold.size() != n || value.size() != n || weight.size() != n) {
        fail(ErrorKind::CorruptManifest, "tree arrays differ in length");
    }
    DecisionTree t;
    for (std::size_t i = 0; i < n; ++i) {
        if (feature[i] >= 0 && (left[i] <= static_cast<int>(i) || right[i] <= static_cast<int>(i) ||
                                left[i] >= static_cast<int>(n) || right[i] >= static_cast<int>(n))) {
            fail(ErrorKind::CorruptManifest, "tree child index out of range");
        }
        t.nodes_.push_back({feature[i], threshold[i], left[i], right[i], value[i], weight[i]});
    }
    if (t.nodes_.empty()) fail(ErrorKind::CorruptManifest, "empty tree");
    return t;
}

RandomForest RandomForest::fit(const Eigen::MatrixXd& x, std::span<const int> y, const ForestParams& params,
                               std::uint64_t seed) {
    RandomForest f;
    f.vote_ = params.vote;
    Rng rng(seed);
    const auto n = y.size();
    std::vector<double> w(n);
    f.trees_.reserve(static_cast<std::size_t>(params.n_trees));
    for (int t = 0; t < params.n_trees; ++t) {
        if (params.bootstrap) {
            std::fill(w.begin(), w.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) w[rng.below(n)] += 1.0;
        } else {
            std::fill(w.begin(), w.end(), 1.0);
        }
        f.trees_.push_back(DecisionTree::grow(x, y, w, params.tree, &rng));
    }
    return f;
}

double RandomForest::predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    double acc = 0.0;
    for (const auto& t : trees_) {
        const double v = t.predict(row);
        acc += vote_ == ForestVote::Hard ? (v >= 0.5 ? 1.0 : 0.0) : v;
    }
    return acc / static_cast<double>(trees_.size());
}

nlohmann::json RandomForest::to_json() const {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : trees_) trees.push_back(t.to_json());
    return {{"vote", vote_ == ForestVote::Hard ? "hard" : "soft"}, {"trees", trees}};
}

RandomForest RandomForest::from_json(const nlohmann::json& j) {
    RandomForest f;
    f.vote_ = j.at("vote").get<std::string>() == "hard" ? ForestVote::Hard : ForestVote::Soft;
    for (const auto& t : j.at("trees")) f.trees_.push_back(DecisionTree::from_json(t));
    if (f.trees_.empty()) fail(ErrorKind::CorruptManifest, "forest without trees");
    return f;
}

}  // namespace twostep
