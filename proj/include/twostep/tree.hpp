#pragma once

#include "twostep/random.hpp"
#include "twostep/types.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <span>
#include <vector>

namespace twostep {

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // rows with x[feature] <= threshold go left
    int left = -1;
    int right = -1;
    double value = 0.0;   // weighted positive fraction of the training rows reaching this node
    double weight = 0.0;  // total training weight reaching this node
};

struct TreeParams {
    int max_depth = 8;
    double min_leaf_weight = 1.0;
    int mtry = 0;  // features examined per split; 0 or >= p means all, in column order
};

// Weighted CART classification tree with Gini splits. Integer weights double
// as bootstrap multiplicities.
class DecisionTree {
public:
    static DecisionTree grow(const Eigen::MatrixXd& x, std::span<const int> y, std::span<const double> w,
                             const TreeParams& params, Rng* rng);

    double predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
    int depth() const;
    const std::vector<TreeNode>& nodes() const { return nodes_; }

    nlohmann::json to_json() const;
    static DecisionTree from_json(const nlohmann::json& j);

    friend bool operator==(const DecisionTree& a, const DecisionTree& b);

private:
    std::vector<TreeNode> nodes_;
};

bool operator==(const TreeNode& a, const TreeNode& b);

enum class ForestVote {
    Hard,  // score = fraction of trees whose leaf value is >= 0.5
    Soft,  // score = mean leaf value
};

struct ForestParams {
    int n_trees = 100;
    TreeParams tree;
    bool bootstrap = true;
    ForestVote vote = ForestVote::Hard;
};

class RandomForest {
public:
    static RandomForest fit(const Eigen::MatrixXd& x, std::span<const int> y, const ForestParams& params,
                            std::uint64_t seed);

    double predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
    const std::vector<DecisionTree>& trees() const { return trees_; }
    ForestVote vote() const { return vote_; }

    nlohmann::json to_json() const;
    static RandomForest from_json(const nlohmann::json& j);

private:
    std::vector<DecisionTree> trees_;
    ForestVote vote_ = ForestVote::Hard;
};

}  // namespace twostep
