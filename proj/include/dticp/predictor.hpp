#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"

namespace dticp {

// Dense row-major matrix of model inputs.
class FeatureMatrix {
public:
    FeatureMatrix() = default;
    FeatureMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
    FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows * cols) throw ValidationError("matrix data size does not match shape");
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    const std::vector<double>& data() const noexcept { return data_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Concatenated [drug features | protein features] for each requested row.
inline FeatureMatrix build_pair_features(const InteractionTable& table, std::span<const std::size_t> rows,
                                         const DrugFeatures& drugs, const ProteinFeatures& proteins) {
    const std::size_t dd = drugs.dimension(), dp = proteins.dimension();
    FeatureMatrix x(rows.size(), dd + dp);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& rec = table[rows[i]];
        const auto& u = drugs.at(rec.drug);
        const auto& v = proteins.at(rec.protein);
        for (std::size_t j = 0; j < dd; ++j) x(i, j) = u[j];
        for (std::size_t j = 0; j < dp; ++j) x(i, dd + j) = v[j];
    }
    return x;
}

// ============================================================================
// Model types
// ============================================================================
enum class GbmLoss { SquaredError };

// Defaults follow the reference configuration: squared error, 500 stages,
// learning rate 0.05, depth 6. min_samples_leaf = 1 is an approximation of
// the reference implementation's unstated default.
struct GbmConfig {
    std::size_t n_stages = 500;
    double learning_rate = 0.05;
    std::size_t max_depth = 6;
    std::size_t min_samples_leaf = 1;
    GbmLoss loss = GbmLoss::SquaredError;

    void validate() const {
        if (n_stages == 0) throw ConfigError("n_stages must be positive");
        if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ConfigError("learning_rate must be in (0, 1]");
        if (max_depth == 0) throw ConfigError("max_depth must be positive");
        if (min_samples_leaf == 0) throw ConfigError("min_samples_leaf must be positive");
    }
};

// feature < 0 marks a leaf. Samples with x[feature] <= threshold go left.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;

    bool is_leaf() const noexcept { return feature < 0; }
};

struct RegressionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    double evaluate(std::span<const double> x) const {
        std::size_t i = 0;
        while (!nodes[i].is_leaf()) {
            const auto& n = nodes[i];
            i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
        }
        return nodes[i].value;
    }

    std::size_t depth() const {
        std::size_t best = 0;
        std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
        while (!stack.empty()) {
            auto [i, d] = stack.back();
            stack.pop_back();
            best = std::max(best, d);
            if (!nodes[i].is_leaf()) {
                stack.emplace_back(static_cast<std::size_t>(nodes[i].left), d + 1);
                stack.emplace_back(static_cast<std::size_t>(nodes[i].right), d + 1);
            }
        }
        return best;
    }
};

struct GbmModel {
    double init_value = 0.0;
    std::vector<RegressionTree> trees;
    GbmConfig config;
    std::size_t n_features = 0;

    // F_0 = init; F_t = F_{t-1} + lr * tree_t(x). Same accumulation as training.
    double predict_one(std::span<const double> x) const {
        double f = init_value;
        for (const auto& t : trees) f += config.learning_rate * t.evaluate(x);
        return f;
    }
};

namespace detail {

// Mean shifted by the first element: exact for constant inputs.
inline double shifted_mean(std::span<const double> v) {
    if (v.empty()) return 0.0;
    const double ref = v[0];
    double acc = 0.0;
    for (double x : v) acc += x - ref;
    return ref + acc / static_cast<double>(v.size());
}

// Midpoint strictly below `hi` so that `lo` goes left and `hi` goes right.
inline double split_midpoint(double lo, double hi) {
    const double mid = lo + (hi - lo) / 2.0;
    return mid < hi ? mid : lo;
}

struct SplitCandidate {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
};

// Level-wise exact greedy tree growth over presorted feature orders.
class TreeGrower {
public:
    TreeGrower(const FeatureMatrix& x, const std::vector<std::vector<std::uint32_t>>& sorted, const GbmConfig& cfg)
        : x_(x), sorted_(sorted), cfg_(cfg) {}

    RegressionTree grow(std::span<const double> residual) {
        const std::size_t n = x_.rows();
        RegressionTree tree;
        tree.nodes.push_back({});
        node_of_.assign(n, 0);

        std::vector<std::size_t> frontier{0};
        for (std::size_t depth = 0; depth < cfg_.max_depth && !frontier.empty(); ++depth) {
            const std::size_t n_nodes = tree.nodes.size();
            std::vector<double> sum(n_nodes, 0.0);
            std::vector<std::size_t> count(n_nodes, 0);
            std::vector<char> active(n_nodes, 0);
            for (auto id : frontier) active[id] = 1;
            for (std::size_t r = 0; r < n; ++r) {
                sum[node_of_[r]] += residual[r];
                ++count[node_of_[r]];
            }
            for (auto id : frontier)
                if (count[id] < 2 * cfg_.min_samples_leaf) active[id] = 0;

            std::vector<SplitCandidate> best(n_nodes);
            std::vector<double> left_sum(n_nodes);
            std::vector<std::size_t> left_count(n_nodes);
            std::vector<double> last(n_nodes);
            for (std::size_t f = 0; f < x_.cols(); ++f) {
                std::fill(left_sum.begin(), left_sum.end(), 0.0);
                std::fill(left_count.begin(), left_count.end(), 0);
                for (auto r : sorted_[f]) {
                    const std::size_t nd = node_of_[r];
                    if (!active[nd]) continue;
                    const double v = x_(r, f);
                    const std::size_t nl = left_count[nd];
                    const std::size_t nr = count[nd] - nl;
                    if (nl >= cfg_.min_samples_leaf && nr >= cfg_.min_samples_leaf && v > last[nd]) {
                        const double sl = left_sum[nd], s = sum[nd];
                        const double gain = sl * sl / static_cast<double>(nl) +
                                            (s - sl) * (s - sl) / static_cast<double>(nr) -
                                            s * s / static_cast<double>(count[nd]);
                        // Strict: the first (lowest feature, lowest threshold) wins ties.
                        if (gain > best[nd].gain) {
                            best[nd] = {gain, static_cast<int>(f), split_midpoint(last[nd], v)};
                        }
                    }
                    left_sum[nd] += residual[r];
                    ++left_count[nd];
                    last[nd] = v;
                }
            }

            std::vector<std::size_t> next;
            std::vector<int> left_child(n_nodes, -1);
            for (auto id : frontier) {
                if (!active[id] || best[id].feature < 0) continue;
                auto& node = tree.nodes[id];
                node.feature = best[id].feature;
                node.threshold = best[id].threshold;
                node.left = static_cast<int>(tree.nodes.size());
                node.right = node.left + 1;
                left_child[id] = node.left;
                tree.nodes.push_back({});
                tree.nodes.push_back({});
                next.push_back(static_cast<std::size_t>(node.left));
                next.push_back(static_cast<std::size_t>(node.right));
            }
            for (std::size_t r = 0; r < n; ++r) {
                const std::size_t nd = node_of_[r];
                if (nd < n_nodes && left_child[nd] >= 0) {
                    const auto& node = tree.nodes[nd];
                    node_of_[r] = static_cast<std::size_t>(
                        x_(r, static_cast<std::size_t>(node.feature)) <= node.threshold ? node.left : node.right);
                }
            }
            frontier = std::move(next);
        }

        std::vector<std::vector<double>> members(tree.nodes.size());
        for (std::size_t r = 0; r < n; ++r) members[node_of_[r]].push_back(residual[r]);
        for (std::size_t i = 0; i < tree.nodes.size(); ++i)
            if (tree.nodes[i].is_leaf()) tree.nodes[i].value = shifted_mean(members[i]);
        return tree;
    }

    std::span<const std::size_t> leaf_of_rows() const { return node_of_; }

private:
    const FeatureMatrix& x_;
    const std::vector<std::vector<std::uint32_t>>& sorted_;
    const GbmConfig& cfg_;
    std::vector<std::size_t> node_of_;
};

} // namespace detail

// ============================================================================
// Training and prediction
// ============================================================================
// When `train_mse` is given it receives the training MSE after init (index 0)
// and after every stage.
inline GbmModel fit_gbm(const FeatureMatrix& x, std::span<const double> labels, const GbmConfig& config,
                        std::vector<double>* train_mse = nullptr) {
    config.validate();
    const std::size_t n = x.rows();
    if (n == 0) throw ValidationError("fit_gbm needs at least one row");
    if (labels.size() != n) throw ValidationError("label count does not match feature rows");
    for (double v : x.data())
        if (!std::isfinite(v)) throw ValidationError("non-finite feature value");
    for (double v : labels)
        if (!std::isfinite(v)) throw ValidationError("non-finite label");

    std::vector<std::vector<std::uint32_t>> sorted(x.cols());
    for (std::size_t f = 0; f < x.cols(); ++f) {
        auto& order = sorted[f];
        order.resize(n);
        std::iota(order.begin(), order.end(), 0u);
        std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return x(a, f) < x(b, f); });
    }

    GbmModel model;
    model.config = config;
    model.n_features = x.cols();
    model.init_value = detail::shifted_mean(labels);

    std::vector<double> f(n, model.init_value), residual(n);
    auto mse = [&] {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += (labels[i] - f[i]) * (labels[i] - f[i]);
        return acc / static_cast<double>(n);
    };
    if (train_mse) train_mse->assign(1, mse());

    detail::TreeGrower grower(x, sorted, config);
    model.trees.reserve(config.n_stages);
    for (std::size_t t = 0; t < config.n_stages; ++t) {
        for (std::size_t i = 0; i < n; ++i) residual[i] = labels[i] - f[i];
        auto tree = grower.grow(residual);
        const auto leaf = grower.leaf_of_rows();
        for (std::size_t i = 0; i < n; ++i) f[i] += config.learning_rate * tree.nodes[leaf[i]].value;
        model.trees.push_back(std::move(tree));
        if (train_mse) train_mse->push_back(mse());
    }
    return model;
}

inline std::vector<double> predict(const GbmModel& model, const FeatureMatrix& x) {
    if (x.cols() != model.n_features) {
        throw ValidationError("feature dimension " + std::to_string(x.cols()) + " does not match model dimension " +
                              std::to_string(model.n_features));
    }
    std::vector<double> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) out[i] = model.predict_one(x.row(i));
    return out;
}

// ============================================================================
// External predictions: drug_id,protein_id,prediction
// ============================================================================
using PredictionMap = std::map<std::pair<std::string, std::string>, double>;

inline PredictionMap read_predictions(std::istream& in, std::string_view source = "<stream>") {
    std::string line;
    if (!read_csv_line(in, line, true)) throw ValidationError(std::string(source) + ": missing header");
    if (line != "drug_id,protein_id,prediction")
        throw ValidationError(std::string(source) + ": header must be drug_id,protein_id,prediction");
    PredictionMap out;
    std::size_t lineno = 1;
    while (read_csv_line(in, line, false)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        const std::string ctx = std::string(source) + ":" + std::to_string(lineno);
        if (f.size() != 3) throw ValidationError(ctx + ": expected 3 fields");
        const double v = parse_double(f[2], ctx);
        if (!std::isfinite(v)) throw ValidationError(ctx + ": non-finite prediction");
        if (!out.emplace(std::make_pair(f[0], f[1]), v).second)
            throw ValidationError(ctx + ": duplicate pair (" + f[0] + ", " + f[1] + ")");
    }
    return out;
}

inline void write_predictions(const InteractionTable& table, std::span<const std::size_t> rows, std::ostream& out) {
    out << "drug_id,protein_id,prediction\n";
    for (auto r : rows) {
        const auto& rec = table[r];
        if (!rec.prediction) continue;
        out << rec.drug.token << ',' << rec.protein.token << ',' << format_double(*rec.prediction) << '\n';
    }
}

// Fills predictions for `rows` (all rows when empty). Refuses to replace an
// existing prediction unless `overwrite` is set.
inline InteractionTable attach_external_predictions(const InteractionTable& table, const PredictionMap& preds,
                                                    bool overwrite = false,
                                                    std::span<const std::size_t> rows = {}) {
    std::vector<std::size_t> all;
    if (rows.empty()) {
        all.resize(table.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        rows = all;
    }
    std::vector<std::optional<double>> col(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) col[i] = table[i].prediction;

    std::string missing;
    std::size_t n_missing = 0;
    for (auto r : rows) {
        const auto& rec = table[r];
        if (rec.prediction && !overwrite) {
            throw ValidationError("row " + std::to_string(r) + " (" + rec.drug.token + ", " + rec.protein.token +
                                  ") already has a prediction; refusing to overwrite without the overwrite flag");
        }
        auto it = preds.find({rec.drug.token, rec.protein.token});
        if (it == preds.end()) {
            if (n_missing < 10) missing += " (" + rec.drug.token + ", " + rec.protein.token + ")";
            ++n_missing;
            continue;
        }
        col[r] = it->second;
    }
    if (n_missing > 0) {
        throw ValidationError("predictions missing for " + std::to_string(n_missing) + " pair(s); first:" + missing);
    }
    return table.with_predictions(col);
}

inline InteractionTable attach_external_predictions(const InteractionTable& table, const std::string& path,
                                                    bool overwrite = false,
                                                    std::span<const std::size_t> rows = {}) {
    auto in = open_input(path);
    return attach_external_predictions(table, read_predictions(in, path), overwrite, rows);
}

} // namespace dticp
