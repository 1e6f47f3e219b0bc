#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "serverlens/learners.hpp"

namespace serverlens {

double RegressionTree::predict(std::span<const double> row) const noexcept {
    int n = 0;
    while (nodes[n].feature >= 0) {
        const TreeNode& t = nodes[n];
        n = row[t.feature] < t.threshold ? t.left : t.right;
    }
    return nodes[n].weight;
}

int RegressionTree::depth() const {
    if (nodes.empty()) return 0;
    std::vector<int> d(nodes.size(), 0);
    int deepest = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto& t = nodes[i];
        if (t.feature >= 0) {
            d[t.left] = d[i] + 1;
            d[t.right] = d[i] + 1;
            deepest = std::max(deepest, d[i] + 1);
        }
    }
    return deepest;
}

bool RegressionTree::uses_feature(std::size_t feature) const {
    return std::any_of(nodes.begin(), nodes.end(),
                       [&](const TreeNode& t) { return t.feature == static_cast<int>(feature); });
}

ColumnRanks ColumnRanks::build(const Matrix& x) {
    ColumnRanks r;
    r.rows = x.rows();
    r.cols = x.cols();
    r.values.resize(r.cols);
    r.rank.resize(r.rows * r.cols);
    std::vector<double> col;
    for (std::size_t j = 0; j < r.cols; ++j) {
        col = x.column(j);
        for (double v : col) {
            if (!std::isfinite(v)) {
                throw ArgumentError("tree learners require complete, finite rows");
            }
        }
        auto& vals = r.values[j];
        vals = col;
        std::sort(vals.begin(), vals.end());
        vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
        for (std::size_t i = 0; i < r.rows; ++i) {
            r.rank[i * r.cols + j] =
                static_cast<std::uint32_t>(std::lower_bound(vals.begin(), vals.end(), col[i]) - vals.begin());
        }
    }
    return r;
}

namespace {

double soft_threshold(double g, double alpha) noexcept {
    if (g > alpha) return g - alpha;
    if (g < -alpha) return g + alpha;
    return 0.0;
}

double split_score(double g, double h, const TreeParams& p) noexcept {
    const double t = soft_threshold(g, p.alpha);
    return t * t / (h + p.lambda);
}

// max(1, round(ratio * n)); `clamped` reports the degenerate case.
std::size_t sample_count(double ratio, std::size_t n, bool* clamped = nullptr) {
    const auto k = static_cast<std::size_t>(std::llround(std::clamp(ratio, 0.0, 1.0) * static_cast<double>(n)));
    if (k == 0 && clamped != nullptr) *clamped = true;
    return std::max<std::size_t>(1, std::min(k, n));
}

// k distinct elements of `from`, returned sorted.
std::vector<std::size_t> sample_subset(std::span<const std::size_t> from, std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> pool(from.begin(), from.end());
    if (k >= pool.size()) return pool;
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

struct PendingNode {
    int id = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
    double g = 0.0;
    double h = 0.0;
    std::vector<double> hist;  // interleaved (G, H) per bin; empty when not needed
};

struct Split {
    double gain = 0.0;
    std::size_t feature_slot = 0;
    std::uint32_t bin = 0;  // last bin going left
};

class TreeBuilder {
public:
    TreeBuilder(const ColumnRanks& ranks, std::span<const double> grad, std::span<const std::size_t> features,
                const TreeParams& params)
        : ranks_(ranks), grad_(grad), features_(features.begin(), features.end()), params_(params) {
        offset_.resize(features_.size() + 1, 0);
        for (std::size_t k = 0; k < features_.size(); ++k) {
            offset_[k + 1] = offset_[k] + ranks_.values[features_[k]].size();
        }
    }

    std::size_t total_bins() const { return offset_.back(); }

    void fill_histogram(PendingNode& node, std::span<const std::size_t> rows) const {
        node.hist.assign(2 * total_bins(), 0.0);
        const std::size_t d = ranks_.cols;
        for (std::size_t p = node.begin; p < node.end; ++p) {
            const std::size_t i = rows[p];
            const double g = grad_[i];
            const std::uint32_t* rk = ranks_.rank.data() + i * d;
            for (std::size_t k = 0; k < features_.size(); ++k) {
                double* cell = node.hist.data() + 2 * (offset_[k] + rk[features_[k]]);
                cell[0] += g;
                cell[1] += 1.0;
            }
        }
    }

    Split best_split(const PendingNode& node, std::span<const std::size_t> slots) const {
        const double parent = split_score(node.g, node.h, params_);
        Split best;
        best.gain = 1e-12 * std::max(1.0, parent);
        bool found = false;
        for (std::size_t k : slots) {
            const double* h = node.hist.data() + 2 * offset_[k];
            const std::size_t nb = offset_[k + 1] - offset_[k];
            double gl = 0.0;
            double hl = 0.0;
            for (std::size_t b = 0; b + 1 < nb; ++b) {
                gl += h[2 * b];
                hl += h[2 * b + 1];
                if (hl == 0.0 || h[2 * b + 1] == 0.0) continue;
                const double hr = node.h - hl;
                if (hr <= 0.0) break;
                const double gain =
                    0.5 * (split_score(gl, hl, params_) + split_score(node.g - gl, hr, params_) - parent);
                if (gain > best.gain) {
                    best.gain = gain;
                    best.feature_slot = k;
                    best.bin = static_cast<std::uint32_t>(b);
                    found = true;
                }
            }
        }
        if (!found) best.gain = 0.0;
        return best;
    }

    std::size_t feature_of(std::size_t slot) const { return features_[slot]; }

    double threshold(std::size_t slot, std::uint32_t bin) const {
        const auto& v = ranks_.values[features_[slot]];
        const double lo = v[bin];
        const double hi = v[bin + 1];
        const double mid = lo + (hi - lo) / 2.0;
        return mid > lo ? mid : hi;
    }

    void sums(std::span<const std::size_t> rows, PendingNode& node) const {
        double g = 0.0;
        for (std::size_t p = node.begin; p < node.end; ++p) g += grad_[rows[p]];
        node.g = g;
        node.h = static_cast<double>(node.end - node.begin);
    }

    double leaf_weight(const PendingNode& node) const {
        return -soft_threshold(node.g, params_.alpha) / (node.h + params_.lambda);
    }

    std::uint32_t rank(std::size_t row, std::size_t slot) const {
        return ranks_.rank[row * ranks_.cols + features_[slot]];
    }

private:
    const ColumnRanks& ranks_;
    std::span<const double> grad_;
    std::vector<std::size_t> features_;
    TreeParams params_;
    std::vector<std::size_t> offset_;
};

}  // namespace

RegressionTree build_tree(const ColumnRanks& ranks, std::span<const double> gradients,
                          std::span<const std::size_t> rows, std::span<const std::size_t> features,
                          const TreeParams& params, std::mt19937_64& rng, double leaf_offset) {
    if (rows.empty()) {
        throw FitError("build_tree: no rows");
    }
    if (features.empty()) {
        throw FitError("build_tree: no features");
    }
    if (params.max_depth < 0) {
        throw ArgumentError("build_tree: negative max_depth");
    }
    TreeBuilder builder(ranks, gradients, features, params);
    std::vector<std::size_t> buf(rows.begin(), rows.end());
    std::vector<std::size_t> scratch(buf.size());

    RegressionTree tree;
    tree.nodes.push_back({});
    std::vector<PendingNode> level(1);
    level[0].id = 0;
    level[0].begin = 0;
    level[0].end = buf.size();
    builder.sums(buf, level[0]);

    std::vector<std::size_t> all_slots(features.size());
    std::iota(all_slots.begin(), all_slots.end(), std::size_t{0});

    for (int depth = 0; !level.empty(); ++depth) {
        const bool can_split = depth < params.max_depth;
        std::vector<std::size_t> level_slots = all_slots;
        if (can_split && params.colsample_bylevel < 1.0) {
            level_slots = sample_subset(all_slots, sample_count(params.colsample_bylevel, all_slots.size()), rng);
        }
        std::vector<PendingNode> next;
        for (auto& node : level) {
            auto make_leaf = [&] {
                tree.nodes[node.id].weight = builder.leaf_weight(node) + leaf_offset;
                node.hist.clear();
                node.hist.shrink_to_fit();
            };
            if (!can_split || node.end - node.begin < 2) {
                make_leaf();
                continue;
            }
            if (node.hist.empty()) builder.fill_histogram(node, buf);
            std::span<const std::size_t> slots = level_slots;
            std::vector<std::size_t> node_slots;
            if (params.colsample_bynode < 1.0) {
                node_slots = sample_subset(level_slots, sample_count(params.colsample_bynode, level_slots.size()), rng);
                slots = node_slots;
            }
            const Split s = builder.best_split(node, slots);
            if (!(s.gain > 0.0)) {
                make_leaf();
                continue;
            }
            // Stable partition of the node's rows into left | right.
            std::size_t nl = 0;
            std::size_t nr = 0;
            for (std::size_t p = node.begin; p < node.end; ++p) {
                if (builder.rank(buf[p], s.feature_slot) <= s.bin) {
                    buf[node.begin + nl++] = buf[p];
                } else {
                    scratch[nr++] = buf[p];
                }
            }
            std::copy(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(nr),
                      buf.begin() + static_cast<std::ptrdiff_t>(node.begin + nl));

            const int left_id = static_cast<int>(tree.nodes.size());
            tree.nodes.push_back({});
            tree.nodes.push_back({});
            TreeNode& t = tree.nodes[node.id];
            t.feature = static_cast<int>(builder.feature_of(s.feature_slot));
            t.threshold = builder.threshold(s.feature_slot, s.bin);
            t.left = left_id;
            t.right = left_id + 1;

            PendingNode left;
            left.id = left_id;
            left.begin = node.begin;
            left.end = node.begin + nl;
            PendingNode right;
            right.id = left_id + 1;
            right.begin = node.begin + nl;
            right.end = node.end;
            builder.sums(buf, left);
            builder.sums(buf, right);

            if (depth + 1 < params.max_depth) {
                // Build the smaller child's histogram; the sibling is parent minus it.
                PendingNode& small = nl <= nr ? left : right;
                PendingNode& large = nl <= nr ? right : left;
                builder.fill_histogram(small, buf);
                large.hist = std::move(node.hist);
                for (std::size_t b = 0; b < large.hist.size(); ++b) large.hist[b] -= small.hist[b];
            }
            node.hist.clear();
            next.push_back(std::move(left));
            next.push_back(std::move(right));
        }
        level = std::move(next);
    }
    return tree;
}

namespace {

double rmse_of(std::span<const double> pred, std::span<const double> y) {
    double ss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) ss += (pred[i] - y[i]) * (pred[i] - y[i]);
    return std::sqrt(ss / static_cast<double>(y.size()));
}

void check_fit_data(const FitData& data, std::string_view who) {
    if (data.x.rows() == 0) throw FitError(std::string(who) + ": no training rows");
    if (data.x.rows() != data.y.size()) throw ArgumentError(std::string(who) + ": row count and target length differ");
    if (data.val_x.rows() != data.val_y.size()) {
        throw ArgumentError(std::string(who) + ": validation row count and target length differ");
    }
    if (data.val_x.rows() > 0 && data.val_x.cols() != data.x.cols()) {
        throw ArgumentError(std::string(who) + ": validation rows have a different width");
    }
    for (double v : data.y) {
        if (!std::isfinite(v)) throw ArgumentError(std::string(who) + ": non-finite target");
    }
}

void check_depth(int depth) {
    if (depth < 1 || depth > 10) {
        throw ArgumentError("max_depth must lie in [1, 10], got " + std::to_string(depth));
    }
}

void note(std::vector<Diagnostic>* diagnostics, std::string field, std::string message) {
    if (diagnostics != nullptr) diagnostics->push_back({0, std::move(field), std::move(message)});
}

}  // namespace

GbtModel fit_gbt(const FitData& data, const GbtParams& params, const FitOptions& options,
                 std::vector<Diagnostic>* diagnostics) {
    check_fit_data(data, "fit_gbt");
    check_depth(params.tree.max_depth);
    const std::size_t n = data.x.rows();
    const std::size_t d = data.x.cols();

    GbtModel model;
    model.input_dim = d;
    model.learning_rate = params.learning_rate;
    model.base_score = std::accumulate(data.y.begin(), data.y.end(), 0.0) / static_cast<double>(n);

    std::size_t rounds = params.rounds;
    if (rounds > options.max_rounds) {
        note(diagnostics, "n_rounds", "boosting rounds capped at " + std::to_string(options.max_rounds));
        rounds = options.max_rounds;
    }
    if (rounds == 0) return model;

    bool row_clamped = false;
    bool col_clamped = false;
    const std::size_t n_rows = sample_count(params.subsample, n, &row_clamped);
    const std::size_t n_cols = sample_count(params.colsample_bytree, d, &col_clamped);
    if (row_clamped) note(diagnostics, "subsample", "subsample ratio selects no rows; using 1 row");
    if (col_clamped) note(diagnostics, "colsample_bytree", "column ratio selects no columns; using 1 column");

    const ColumnRanks ranks = ColumnRanks::build(data.x);
    std::mt19937_64 rng(derive_seed(options.seed, "gbt"));
    std::vector<std::size_t> all_rows(n);
    std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});
    std::vector<std::size_t> all_cols(d);
    std::iota(all_cols.begin(), all_cols.end(), std::size_t{0});

    std::vector<double> pred(n, model.base_score);
    std::vector<double> grad(n);
    const bool early_stop = data.val_x.rows() > 0;
    std::vector<double> val_pred(data.val_x.rows(), model.base_score);
    double best_rmse = early_stop ? rmse_of(val_pred, data.val_y) : 0.0;
    std::size_t best_count = 0;

    for (std::size_t round = 0; round < rounds; ++round) {
        for (std::size_t i = 0; i < n; ++i) grad[i] = pred[i] - data.y[i];
        const auto rows = n_rows < n ? sample_subset(all_rows, n_rows, rng) : all_rows;
        const auto cols = n_cols < d ? sample_subset(all_cols, n_cols, rng) : all_cols;
        RegressionTree tree = build_tree(ranks, grad, rows, cols, params.tree, rng);
        for (std::size_t i = 0; i < n; ++i) pred[i] += params.learning_rate * tree.predict(data.x.row(i));
        model.trees.push_back(std::move(tree));
        model.rounds_run = round + 1;
        if (early_stop) {
            const RegressionTree& t = model.trees.back();
            for (std::size_t i = 0; i < val_pred.size(); ++i) {
                val_pred[i] += params.learning_rate * t.predict(data.val_x.row(i));
            }
            const double r = rmse_of(val_pred, data.val_y);
            if (r < best_rmse) {
                best_rmse = r;
                best_count = model.trees.size();
            } else if (model.trees.size() - best_count >= options.early_stopping_rounds) {
                break;
            }
        }
    }
    if (early_stop) model.trees.resize(best_count);
    return model;
}

ForestModel fit_random_forest(const FitData& data, const ForestParams& params, const FitOptions& options,
                              std::vector<Diagnostic>* diagnostics) {
    check_fit_data(data, "fit_random_forest");
    check_depth(params.tree.max_depth);
    const std::size_t n = data.x.rows();
    const std::size_t d = data.x.cols();

    std::size_t n_trees = params.trees;
    if (n_trees == 0) throw ArgumentError("fit_random_forest: n_trees must be at least 1");
    if (n_trees > options.max_trees) {
        note(diagnostics, "n_trees", "forest size capped at " + std::to_string(options.max_trees));
        n_trees = options.max_trees;
    }
    bool clamped = false;
    const std::size_t n_cols = sample_count(params.colsample_bytree, d, &clamped);
    if (clamped) note(diagnostics, "colsample_bytree", "column ratio selects no columns; using 1 column");
    clamped = false;
    const std::size_t n_level = sample_count(params.tree.colsample_bylevel, n_cols, &clamped);
    if (clamped) note(diagnostics, "colsample_bylevel", "level column ratio selects no columns; using 1 column");
    clamped = false;
    sample_count(params.tree.colsample_bynode, n_level, &clamped);
    if (clamped) note(diagnostics, "colsample_bynode", "node column ratio selects no columns; using 1 column");

    // Trees fit y around the training mean: leaves hold mean + shrunken offset.
    const double base = std::accumulate(data.y.begin(), data.y.end(), 0.0) / static_cast<double>(n);
    std::vector<double> grad(n);
    for (std::size_t i = 0; i < n; ++i) grad[i] = base - data.y[i];
    const ColumnRanks ranks = ColumnRanks::build(data.x);
    std::vector<std::size_t> all_cols(d);
    std::iota(all_cols.begin(), all_cols.end(), std::size_t{0});

    ForestModel model;
    model.input_dim = d;
    model.trees.resize(n_trees);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        try {
            for (std::size_t t = next++; t < n_trees; t = next++) {
            std::mt19937_64 rng(derive_seed(options.seed, "rf_tree", t));
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            std::vector<std::size_t> rows(n);
            for (auto& r : rows) r = pick(rng);
            std::sort(rows.begin(), rows.end());
            const auto cols = n_cols < d ? sample_subset(all_cols, n_cols, rng) : all_cols;
            model.trees[t] = build_tree(ranks, grad, rows, cols, params.tree, rng, base);
            }
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next = n_trees;
        }
    };
    const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(n_trees)));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
    return model;
}

}  // namespace serverlens
