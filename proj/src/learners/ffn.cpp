#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

#include "internal.hpp"
#include "serverlens/learners.hpp"

namespace serverlens {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Working copy of a network in Eigen form.
struct Layers {
    std::vector<RowMat> w;  // out x in
    std::vector<Vec> b;

    static Layers from(const NetModel& net) {
        Layers l;
        for (std::size_t k = 0; k < net.weights.size(); ++k) {
            const Matrix& m = net.weights[k];
            l.w.emplace_back(Eigen::Map<const RowMat>(m.data().data(), static_cast<Eigen::Index>(m.rows()),
                                                      static_cast<Eigen::Index>(m.cols())));
            l.b.emplace_back(Eigen::Map<const Vec>(net.biases[k].data(), static_cast<Eigen::Index>(net.biases[k].size())));
        }
        return l;
    }

    void store(NetModel& net) const {
        for (std::size_t k = 0; k < w.size(); ++k) {
            Matrix m(static_cast<std::size_t>(w[k].rows()), static_cast<std::size_t>(w[k].cols()));
            std::copy(w[k].data(), w[k].data() + w[k].size(), m.data().begin());
            net.weights[k] = std::move(m);
            net.biases[k].assign(b[k].data(), b[k].data() + b[k].size());
        }
    }
};

RowMat to_rowmat(const Matrix& x) {
    return Eigen::Map<const RowMat>(x.data().data(), static_cast<Eigen::Index>(x.rows()),
                                    static_cast<Eigen::Index>(x.cols()));
}

// Forward pass; keeps pre-activations and activations when `cache` is set.
// `masks` (hidden layers only) are multiplied into the activations.
Vec forward(const Layers& net, const RowMat& x, std::vector<RowMat>* z_cache, std::vector<RowMat>* a_cache,
            const std::vector<RowMat>* masks) {
    RowMat a = x;
    const std::size_t hidden = net.w.size() - 1;
    if (a_cache != nullptr) a_cache->assign(1, a);
    if (z_cache != nullptr) z_cache->clear();
    for (std::size_t k = 0; k < hidden; ++k) {
        RowMat z = a * net.w[k].transpose();
        z.rowwise() += net.b[k].transpose();
        if (z_cache != nullptr) z_cache->push_back(z);
        a = z.cwiseMax(0.0);
        if (masks != nullptr) a.array() *= (*masks)[k].array();
        if (a_cache != nullptr) a_cache->push_back(a);
    }
    Vec out = a * net.w[hidden].transpose();
    out.array() += net.b[hidden](0);
    return out;
}

// Gradient of 0.5 * mean((out - y)^2).
double backward(const Layers& net, const RowMat& x, const Vec& y, const std::vector<RowMat>* masks,
                std::vector<RowMat>& dw, std::vector<Vec>& db) {
    std::vector<RowMat> zs;
    std::vector<RowMat> as;
    const Vec out = forward(net, x, &zs, &as, masks);
    const double nb = static_cast<double>(x.rows());
    const Vec err = out - y;
    const double loss = 0.5 * err.squaredNorm() / nb;

    const std::size_t layers = net.w.size();
    dw.resize(layers);
    db.resize(layers);
    RowMat dz = err / nb;  // n x 1
    for (std::size_t k = layers; k-- > 0;) {
        dw[k] = dz.transpose() * as[k];
        db[k] = dz.colwise().sum().transpose();
        if (k == 0) break;
        RowMat da = dz * net.w[k];
        da.array() *= (zs[k - 1].array() > 0.0).cast<double>();
        if (masks != nullptr) da.array() *= (*masks)[k - 1].array();
        dz = std::move(da);
    }
    return loss;
}

double rmse(const Vec& a, const Vec& b) {
    return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

}  // namespace

NetModel init_network(std::size_t input_dim, std::size_t hidden_layers, std::size_t hidden_nodes, std::uint64_t seed) {
    if (input_dim == 0) throw ArgumentError("init_network: zero input width");
    if (hidden_layers > 0 && hidden_nodes == 0) throw ArgumentError("init_network: zero hidden width");
    NetModel net;
    net.input_dim = input_dim;
    std::mt19937_64 rng(seed);
    std::size_t fan_in = input_dim;
    for (std::size_t l = 0; l <= hidden_layers; ++l) {
        const std::size_t fan_out = l == hidden_layers ? 1 : hidden_nodes;
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> u(-limit, limit);
        Matrix w(fan_out, fan_in);
        for (double& v : w.data()) v = u(rng);
        net.weights.push_back(std::move(w));
        net.biases.emplace_back(fan_out, 0.0);
        fan_in = fan_out;
    }
    return net;
}

NetGradient network_gradient(const NetModel& net, const Matrix& x, std::span<const double> y) {
    if (x.cols() != net.input_dim || x.rows() != y.size() || x.rows() == 0) {
        throw ArgumentError("network_gradient: shape mismatch");
    }
    const Layers l = Layers::from(net);
    std::vector<RowMat> dw;
    std::vector<Vec> db;
    Vec yv = Eigen::Map<const Vec>(y.data(), static_cast<Eigen::Index>(y.size()));
    NetGradient g;
    g.loss = backward(l, to_rowmat(x), yv, nullptr, dw, db);
    for (std::size_t k = 0; k < dw.size(); ++k) {
        Matrix m(static_cast<std::size_t>(dw[k].rows()), static_cast<std::size_t>(dw[k].cols()));
        std::copy(dw[k].data(), dw[k].data() + dw[k].size(), m.data().begin());
        g.weights.push_back(std::move(m));
        g.biases.emplace_back(db[k].data(), db[k].data() + db[k].size());
    }
    return g;
}

namespace {

struct TrainOutcome {
    bool diverged = false;
    std::size_t epochs = 0;
};

TrainOutcome train_network(Layers& net, const RowMat& x, const Vec& y, const RowMat& vx, const Vec& vy,
                           const FfnParams& params, double lr, const FitOptions& options) {
    constexpr double kMomentum = 0.9;
    const std::size_t n = static_cast<std::size_t>(x.rows());
    const std::size_t layers = net.w.size();
    const std::size_t hidden = layers - 1;
    const double keep = 1.0 - params.dropout;
    std::mt19937_64 rng(derive_seed(options.seed, "ffn_train"));
    std::bernoulli_distribution keep_unit(keep);

    std::vector<RowMat> vw(layers);
    std::vector<Vec> vb(layers);
    for (std::size_t k = 0; k < layers; ++k) {
        vw[k] = RowMat::Zero(net.w[k].rows(), net.w[k].cols());
        vb[k] = Vec::Zero(net.b[k].size());
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const bool use_val = vx.rows() > 0;

    Layers best = net;
    double best_score = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    TrainOutcome outcome;
    std::vector<RowMat> dw;
    std::vector<Vec> db;
    std::vector<RowMat> masks(hidden);

    for (std::size_t epoch = 0; epoch < options.ffn_max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += options.ffn_batch) {
            const std::size_t stop = std::min(n, start + options.ffn_batch);
            const auto nb = static_cast<Eigen::Index>(stop - start);
            RowMat xb(nb, x.cols());
            Vec yb(nb);
            for (std::size_t i = start; i < stop; ++i) {
                xb.row(static_cast<Eigen::Index>(i - start)) = x.row(static_cast<Eigen::Index>(order[i]));
                yb(static_cast<Eigen::Index>(i - start)) = y(static_cast<Eigen::Index>(order[i]));
            }
            const bool drop = params.dropout > 0.0 && hidden > 0;
            if (drop) {
                for (std::size_t k = 0; k < hidden; ++k) {
                    masks[k].resize(nb, net.w[k].rows());
                    for (Eigen::Index r = 0; r < masks[k].rows(); ++r) {
                        for (Eigen::Index c = 0; c < masks[k].cols(); ++c) {
                            masks[k](r, c) = keep_unit(rng) ? 1.0 / keep : 0.0;
                        }
                    }
                }
            }
            const double loss = backward(net, xb, yb, drop ? &masks : nullptr, dw, db);
            if (!std::isfinite(loss)) {
                outcome.diverged = true;
                return outcome;
            }
            for (std::size_t k = 0; k < layers; ++k) {
                vw[k] = kMomentum * vw[k] - lr * dw[k];
                vb[k] = kMomentum * vb[k] - lr * db[k];
                net.w[k] += vw[k];
                net.b[k] += vb[k];
            }
        }
        outcome.epochs = epoch + 1;
        const double score = use_val ? rmse(forward(net, vx, nullptr, nullptr, nullptr), vy)
                                     : rmse(forward(net, x, nullptr, nullptr, nullptr), y);
        if (!std::isfinite(score)) {
            outcome.diverged = true;
            return outcome;
        }
        if (score < best_score) {
            best_score = score;
            best = net;
            since_best = 0;
        } else if (++since_best >= options.ffn_patience) {
            break;
        }
    }
    net = std::move(best);
    return outcome;
}

}  // namespace

NetModel fit_ffn(const FitData& data, const FfnParams& params, const FitOptions& options,
                 std::vector<Diagnostic>* diagnostics) {
    if (data.x.rows() == 0) throw FitError("fit_ffn: no training rows");
    if (data.x.rows() != data.y.size()) throw ArgumentError("fit_ffn: row count and target length differ");
    if (params.hidden_layers > 5) throw ArgumentError("fit_ffn: hidden_layers must lie in [0, 5]");
    if (!(params.dropout >= 0.0 && params.dropout < 1.0)) throw ArgumentError("fit_ffn: dropout must lie in [0, 1)");
    if (!(params.learning_rate > 0.0)) throw ArgumentError("fit_ffn: learning rate must be positive");
    for (double v : data.x.data()) {
        if (!std::isfinite(v)) throw ArgumentError("fit_ffn: non-finite input");
    }
    auto note = [&](std::string field, std::string message) {
        if (diagnostics != nullptr) diagnostics->push_back({0, std::move(field), std::move(message)});
    };

    Matrix xs = data.x;
    std::vector<double> ys(data.y.begin(), data.y.end());
    if (xs.rows() > options.ffn_max_rows) {
        std::vector<std::size_t> idx(xs.rows());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::mt19937_64 rng(derive_seed(options.seed, "ffn_rows"));
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(options.ffn_max_rows);
        std::sort(idx.begin(), idx.end());
        xs = xs.select_rows(idx);
        std::vector<double> sub;
        for (auto i : idx) sub.push_back(ys[i]);
        ys = std::move(sub);
        note("rows", "network trained on " + std::to_string(xs.rows()) + " sampled rows");
    }

    const double n = static_cast<double>(ys.size());
    const double mean = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : ys) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / n) > 0.0 ? std::sqrt(ss / n) : 1.0;

    const RowMat x = to_rowmat(xs);
    Vec y(static_cast<Eigen::Index>(ys.size()));
    for (std::size_t i = 0; i < ys.size(); ++i) y(static_cast<Eigen::Index>(i)) = (ys[i] - mean) / sd;
    const RowMat vx = data.val_x.rows() > 0 ? to_rowmat(data.val_x) : RowMat(0, static_cast<Eigen::Index>(xs.cols()));
    Vec vy(static_cast<Eigen::Index>(data.val_y.size()));
    for (std::size_t i = 0; i < data.val_y.size(); ++i) vy(static_cast<Eigen::Index>(i)) = (data.val_y[i] - mean) / sd;

    double lr = params.learning_rate;
    constexpr int kRestarts = 3;
    for (int attempt = 0; attempt <= kRestarts; ++attempt) {
        NetModel net = init_network(xs.cols(), params.hidden_layers, params.hidden_nodes,
                                    derive_seed(options.seed, "ffn_init"));
        Layers layers = Layers::from(net);
        const TrainOutcome out = train_network(layers, x, y, vx, vy, params, lr, options);
        if (!out.diverged) {
            layers.store(net);
            net.y_mean = mean;
            net.y_scale = sd;
            net.epochs_run = out.epochs;
            net.learning_rate_used = lr;
            return net;
        }
        note("learning_rate", "training diverged at learning rate " + std::to_string(lr) + "; halving");
        lr /= 2.0;
    }
    throw FitError("fit_ffn: training diverged after 3 learning-rate halvings");
}

namespace detail {

std::vector<double> predict_net(const NetModel& model, const Matrix& rows) {
    const Layers l = Layers::from(model);
    const Vec out = forward(l, to_rowmat(rows), nullptr, nullptr, nullptr);
    std::vector<double> result(rows.rows());
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        result[i] = model.y_mean + model.y_scale * out(static_cast<Eigen::Index>(i));
    }
    return result;
}

}  // namespace detail

}  // namespace serverlens
