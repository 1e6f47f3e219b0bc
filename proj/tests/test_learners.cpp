#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "serverlens/learners.hpp"

using namespace serverlens;

namespace {

struct Toy {
    Matrix x;
    std::vector<double> y;
};

Toy toy_data(std::size_t n, std::size_t d, std::uint64_t seed, double noise = 0.1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    Toy t{Matrix(n, d), std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) t.x(i, j) = z(rng);
        const auto r = t.x.row(i);
        t.y[i] = 3.0 * std::sin(r[0]) + r[1] * r[1] + (d > 2 ? 0.5 * r[2] : 0.0) + noise * z(rng);
    }
    return t;
}

double rmse(const std::vector<double>& a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
}

const Matrix kNoRows(0, 0);

FitData no_validation(const Toy& t) { return {t.x, t.y, kNoRows, {}}; }

// Monomial count by brute-force enumeration of exponent vectors.
std::size_t count_monomials(std::size_t d, int degree) {
    std::size_t count = 0;
    std::vector<int> e(d, 0);
    while (true) {
        const int total = std::accumulate(e.begin(), e.end(), 0);
        if (total >= 1 && total <= degree) ++count;
        std::size_t k = 0;
        while (k < d && ++e[k] > degree) e[k++] = 0;
        if (k == d) break;
    }
    return count;
}

}  // namespace

TEST_CASE("polynomial expansion") {
    const Matrix x = Matrix::from_rows({{2.0, 3.0}, {-1.0, 0.5}});
    CHECK(expand_polynomial(x, 1) == x);
    const Matrix e = expand_polynomial(x, 2);
    REQUIRE(e.cols() == 5);
    const std::vector<double> expect = {2, 3, 4, 6, 9};
    for (std::size_t c = 0; c < 5; ++c) CHECK(e(0, c) == expect[c]);
    const Matrix e3 = expand_polynomial(x, 3);
    const std::vector<double> cubic = {2, 3, 4, 6, 9, 8, 12, 18, 27};
    REQUIRE(e3.cols() == 9);
    for (std::size_t c = 0; c < 9; ++c) CHECK(e3(0, c) == cubic[c]);

    CHECK(polynomial_width(15, 2) == 135);
    for (std::size_t d = 1; d <= 6; ++d)
        for (int k = 1; k <= 4; ++k) CHECK(polynomial_width(d, k) == count_monomials(d, k));
    CHECK_THROWS_AS(expand_polynomial(x, 0), ArgumentError);
    CHECK_THROWS_AS(expand_polynomial(x, 5), ArgumentError);
    CHECK_THROWS_AS(expand_polynomial(Matrix::from_rows({{1.0, kMissing}}), 2), ArgumentError);
}

TEST_CASE("elastic net solver") {
    SUBCASE("vanishing penalty recovers least squares") {
        const Matrix x = Matrix::from_rows({{1}, {2}});
        const std::vector<double> y = {2, 4};
        const auto fit = elastic_net_solve(x, y, 0.5, 1e-12);
        CHECK(fit.beta[0] == doctest::Approx(2.0).epsilon(1e-6));
        CHECK(std::abs(fit.intercept) < 1e-6);
    }
    SUBCASE("lambda_max zeroes every coefficient") {
        const auto t = toy_data(50, 4, 3);
        const double lmax = elastic_net_lambda_max(t.x, t.y, 1.0);
        const auto fit = elastic_net_solve(t.x, t.y, 1.0, lmax);
        for (double b : fit.beta) CHECK(b == 0.0);
        const double mean = std::accumulate(t.y.begin(), t.y.end(), 0.0) / 50.0;
        CHECK(fit.intercept == doctest::Approx(mean).epsilon(1e-12));
        // just below lambda_max something enters
        const auto below = elastic_net_solve(t.x, t.y, 1.0, 0.99 * lmax);
        CHECK(std::any_of(below.beta.begin(), below.beta.end(), [](double b) { return b != 0.0; }));
    }
    SUBCASE("pure ridge matches the closed form") {
        // centred 3x2 system so the intercept is zero
        const Matrix x = Matrix::from_rows({{1.0, -0.5}, {-2.0, 1.5}, {1.0, -1.0}});
        const std::vector<double> y = {1.0, -3.0, 2.0};
        const double lambda = 0.3;
        Eigen::MatrixXd X(3, 2);
        Eigen::VectorXd Y(3);
        for (int i = 0; i < 3; ++i) {
            X(i, 0) = x(i, 0);
            X(i, 1) = x(i, 1);
            Y(i) = y[i];
        }
        const Eigen::VectorXd beta =
            (X.transpose() * X + 3.0 * lambda * Eigen::MatrixXd::Identity(2, 2)).ldlt().solve(X.transpose() * Y);
        const auto fit = elastic_net_solve(x, y, 0.0, lambda);
        CHECK(std::abs(fit.beta[0] - beta(0)) < 1e-6);
        CHECK(std::abs(fit.beta[1] - beta(1)) < 1e-6);
        CHECK(std::abs(fit.intercept) < 1e-6);
    }
    SUBCASE("L1 norm never grows with lambda") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto t = toy_data(80, 6, seed);
            const auto grid = elastic_net_lambda_grid(elastic_net_lambda_max(t.x, t.y, 1.0));
            double prev = -1.0;
            for (auto it = grid.rbegin(); it != grid.rend(); ++it) {  // ascending lambda
                const auto fit = elastic_net_solve(t.x, t.y, 1.0, *it);
                double l1 = 0.0;
                for (double b : fit.beta) l1 += std::abs(b);
                if (prev >= 0.0) CHECK(l1 <= prev + 1e-9);
                prev = l1;
            }
        }
    }
    SUBCASE("grid shape") {
        const auto g = elastic_net_lambda_grid(2.0);
        REQUIRE(g.size() == 20);
        CHECK(g.front() == 2.0);
        CHECK(g.back() == doctest::Approx(2e-5));
        for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] < g[i - 1]);
    }
    SUBCASE("non-finite inputs are rejected") {
        const Matrix x = Matrix::from_rows({{1.0}, {INFINITY}});
        const std::vector<double> y = {1, 2};
        CHECK_THROWS_AS(elastic_net_solve(x, y, 0.5, 0.1), ArgumentError);
    }
}

TEST_CASE("elastic net through fit_learner") {
    const auto train = toy_data(200, 3, 1, 0.0);
    const auto val = toy_data(100, 3, 2, 0.0);
    const FitData data{train.x, train.y, val.x, val.y};
    HyperParams hp;
    hp.set("l1_ratio", 0.5);
    const auto lin = fit_learner(LearnerKind::ElasticNet, data, hp, {});
    REQUIRE(std::holds_alternative<LinearModel>(lin));
    hp.set("degree", std::int64_t{2});
    const auto poly = fit_learner(LearnerKind::ElasticNetPoly, data, hp, {});
    CHECK(std::get<LinearModel>(poly).coefficients.size() == 9);
    // squares of x1 are only reachable with the expansion
    CHECK(rmse(predict(poly, val.x), val.y) < rmse(predict(lin, val.x), val.y));

    SUBCASE("hand-built linear model") {
        LinearModel m;
        m.input_dim = 2;
        m.degree = 1;
        m.coefficients = {2.0, 0.0};
        m.intercept = 1.0;
        CHECK(predict(TrainedModel{m}, Matrix::from_rows({{3.0, 99.0}}))[0] == 7.0);
    }
    SUBCASE("unknown hyperparameter is refused") {
        HyperParams bad;
        bad.set("max_depth", std::int64_t{3});
        CHECK_THROWS_AS(fit_learner(LearnerKind::ElasticNet, data, bad, {}), ArgumentError);
    }
    SUBCASE("row cap on wide expansions") {
        FitOptions o;
        o.linear_max_cells = 200 * 9 / 2;
        std::vector<Diagnostic> diags;
        fit_learner(LearnerKind::ElasticNetPoly, data, hp, o, &diags);
        CHECK(diags.size() >= 1);
    }
}

TEST_CASE("gradient boosted trees") {
    SUBCASE("zero rounds is the mean") {
        const auto t = toy_data(30, 2, 5);
        GbtParams p;
        p.rounds = 0;
        const auto m = fit_gbt(no_validation(t), p, {});
        const double mean = std::accumulate(t.y.begin(), t.y.end(), 0.0) / 30.0;
        for (double v : predict(TrainedModel{m}, t.x)) CHECK(v == doctest::Approx(mean).epsilon(1e-14));
    }
    SUBCASE("two-point stump") {
        const Matrix x = Matrix::from_rows({{0.0}, {1.0}});
        const std::vector<double> y = {0.0, 10.0};
        GbtParams p;
        p.rounds = 1;
        p.learning_rate = 1.0;
        p.tree.max_depth = 1;
        p.tree.alpha = 0.0;
        p.tree.lambda = 0.0;
        const auto m = fit_gbt({x, y, kNoRows, {}}, p, {});
        const auto pred = predict(TrainedModel{m}, x);
        CHECK(pred[0] == 0.0);
        CHECK(pred[1] == 10.0);
    }
    SUBCASE("pure leaf weight is the mean residual") {
        const Matrix x = Matrix::from_rows({{0}, {0}, {1}, {1}});
        const std::vector<double> y = {1, 3, 10, 14};
        GbtParams p;
        p.rounds = 1;
        p.learning_rate = 1.0;
        p.tree = {10, 0.0, 0.0, 1.0, 1.0};
        const auto m = fit_gbt({x, y, kNoRows, {}}, p, {});
        REQUIRE(m.trees.size() == 1);
        const auto& nodes = m.trees[0].nodes;
        CHECK(nodes[nodes[0].left].weight == -5.0);
        CHECK(nodes[nodes[0].right].weight == 5.0);
    }
    SUBCASE("training loss never increases without subsampling") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto t = toy_data(200, 4, seed);
            GbtParams p;
            p.rounds = 40;
            p.learning_rate = 0.1;
            p.tree.max_depth = 3;
            p.tree.alpha = seed * 0.5;
            p.tree.lambda = 1.0;
            const auto m = fit_gbt(no_validation(t), p, {});
            std::vector<double> pred(t.y.size(), m.base_score);
            double prev = rmse(pred, t.y);
            for (const auto& tree : m.trees) {
                for (std::size_t i = 0; i < pred.size(); ++i) pred[i] += m.learning_rate * tree.predict(t.x.row(i));
                const double cur = rmse(pred, t.y);
                CHECK(cur <= prev + 1e-12);
                prev = cur;
            }
        }
    }
    SUBCASE("depth bound, finite leaves, determinism") {
        const auto t = toy_data(300, 5, 8);
        const auto v = toy_data(100, 5, 9);
        HyperParams hp;
        hp.set("max_depth", std::int64_t{4});
        hp.set("n_rounds", std::int64_t{60});
        hp.set("subsample", 0.7);
        hp.set("colsample_bytree", 0.6);
        hp.set("learning_rate", 0.2);
        hp.set("reg_alpha", 1.0);
        hp.set("reg_lambda", 2.0);
        FitOptions o;
        o.seed = 42;
        const FitData data{t.x, t.y, v.x, v.y};
        const auto a = fit_learner(LearnerKind::Gbt, data, hp, o);
        const auto b = fit_learner(LearnerKind::Gbt, data, hp, o);
        CHECK(model_to_json(a) == model_to_json(b));
        for (const auto& tree : std::get<GbtModel>(a).trees) {
            CHECK(tree.depth() <= 4);
            for (const auto& n : tree.nodes) CHECK(std::isfinite(n.weight));
        }
        const auto pa = predict(a, v.x);
        for (double p : pa) CHECK(std::isfinite(p));
        CHECK(pa == predict(b, v.x));
    }
    SUBCASE("aggressive boosting lowers training error") {
        const auto t = toy_data(150, 3, 11);
        GbtParams p;
        p.rounds = 30;
        p.learning_rate = 1.0;
        p.tree.max_depth = 8;
        p.tree.lambda = 0.0;
        const auto m = fit_gbt(no_validation(t), p, {});
        const double mean = std::accumulate(t.y.begin(), t.y.end(), 0.0) / 150.0;
        const std::vector<double> flat(t.y.size(), mean);
        CHECK(rmse(predict(TrainedModel{m}, t.x), t.y) < rmse(flat, t.y));
    }
    SUBCASE("early stopping truncates and caps apply") {
        const auto t = toy_data(200, 3, 12, 2.0);
        const auto v = toy_data(100, 3, 13, 2.0);
        GbtParams p;
        p.rounds = 1000;
        p.learning_rate = 1.0;
        p.tree.max_depth = 8;
        p.tree.lambda = 0.0;
        FitOptions o;
        o.max_rounds = 400;
        std::vector<Diagnostic> diags;
        const auto m = fit_gbt({t.x, t.y, v.x, v.y}, p, o, &diags);
        CHECK(m.rounds_run < 400);
        CHECK(m.trees.size() + 50 == m.rounds_run);
        CHECK(diags.size() == 1);
    }
    SUBCASE("empty samples are clamped with a diagnostic") {
        const auto t = toy_data(50, 3, 14);
        GbtParams p;
        p.rounds = 3;
        p.subsample = 0.0;
        p.colsample_bytree = 0.0;
        std::vector<Diagnostic> diags;
        const auto m = fit_gbt(no_validation(t), p, {}, &diags);
        CHECK(m.trees.size() == 3);
        CHECK(diags.size() == 2);
    }
    SUBCASE("depth outside [1, 10]") {
        const auto t = toy_data(20, 2, 1);
        GbtParams p;
        p.tree.max_depth = 11;
        CHECK_THROWS_AS(fit_gbt(no_validation(t), p, {}), ArgumentError);
    }
}

TEST_CASE("random forest") {
    const auto t = toy_data(200, 4, 21);
    const auto v = toy_data(200, 4, 22);
    SUBCASE("single tree forest equals its tree") {
        ForestParams p;
        p.trees = 1;
        p.tree.max_depth = 5;
        p.tree.lambda = 0.0;
        const auto m = fit_random_forest(no_validation(t), p, {.seed = 3});
        const auto pred = predict(TrainedModel{m}, v.x);
        for (std::size_t i = 0; i < v.x.rows(); ++i) CHECK(pred[i] == m.trees[0].predict(v.x.row(i)));
    }
    SUBCASE("prediction is the mean of tree predictions") {
        ForestParams p;
        p.trees = 25;
        p.tree.max_depth = 4;
        p.colsample_bytree = 0.8;
        p.tree.colsample_bylevel = 0.8;
        p.tree.colsample_bynode = 0.8;
        const auto m = fit_random_forest(no_validation(t), p, {.seed = 4});
        const auto pred = predict(TrainedModel{m}, v.x);
        for (std::size_t i = 0; i < v.x.rows(); ++i) {
            double s = 0.0;
            for (const auto& tree : m.trees) s += tree.predict(v.x.row(i));
            CHECK(pred[i] == s / 25.0);
        }
    }
    SUBCASE("unregularised leaves hold mean targets") {
        const Matrix x = Matrix::from_rows({{0}, {1}});
        const std::vector<double> y = {4.0, 8.0};
        ForestParams p;
        p.trees = 5;
        p.tree = {1, 0.0, 0.0, 1.0, 1.0};
        const auto m = fit_random_forest({x, y, kNoRows, {}}, p, {.seed = 1});
        for (const auto& tree : m.trees)
            for (const auto& n : tree.nodes)
                if (n.feature < 0) CHECK((n.weight == 4.0 || n.weight == 8.0 || n.weight == 6.0));
    }
    SUBCASE("averaging reduces variance") {
        int wins = 0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto tr = toy_data(200, 4, 100 + seed, 0.5);
            const auto te = toy_data(200, 4, 200 + seed, 0.5);
            ForestParams single;
            single.trees = 1;
            single.tree.max_depth = 8;
            single.tree.lambda = 0.0;
            ForestParams many = single;
            many.trees = 50;
            const auto one = fit_random_forest(no_validation(tr), single, {.seed = seed});
            const auto forest = fit_random_forest(no_validation(tr), many, {.seed = seed});
            if (rmse(predict(TrainedModel{forest}, te.x), te.y) <= rmse(predict(TrainedModel{one}, te.x), te.y)) ++wins;
        }
        CHECK(wins >= 18);
    }
    SUBCASE("threaded construction is deterministic") {
        ForestParams p;
        p.trees = 16;
        p.tree.max_depth = 4;
        FitOptions serial{.seed = 9};
        FitOptions threaded{.seed = 9};
        threaded.threads = 4;
        const auto a = fit_random_forest(no_validation(t), p, serial);
        const auto b = fit_random_forest(no_validation(t), p, threaded);
        CHECK(model_to_json(a) == model_to_json(b));
        for (const auto& tree : a.trees) CHECK(tree.depth() <= 4);
    }
    SUBCASE("forest size cap") {
        ForestParams p;
        p.trees = 1000;
        p.tree.max_depth = 2;
        FitOptions o;
        o.max_trees = 7;
        std::vector<Diagnostic> diags;
        CHECK(fit_random_forest(no_validation(t), p, o, &diags).trees.size() == 7);
        CHECK(diags.size() == 1);
    }
}

TEST_CASE("kernels") {
    for (auto kind : {KernelKind::Rbf, KernelKind::Matern12, KernelKind::Matern32, KernelKind::Matern52}) {
        KernelSpec k{kind, 0.7, 2.5, 0.1};
        CHECK(k(0.0) == 2.5);
        // lengthscale derivative against central differences
        for (double r : {0.1, 0.8, 2.0}) {
            const double h = 1e-6;
            KernelSpec up = k;
            KernelSpec down = k;
            up.lengthscale *= std::exp(h);
            down.lengthscale *= std::exp(-h);
            const double fd = (up(r) - down(r)) / (2 * h);
            CHECK(k.log_lengthscale_derivative(r) == doctest::Approx(fd).epsilon(1e-6));
        }
        CHECK(parse_kernel(to_string(kind)) == kind);
    }
    KernelSpec rbf{KernelKind::Rbf, 1.0, 1.0, 0.0};
    CHECK(rbf(std::sqrt(2.0)) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
    CHECK(KernelSpec{KernelKind::Matern12, 2.0, 1.0, 0.0}(1.0) == doctest::Approx(std::exp(-0.5)));
    CHECK_THROWS_AS(parse_kernel("linear"), ArgumentError);
}

TEST_CASE("gaussian process") {
    SUBCASE("near-noiseless interpolation with all rows inducing") {
        const std::size_t n = 25;
        Matrix x(n, 1);
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x(i, 0) = 0.25 * static_cast<double>(i);
            y[i] = std::sin(x(i, 0));
        }
        for (auto kind : {KernelKind::Rbf, KernelKind::Matern52}) {
            GpParams p;
            p.inducing = n;
            p.kernel = kind;
            p.optimise = false;
            p.lengthscale = 1.0;
            p.signal_variance = 1.0;
            p.noise_variance = 1e-8;
            const auto m = fit_gp({x, y, kNoRows, {}}, p, {});
            const auto pred = predict(TrainedModel{m}, x);
            for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(pred[i] - y[i]) < 1e-3);
        }
    }
    SUBCASE("predictive mean is linear in y") {
        const auto t = toy_data(120, 3, 31);
        auto doubled = t.y;
        for (double& v : doubled) v *= 2.0;
        GpParams p;
        p.inducing = 30;
        p.kernel = KernelKind::Matern32;
        p.optimise = false;
        p.lengthscale = 1.5;
        p.signal_variance = 1.0;
        p.noise_variance = 0.05;
        const auto a = predict(TrainedModel{fit_gp(no_validation(t), p, {.seed = 1})}, t.x);
        const auto b = predict(TrainedModel{fit_gp({t.x, doubled, kNoRows, {}}, p, {.seed = 1})}, t.x);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(2.0 * a[i]).epsilon(1e-9));
    }
    SUBCASE("likelihood gradient matches finite differences") {
        const auto t = toy_data(60, 2, 32);
        const Matrix z = kmeanspp_seed(t.x, 12, 5);
        for (auto kind : {KernelKind::Rbf, KernelKind::Matern12, KernelKind::Matern32, KernelKind::Matern52}) {
            KernelSpec k{kind, 1.3, 0.8, 0.2};
            const auto g = gp_log_likelihood(t.x, t.y, z, k);
            for (int p = 0; p < 3; ++p) {
                const double h = 1e-5;
                KernelSpec up = k;
                KernelSpec down = k;
                double* fu = p == 0 ? &up.lengthscale : p == 1 ? &up.signal_variance : &up.noise_variance;
                double* fdn = p == 0 ? &down.lengthscale : p == 1 ? &down.signal_variance : &down.noise_variance;
                *fu *= std::exp(h);
                *fdn *= std::exp(-h);
                const double fd = (gp_log_likelihood(t.x, t.y, z, up).value - gp_log_likelihood(t.x, t.y, z, down).value) /
                                  (2 * h);
                CHECK(g.gradient[p] == doctest::Approx(fd).epsilon(1e-5));
            }
        }
    }
    SUBCASE("hyperparameter ascent improves the likelihood and fits") {
        const auto t = toy_data(200, 3, 33, 0.05);
        const auto v = toy_data(100, 3, 34, 0.05);
        HyperParams hp;
        hp.set("n_inducing", std::int64_t{60});
        hp.set("kernel", std::string("rbf"));
        hp.set("learning_rate", 0.05);
        const auto m = fit_learner(LearnerKind::Gp, {t.x, t.y, v.x, v.y}, hp, {.seed = 2});
        const auto pred = predict(m, v.x);
        const double mean = std::accumulate(v.y.begin(), v.y.end(), 0.0) / 100.0;
        CHECK(rmse(pred, v.y) < 0.5 * rmse(std::vector<double>(100, mean), v.y));
        const auto again = fit_learner(LearnerKind::Gp, {t.x, t.y, v.x, v.y}, hp, {.seed = 2});
        CHECK(model_to_json(m) == model_to_json(again));
    }
    SUBCASE("k-means++ seeding") {
        const auto t = toy_data(100, 3, 35);
        const Matrix a = kmeanspp_seed(t.x, 20, 7);
        CHECK(a == kmeanspp_seed(t.x, 20, 7));
        std::set<std::vector<double>> rows;
        for (std::size_t i = 0; i < a.rows(); ++i) rows.insert({a.row(i).begin(), a.row(i).end()});
        CHECK(rows.size() == 20);
        const Matrix dup = Matrix::from_rows({{1, 1}, {1, 1}, {2, 2}});
        CHECK(kmeanspp_seed(dup, 3, 1).rows() == 2);
    }
    SUBCASE("more inducing points than rows is clamped") {
        const auto t = toy_data(20, 2, 36);
        GpParams p;
        p.inducing = 50;
        std::vector<Diagnostic> diags;
        const auto m = fit_gp(no_validation(t), p, {.seed = 1}, &diags);
        CHECK(m.inducing.rows() == 20);
        CHECK_FALSE(diags.empty());
    }
}

TEST_CASE("feedforward network") {
    CHECK(relu(-3.0) == 0.0);
    CHECK(relu(2.0) == 2.0);

    SUBCASE("no hidden layers is least squares") {
        Matrix x(40, 2);
        std::vector<double> y(40);
        std::mt19937_64 rng(1);
        std::normal_distribution<double> z(0.0, 1.0);
        for (std::size_t i = 0; i < 40; ++i) {
            x(i, 0) = z(rng);
            x(i, 1) = z(rng);
            y[i] = 1.5 * x(i, 0) - 0.7 * x(i, 1) + 0.3;
        }
        FfnParams p;
        p.hidden_layers = 0;
        p.dropout = 0.0;
        p.learning_rate = 0.05;
        const auto m = fit_ffn({x, y, x, y}, p, {.seed = 3});
        const auto pred = predict(TrainedModel{m}, x);
        for (std::size_t i = 0; i < 40; ++i) CHECK(std::abs(pred[i] - y[i]) < 1e-2);
    }
    SUBCASE("analytic gradient matches central differences") {
        const auto t = toy_data(10, 3, 41);
        NetModel net = init_network(3, 2, 6, 17);
        std::mt19937_64 rng(2);
        std::normal_distribution<double> z(0.0, 0.3);
        for (auto& b : net.biases)
            for (double& v : b) v = z(rng);
        const auto g = network_gradient(net, t.x, t.y);
        const double eps = 1e-5;
        double worst = 0.0;
        auto check = [&](double& param, double analytic) {
            const double keep = param;
            param = keep + eps;
            const double up = network_gradient(net, t.x, t.y).loss;
            param = keep - eps;
            const double down = network_gradient(net, t.x, t.y).loss;
            param = keep;
            const double fd = (up - down) / (2 * eps);
            const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
            worst = std::max(worst, std::abs(fd - analytic) / denom);
        };
        for (std::size_t l = 0; l < net.weights.size(); ++l) {
            for (std::size_t k = 0; k < net.weights[l].data().size(); ++k)
                check(net.weights[l].data()[k], g.weights[l].data()[k]);
            for (std::size_t k = 0; k < net.biases[l].size(); ++k) check(net.biases[l][k], g.biases[l][k]);
        }
        CHECK(worst < 1e-4);
    }
    SUBCASE("Glorot-uniform initial weights") {
        const NetModel net = init_network(10, 2, 30, 3);
        const double limit = std::sqrt(6.0 / 40.0);
        for (double v : net.weights[0].data()) CHECK(std::abs(v) <= limit);
        CHECK(net.weights.size() == 3);
        CHECK(net.weights[2].rows() == 1);
    }
    SUBCASE("identical seeds give identical weights") {
        const auto t = toy_data(150, 3, 42);
        const auto v = toy_data(50, 3, 43);
        HyperParams hp;
        hp.set("hidden_layers", std::int64_t{2});
        hp.set("hidden_nodes", std::int64_t{16});
        hp.set("dropout", 0.1);
        hp.set("learning_rate", 0.01);
        FitOptions o{.seed = 5};
        o.ffn_max_epochs = 30;
        const auto a = fit_learner(LearnerKind::Ffn, {t.x, t.y, v.x, v.y}, hp, o);
        const auto b = fit_learner(LearnerKind::Ffn, {t.x, t.y, v.x, v.y}, hp, o);
        CHECK(model_to_json(a) == model_to_json(b));
    }
    SUBCASE("divergence halves the learning rate or fails") {
        auto t = toy_data(100, 3, 44);
        FfnParams p;
        p.hidden_layers = 2;
        p.hidden_nodes = 50;
        p.dropout = 0.0;
        p.learning_rate = 1e6;
        std::vector<Diagnostic> diags;
        FitOptions o{.seed = 1};
        o.ffn_max_epochs = 20;
        CHECK_THROWS_AS(fit_ffn(no_validation(t), p, o, &diags), FitError);
        CHECK(diags.size() == 4);
    }
}

TEST_CASE("uniform predict contract and serialisation") {
    const auto t = toy_data(120, 3, 51);
    const auto v = toy_data(60, 3, 52);
    const FitData data{t.x, t.y, v.x, v.y};
    FitOptions o{.seed = 7};
    o.ffn_max_epochs = 20;
    o.max_rounds = 50;
    o.max_trees = 20;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z(0.0, 1.0);
    Matrix probe(100, 3);
    for (double& c : probe.data()) c = z(rng);

    for (auto kind : kAllLearners) {
        CAPTURE(to_string(kind));
        CHECK(parse_learner(to_string(kind)) == kind);
        HyperParams hp;
        if (kind == LearnerKind::ElasticNetPoly) hp.set("degree", std::int64_t{3});
        const auto model = fit_learner(kind, data, hp, o);
        const auto pred = predict(model, probe);
        for (double p : pred) CHECK(std::isfinite(p));
        CHECK(pred == predict(model, probe));

        const auto text = model_to_json(model).dump();
        const auto back = model_from_json(nlohmann::json::parse(text));
        CHECK(predict(back, probe) == pred);
        CHECK_THROWS_AS(predict(model, Matrix(2, 4)), SchemaError);
    }
    CHECK_THROWS_AS(parse_learner("xgboost"), ArgumentError);
    CHECK_THROWS_AS(model_from_json(nlohmann::json{{"type", "svm"}, {"input_dim", 3}}), ParseError);
    CHECK_THROWS_AS(model_from_json(nlohmann::json{{"type", "gbt"}}), ParseError);
}
