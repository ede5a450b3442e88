#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "embias/bias_metrics.hpp"
#include "embias/debias.hpp"

#include "test_util.hpp"

using namespace embias;
using testutil::TempDir;

namespace {

Eigen::MatrixXd identity(Eigen::Index n) { return Eigen::MatrixXd::Identity(n, n); }

/// Both sides of the Eq. 3 identity, computed independently.
std::pair<double, double> eq3_sides(const Eigen::MatrixXd& a, const Eigen::MatrixXd& x) {
    const double lhs = (a * x * a.transpose() - a * a.transpose()).squaredNorm();
    const SvdReduction red = reduce_via_svd(a);
    const Eigen::MatrixXd inner = red.sigma.asDiagonal() * red.V.transpose() *
                                  (x - identity(a.cols())) * red.V * red.sigma.asDiagonal();
    return {lhs, inner.squaredNorm()};
}

DebiasProblem random_problem(Eigen::Index r, std::mt19937& rng, double lambda) {
    DebiasProblem p;
    p.A = testutil::random_matrix(r + 1, r, rng);
    p.P = testutil::random_matrix(3, r, rng);
    p.B = testutil::random_matrix(2, r, rng);
    p.lambda = lambda;
    return p;
}

}  // namespace

TEST_CASE("reduce_via_svd on the identity", "[debias][svd]") {
    const SvdReduction red = reduce_via_svd(identity(4));
    REQUIRE((red.sigma - Eigen::VectorXd::Ones(4)).norm() < 1e-12);
    REQUIRE((red.V.transpose() * red.V - identity(4)).norm() < 1e-10);

    std::mt19937 rng(1);
    const Eigen::MatrixXd x = testutil::random_symmetric(4, rng);
    const auto [lhs, rhs] = eq3_sides(identity(4), x);
    REQUIRE(std::abs(lhs - (x - identity(4)).squaredNorm()) < 1e-12);
    REQUIRE(std::abs(lhs - rhs) < 1e-12);
}

TEST_CASE("reduce_via_svd ignores zero rows", "[debias][svd]") {
    std::mt19937 rng(2);
    const Eigen::MatrixXd a = testutil::random_matrix(10, 4, rng);
    Eigen::MatrixXd padded(11, 4);
    padded.topRows(10) = a;
    padded.row(10).setZero();
    const SvdReduction r1 = reduce_via_svd(a);
    const SvdReduction r2 = reduce_via_svd(padded);
    REQUIRE((r1.sigma - r2.sigma).norm() < 1e-10);
    const Eigen::MatrixXd g1 = r1.V * r1.sigma.array().square().matrix().asDiagonal() *
                               r1.V.transpose();
    const Eigen::MatrixXd g2 = r2.V * r2.sigma.array().square().matrix().asDiagonal() *
                               r2.V.transpose();
    REQUIRE((g1 - g2).norm() < 1e-10 * std::max(1.0, g1.norm()));
}

TEST_CASE("Eq. 3 identity holds on random problems", "[debias][svd][property]") {
    std::mt19937 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::MatrixXd a = testutil::random_matrix(40, 5, rng);
        const Eigen::MatrixXd x = testutil::random_symmetric(5, rng);
        const auto [lhs, rhs] = eq3_sides(a, x);
        REQUIRE(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::max(lhs, rhs)));
    }
    // Rank-deficient: fewer rows than columns pads sigma with zeros.
    const Eigen::MatrixXd thin = testutil::random_matrix(3, 6, rng);
    const SvdReduction red = reduce_via_svd(thin);
    REQUIRE(red.sigma.size() == 6);
    REQUIRE(red.sigma.tail(3).norm() == 0.0);
    REQUIRE((red.V.transpose() * red.V - identity(6)).norm() < 1e-10);
    for (int i = 0; i + 1 < 6; ++i) REQUIRE(red.sigma(i) >= red.sigma(i + 1));
    const Eigen::MatrixXd x = testutil::random_symmetric(6, rng);
    const auto [lhs, rhs] = eq3_sides(thin, x);
    REQUIRE(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::max(lhs, rhs)));

    REQUIRE_THROWS_AS(reduce_via_svd(Eigen::MatrixXd(0, 3)), InvalidArgument);
}

TEST_CASE("Gram-route reduction agrees with the direct SVD", "[debias][svd]") {
    std::mt19937 rng(4);
    const Eigen::MatrixXd a = testutil::random_matrix(50, 6, rng);
    const SvdReduction direct = reduce_via_svd(a);
    const SvdReduction gram = detail::reduce_via_gram(a);
    REQUIRE((direct.sigma - gram.sigma).norm() < 1e-8 * direct.sigma.maxCoeff());
    const Eigen::MatrixXd ata = a.transpose() * a;
    for (const SvdReduction* red : {&direct, &gram}) {
        const Eigen::MatrixXd g = red->V * red->sigma.array().square().matrix().asDiagonal() *
                                  red->V.transpose();
        REQUIRE((g - ata).norm() < 1e-10 * ata.norm());
        REQUIRE((red->V.transpose() * red->V - identity(6)).norm() < 1e-10);
    }
}

TEST_CASE("solve_sdp scalar oracle", "[debias][solver]") {
    DebiasProblem p;
    p.A = Eigen::MatrixXd::Ones(1, 1);
    p.P = Eigen::MatrixXd::Ones(1, 1);
    p.B = Eigen::MatrixXd::Ones(1, 1);
    p.lambda = 1.0;
    const DebiasSolution sol = solve_sdp(p);
    REQUIRE(sol.converged);
    REQUIRE(std::abs(sol.X(0, 0) - 0.5) < 1e-6);  // argmin of (x-1)^2 + x^2
    REQUIRE(std::abs(sol.T(0, 0) - std::sqrt(0.5)) < 1e-6);
    REQUIRE(std::abs(sol.residual_bias - 0.5) < 1e-6);
    REQUIRE(std::abs(sol.distortion - 0.5) < 1e-6);
}

TEST_CASE("solve_sdp 2-d diagonal oracle", "[debias][solver]") {
    DebiasProblem p;
    p.A = identity(2);
    p.P.resize(1, 2);
    p.P << 1, 0;
    p.B = p.P;
    p.lambda = 1.0;
    const DebiasSolution sol = solve_sdp(p);
    REQUIRE(sol.converged);
    Eigen::MatrixXd want(2, 2);
    want << 0.5, 0, 0, 1;
    REQUIRE((sol.X - want).norm() < 1e-6);
}

TEST_CASE("lambda zero with full-rank A recovers the identity", "[debias][solver]") {
    std::mt19937 rng(5);
    DebiasProblem p;
    p.A = testutil::random_matrix(40, 5, rng);  // tall A keeps the Gram matrix well conditioned
    p.P = testutil::random_matrix(3, 5, rng);
    p.B = testutil::random_matrix(2, 5, rng);
    p.lambda = 0.0;
    SolverOptions opts;
    opts.tol = 1e-14;
    opts.x0 = testutil::random_psd(5, rng);
    const DebiasSolution sol = solve_sdp(p, opts);
    REQUIRE(sol.converged);
    REQUIRE((sol.X - identity(5)).norm() < 1e-6);
}

TEST_CASE("solver trace is monotone and stays PSD", "[debias][solver][property]") {
    std::mt19937 rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        DebiasProblem p;
        p.A = testutil::random_matrix(30, 6, rng);
        p.P = testutil::random_matrix(5, 6, rng);
        p.B = testutil::random_matrix(2, 6, rng);
        p.lambda = 0.7;
        SolverOptions opts;
        opts.tol = 1e-10;
        opts.x0 = testutil::random_psd(6, rng);
        const DebiasSolution sol = solve_sdp(p, opts);
        REQUIRE(sol.converged);
        REQUIRE(sol.objective_trace.size() == sol.trace.size());
        for (std::size_t i = 1; i < sol.objective_trace.size(); ++i)
            REQUIRE(sol.objective_trace[i] <= sol.objective_trace[i - 1] + 1e-12);
        for (const IterationRecord& rec : sol.trace) REQUIRE(rec.min_eigenvalue >= -1e-8);

        REQUIRE((sol.X - sol.X.transpose()).norm() < 1e-10);
        REQUIRE(detail::min_eigenvalue(sol.X) >= -1e-8);
        REQUIRE((sol.T * sol.T.transpose() - sol.X).norm() <= 1e-8 * std::max(1.0, sol.X.norm()));
    }
}

TEST_CASE("analytic gradient matches central finite differences", "[debias][solver][property]") {
    std::mt19937 rng(7);
    const double h = 1e-5;
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        DebiasProblem p;
        p.A = testutil::random_matrix(6, 5, rng);
        p.P = testutil::random_matrix(3, 5, rng);
        p.B = testutil::random_matrix(2, 5, rng);
        p.lambda = (trial % 3 == 0) ? 0.3 : (trial % 3 == 1 ? 1.0 : 2.5);
        const detail::SdpObjective objective(p, reduce_via_svd(p.A));
        const Eigen::MatrixXd x = testutil::random_symmetric(5, rng);
        const Eigen::MatrixXd grad = objective.gradient(x);

        for (Eigen::Index i = 0; i < 5; ++i) {
            for (Eigen::Index j = i; j < 5; ++j) {
                Eigen::MatrixXd pert = Eigen::MatrixXd::Zero(5, 5);
                pert(i, j) = 1.0;
                pert(j, i) = 1.0;
                // Directional derivative along a symmetric perturbation:
                // <grad, pert> = grad_ii on the diagonal, 2 grad_ij off it.
                const double fd = (objective.evaluate(x + h * pert).f -
                                   objective.evaluate(x - h * pert).f) /
                                  (2.0 * h);
                const double analytic = (i == j) ? grad(i, i) : 2.0 * grad(i, j);
                const double err = std::abs(fd - analytic) / std::max(1.0, std::abs(analytic));
                worst = std::max(worst, err);
            }
        }
    }
    REQUIRE(worst < 1e-4);
}

TEST_CASE("converged iterates are near-stationary", "[debias][solver][property]") {
    // The provable analogue of stationarity under a relative-decrease stop
    // rule: one more projected-gradient step at eta = 1/L moves the iterate
    // by at most eta * sqrt(2 tol max(1,f) / eta), up to a safety factor.
    std::mt19937 rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        DebiasProblem p;
        p.A = testutil::random_matrix(25, 5, rng);
        p.P = testutil::random_matrix(4, 5, rng);
        p.B = testutil::random_matrix(1, 5, rng);
        p.lambda = 0.5;
        SolverOptions opts;
        opts.tol = 1e-10;
        const DebiasSolution sol = solve_sdp(p, opts);
        REQUIRE(sol.converged);

        const detail::SdpObjective objective(p, reduce_via_svd(p.A));
        const double eta = 1.0 / objective.lipschitz();
        const Eigen::MatrixXd next = detail::project_psd(sol.X - eta * objective.gradient(sol.X));
        const double pg_norm = (sol.X - next).norm() / eta;
        const double f = objective.evaluate(sol.X).f;
        const double bound = 3.0 * std::sqrt(2.0 * opts.tol * std::max(1.0, f) / eta);
        REQUIRE(pg_norm <= bound);
    }
}

TEST_CASE("solve_sdp option and problem validation", "[debias][solver]") {
    std::mt19937 rng(9);
    DebiasProblem p = random_problem(3, rng, 1.0);

    SolverOptions bad;
    bad.max_iters = 0;
    REQUIRE_THROWS_AS(solve_sdp(p, bad), InvalidArgument);
    bad = SolverOptions{};
    bad.tol = 0.0;
    REQUIRE_THROWS_AS(solve_sdp(p, bad), InvalidArgument);
    bad = SolverOptions{};
    bad.x0 = Eigen::MatrixXd::Identity(2, 2);
    REQUIRE_THROWS_AS(solve_sdp(p, bad), InvalidArgument);

    DebiasProblem broken = p;
    broken.lambda = -1.0;
    REQUIRE_THROWS_AS(solve_sdp(broken), InvalidArgument);
    broken = p;
    broken.P = Eigen::MatrixXd(0, 3);
    REQUIRE_THROWS_AS(solve_sdp(broken), InvalidArgument);
    broken = p;
    broken.B = testutil::random_matrix(1, 2, rng);
    REQUIRE_THROWS_AS(solve_sdp(broken), InvalidArgument);
    broken = p;
    broken.A(0, 0) = std::nan("");
    REQUIRE_THROWS_AS(solve_sdp(broken), InvalidArgument);
}

TEST_CASE("factor_transform", "[debias]") {
    REQUIRE((factor_transform(identity(3)) - identity(3)).norm() < 1e-14);

    Eigen::MatrixXd d(2, 2);
    d << 4, 0, 0, 1;
    Eigen::MatrixXd want(2, 2);
    want << 2, 0, 0, 1;
    REQUIRE((factor_transform(d) - want).norm() < 1e-12);

    std::mt19937 rng(10);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::MatrixXd x = testutil::random_psd(6, rng);
        const Eigen::MatrixXd t = factor_transform(x);
        REQUIRE((t - t.transpose()).norm() < 1e-10);  // symmetric root
        REQUIRE((t * t.transpose() - x).norm() < 1e-10 * std::max(1.0, x.norm()));
    }

    Eigen::MatrixXd asym(2, 2);
    asym << 1, 1, 0, 1;
    REQUIRE_THROWS_AS(factor_transform(asym), InvalidArgument);

    Eigen::MatrixXd negative(2, 2);
    negative << 1, 0, 0, -1e-3;
    REQUIRE_THROWS_AS(factor_transform(negative), InvalidArgument);

    Eigen::MatrixXd tiny_neg(2, 2);
    tiny_neg << 1, 0, 0, -1e-8;  // within clipping tolerance
    const Eigen::MatrixXd t = factor_transform(tiny_neg);
    REQUIRE(t(1, 1) == 0.0);
}

TEST_CASE("apply_transform", "[debias]") {
    const Embedding emb = testutil::random_embedding(10, 4, 44);
    const Embedding same = apply_transform(emb, identity(4));
    REQUIRE(same.vectors() == emb.vectors());
    REQUIRE(same.vocab() == emb.vocab());
    REQUIRE_FALSE(same.is_normalized());

    const Embedding doubled = apply_transform(emb, 2.0 * identity(4));
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j) {
            const double before = (emb.vectors().row(i) - emb.vectors().row(j)).norm();
            const double after = (doubled.vectors().row(i) - doubled.vectors().row(j)).norm();
            REQUIRE(std::abs(after - 2.0 * before) < 1e-12);
        }

    REQUIRE_THROWS_AS(apply_transform(emb, identity(3)), InvalidArgument);
}

TEST_CASE("build_problem assembles A, P, B", "[debias]") {
    const Embedding emb = testutil::random_embedding(20, 5, 66);
    const std::vector<std::pair<std::string, std::string>> pairs{{"w0", "w1"}};

    SECTION("default background excludes seeds and anchors") {
        const DebiasProblem p = build_problem(emb, {"w2"}, pairs, std::nullopt, 0.2);
        REQUIRE(p.B.rows() == 1);
        REQUIRE(p.P.rows() == 1);
        REQUIRE(p.A.rows() == 17);
        const Eigen::VectorXd diff = emb.vector("w0") - emb.vector("w1");
        REQUIRE((p.B.row(0).transpose() - diff).norm() == 0.0);
        REQUIRE((p.P.row(0).transpose() - emb.vector("w2")).norm() == 0.0);
        REQUIRE(p.lambda == 0.2);
    }

    SECTION("explicit background can be the full vocabulary") {
        std::vector<std::string> all;
        for (std::size_t i = 0; i < emb.size(); ++i) all.push_back(emb.token(i));
        const DebiasProblem p = build_problem(emb, {"w2"}, pairs, all, 0.2);
        REQUIRE(p.A == emb.vectors());
    }

    SECTION("normalize_b makes direction rows unit length") {
        const DebiasProblem p = build_problem(emb, {"w2"}, pairs, std::nullopt, 0.2, true);
        REQUIRE(std::abs(p.B.row(0).norm() - 1.0) < 1e-12);
    }

    SECTION("errors") {
        try {
            build_problem(emb, {"w2", "ghost"}, pairs, std::nullopt, 0.2);
            FAIL("expected OovError");
        } catch (const OovError& e) {
            REQUIRE(e.token() == "ghost");
        }
        REQUIRE_THROWS_AS(build_problem(emb, {"w2"}, {{"w0", "ghost"}}, std::nullopt, 0.2),
                          OovError);
        REQUIRE_THROWS_AS(build_problem(emb, {}, pairs, std::nullopt, 0.2), InvalidArgument);
        REQUIRE_THROWS_AS(build_problem(emb, {"w2"}, {}, std::nullopt, 0.2), InvalidArgument);
        REQUIRE_THROWS_AS(build_problem(emb, {"w2"}, pairs, std::nullopt, 0.0), InvalidArgument);
        REQUIRE_THROWS_AS(build_problem(emb, {"w2"}, pairs, std::vector<std::string>{}, 0.2),
                          InvalidArgument);

        const Embedding three = testutil::random_embedding(3, 4, 67);
        REQUIRE_THROWS_WITH(
            build_problem(three, {"w2"}, {{"w0", "w1"}}, std::nullopt, 0.2),
            Catch::Matchers::ContainsSubstring("background is empty"));
    }
}

TEST_CASE("transform file round-trip", "[debias][io]") {
    TempDir tmp;
    std::mt19937 rng(11);
    const Eigen::MatrixXd t = testutil::random_matrix(4, 4, rng);
    write_transform(t, tmp.file("t.txt"));
    const Eigen::MatrixXd back = load_transform(tmp.file("t.txt"));
    REQUIRE(back == t);  // format_double is lossless

    const std::string text = testutil::read_file(tmp.file("t.txt"));
    REQUIRE(text.rfind("debias-transform v1\n4\n", 0) == 0);

    testutil::write_file(tmp.file("bad1.txt"), "not-a-transform\n2\n1 0\n0 1\n");
    REQUIRE_THROWS_AS(load_transform(tmp.file("bad1.txt")), ParseError);
    testutil::write_file(tmp.file("bad2.txt"), "debias-transform v1\n2\n1 0\n");
    REQUIRE_THROWS_AS(load_transform(tmp.file("bad2.txt")), ParseError);
    testutil::write_file(tmp.file("bad3.txt"), "debias-transform v1\n2\n1 0\n0 1 2\n");
    REQUIRE_THROWS_AS(load_transform(tmp.file("bad3.txt")), ParseError);
    REQUIRE_THROWS_AS(load_transform(tmp.file("absent.txt")), IoError);
}

TEST_CASE("diagnostics csv", "[debias][io]") {
    TempDir tmp;
    DebiasProblem p;
    p.A = Eigen::MatrixXd::Ones(1, 1);
    p.P = Eigen::MatrixXd::Ones(1, 1);
    p.B = Eigen::MatrixXd::Ones(1, 1);
    p.lambda = 1.0;
    const DebiasSolution sol = solve_sdp(p);
    write_diagnostics_csv(sol, p.lambda, tmp.file("diag.csv"));
    const std::string text = testutil::read_file(tmp.file("diag.csv"));
    REQUIRE(text.rfind("# lambda=1\n# converged=true\niteration,objective,distortion,residual_bias\n0,", 0) == 0);
    const std::size_t rows = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
    REQUIRE(rows == sol.trace.size() + 3);
}

TEST_CASE("debias_report identity and oracle", "[debias]") {
    const Embedding before = testutil::random_embedding(30, 5, 71);
    const std::vector<std::pair<std::string, std::string>> pairs{{"w0", "w1"}};
    std::vector<std::string> seeds{"w2", "w3", "w4", "ghost"};
    std::vector<std::string> background{"w5", "w6", "w7", "w8"};

    SECTION("after == before gives equal variances and full diagonal") {
        const DebiasReport rep = debias_report(before, before, pairs, seeds, background);
        REQUIRE(rep.entries.size() == 1);
        const DebiasReportEntry& e = rep.entries[0];
        REQUIRE(e.seeds.n_requested == 4);
        REQUIRE(e.seeds.n_covered == 3);  // ghost skipped
        REQUIRE(e.seeds.variance_before == e.seeds.variance_after);
        REQUIRE(e.background.variance_before == e.background.variance_after);
        for (const PairedProjection& p : e.pairs) {
            REQUIRE(p.proj_a == p.proj_b);
            REQUIRE(p.proj_a >= 0.0);  // table stores absolute projections
        }
    }

    SECTION("variances match the bias_metrics oracle") {
        std::mt19937 rng(72);
        const Eigen::MatrixXd t = 0.5 * identity(5) + 0.1 * testutil::random_psd(5, rng);
        const Embedding after = apply_transform(before, t);
        const DebiasReport rep = debias_report(before, after, pairs, seeds, background);

        const Direction d_before = bias_direction(before, "w0", "w1");
        const Direction d_after = bias_direction(after, "w0", "w1");
        const std::vector<std::string> covered{"w2", "w3", "w4"};
        const double want_before =
            projection_variance(project_words(before, covered, d_before));
        const double want_after = projection_variance(project_words(after, covered, d_after));
        REQUIRE(rep.entries[0].seeds.variance_before == want_before);
        REQUIRE(rep.entries[0].seeds.variance_after == want_after);
    }

    SECTION("fewer than two covered words is an error") {
        REQUIRE_THROWS_AS(debias_report(before, before, pairs, {"w2"}, background),
                          InvalidArgument);
    }

    SECTION("report csv writers") {
        TempDir tmp;
        const DebiasReport rep = debias_report(before, before, pairs, seeds, background);
        write_report_csv(rep, tmp.file("report.csv"));
        const std::string text = testutil::read_file(tmp.file("report.csv"));
        REQUIRE(text.rfind("pos_anchor,neg_anchor,group,n_requested,n_covered,"
                           "variance_before,variance_after\nw0,w1,seeds,4,3,", 0) == 0);
        write_report_pairs_csv(rep, tmp.file("pairs.csv"));
        const std::string pairs_text = testutil::read_file(tmp.file("pairs.csv"));
        REQUIRE(pairs_text.rfind("pos_anchor,neg_anchor,word,abs_projection_before,"
                                 "abs_projection_after\nw0,w1,w2,", 0) == 0);
    }
}

TEST_CASE("end-to-end debias reduces seed bias on a random embedding", "[debias][solver]") {
    const Embedding emb = testutil::random_embedding(60, 8, 99);
    const std::vector<std::pair<std::string, std::string>> pairs{{"w0", "w1"}};
    const std::vector<std::string> seeds{"w2", "w3", "w4", "w5"};
    const DebiasProblem problem = build_problem(emb, seeds, pairs, std::nullopt, 0.2);
    const DebiasSolution sol = solve_sdp(problem);
    REQUIRE(sol.converged);
    const double initial_residual = (problem.P * problem.B.transpose()).norm();
    REQUIRE(sol.residual_bias < initial_residual);
    const Embedding after = apply_transform(emb, sol.T);
    REQUIRE(after.size() == emb.size());
}
