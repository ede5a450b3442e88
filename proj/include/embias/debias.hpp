#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "embias/bias_metrics.hpp"
#include "embias/embedding.hpp"
#include "embias/errors.hpp"
#include "embias/log.hpp"
#include "embias/text.hpp"

namespace embias {

/// Eq. 2 data: rows of A are background vectors whose pairwise geometry must
/// be preserved, rows of P are seed-word vectors, rows of B are bias
/// direction vectors.
struct DebiasProblem {
    Eigen::MatrixXd A;
    Eigen::MatrixXd B;
    Eigen::MatrixXd P;
    double lambda = 0.2;
};

/// Thin SVD of A keeping only what Eq. 3 needs: sigma (length r, descending,
/// zero-padded past the rank) and the r x r right factor V.
struct SvdReduction {
    Eigen::VectorXd sigma;
    Eigen::MatrixXd V;
};

namespace detail {

inline SvdReduction reduce_via_gram(const Eigen::MatrixXd& A) {
    const Eigen::Index r = A.cols();
    const Eigen::MatrixXd gram = A.transpose() * A;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    if (es.info() != Eigen::Success) throw SolverError("eigendecomposition of A'A failed");
    // Eigenvalues come back ascending; Sigma must be descending.
    SvdReduction red;
    red.sigma.resize(r);
    red.V.resize(r, r);
    for (Eigen::Index i = 0; i < r; ++i) {
        const Eigen::Index src = r - 1 - i;
        red.sigma(i) = std::sqrt(std::max(0.0, es.eigenvalues()(src)));
        red.V.col(i) = es.eigenvectors().col(src);
    }
    return red;
}

}  // namespace detail

/// Reduces A to (Sigma, V) per Eq. 3. Large row counts take the Gram route
/// (eigendecomposition of the r x r matrix A'A) so U is never materialized.
inline SvdReduction reduce_via_svd(const Eigen::MatrixXd& A) {
    if (A.rows() < 1 || A.cols() < 1) throw InvalidArgument("A must be non-empty");
    constexpr Eigen::Index kGramRowThreshold = 4096;
    if (A.rows() > kGramRowThreshold) return detail::reduce_via_gram(A);

    Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    if (svd.info() != Eigen::Success) throw SolverError("SVD of A failed to converge");
    const Eigen::Index r = A.cols();
    SvdReduction red;
    red.sigma = Eigen::VectorXd::Zero(r);
    red.sigma.head(svd.singularValues().size()) = svd.singularValues();
    red.V = svd.matrixV();
    return red;
}

struct SolverOptions {
    std::size_t max_iters = 5000;
    double tol = 1e-8;  // relative objective decrease
    std::optional<Eigen::MatrixXd> x0;
};

struct IterationRecord {
    std::size_t iteration = 0;
    double objective = 0.0;
    double distortion = 0.0;     // ||Sigma V'(X-I)V Sigma||_F
    double residual_bias = 0.0;  // ||P X B'||_F
    double min_eigenvalue = 0.0;
};

struct DebiasSolution {
    Eigen::MatrixXd X;
    Eigen::MatrixXd T;
    std::vector<double> objective_trace;
    std::vector<IterationRecord> trace;
    double residual_bias = 0.0;
    double distortion = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

namespace detail {

inline Eigen::MatrixXd project_psd(const Eigen::MatrixXd& m) {
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) throw SolverError("PSD projection eigensolve failed");
    const Eigen::VectorXd clipped = es.eigenvalues().cwiseMax(0.0);
    Eigen::MatrixXd out =
        es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (out + out.transpose());
}

inline double min_eigenvalue(const Eigen::MatrixXd& sym) {
    return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sym).eigenvalues().minCoeff();
}

inline double max_eigenvalue_psd(const Eigen::MatrixXd& sym) {
    return std::max(0.0,
                    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sym).eigenvalues().maxCoeff());
}

struct ObjectiveValue {
    double f = 0.0;
    double distortion = 0.0;
    double residual_bias = 0.0;
};

/// Precomputed Eq. 4 evaluation context. G = V Sigma^2 V'.
class SdpObjective {
public:
    SdpObjective(const DebiasProblem& problem, const SvdReduction& red)
        : P_(problem.P),
          B_(problem.B),
          lambda_(problem.lambda),
          C_(red.V * red.sigma.asDiagonal()),
          G_(C_ * C_.transpose()) {}

    ObjectiveValue evaluate(const Eigen::MatrixXd& x) const {
        const Eigen::MatrixXd w = x - Eigen::MatrixXd::Identity(x.rows(), x.cols());
        const double distortion = (C_.transpose() * w * C_).norm();
        const double residual = (P_ * x * B_.transpose()).norm();
        return {distortion * distortion + lambda_ * residual * residual, distortion, residual};
    }

    Eigen::MatrixXd gradient(const Eigen::MatrixXd& x) const {
        const Eigen::MatrixXd w = x - Eigen::MatrixXd::Identity(x.rows(), x.cols());
        Eigen::MatrixXd g = 2.0 * (G_ * w * G_);
        g.noalias() += 2.0 * lambda_ * (P_.transpose() * (P_ * x * B_.transpose()) * B_);
        return 0.5 * (g + g.transpose());
    }

    /// Lipschitz bound on the gradient: 2 sigma1(A)^4 + 2 lambda
    /// lambda_max(P'P) lambda_max(B'B).
    double lipschitz() const {
        const double g_norm = max_eigenvalue_psd(G_);
        const double p_norm = max_eigenvalue_psd(P_.transpose() * P_);
        const double b_norm = max_eigenvalue_psd(B_.transpose() * B_);
        return 2.0 * g_norm * g_norm + 2.0 * lambda_ * p_norm * b_norm;
    }

private:
    const Eigen::MatrixXd& P_;
    const Eigen::MatrixXd& B_;
    double lambda_;
    Eigen::MatrixXd C_;
    Eigen::MatrixXd G_;
};

inline void validate_problem(const DebiasProblem& p) {
    if (p.A.rows() < 1) throw InvalidArgument("A must have at least one row");
    if (p.P.rows() < 1) throw InvalidArgument("P must have at least one row");
    if (p.B.rows() < 1) throw InvalidArgument("B must have at least one row");
    const Eigen::Index r = p.A.cols();
    if (r < 1) throw InvalidArgument("problem dimension must be positive");
    if (p.P.cols() != r || p.B.cols() != r)
        throw InvalidArgument("A, P, B must share a column count");
    if (!(p.lambda >= 0.0) || !std::isfinite(p.lambda))
        throw InvalidArgument("lambda must be finite and non-negative");
    if (!p.A.allFinite() || !p.P.allFinite() || !p.B.allFinite())
        throw InvalidArgument("problem matrices contain non-finite values");
}

}  // namespace detail

/// Symmetric PSD square root: X = Q L Q' maps to T = Q sqrt(L) Q'.
/// Eigenvalues in [-1e-6, 0) are clipped to zero; anything lower is rejected.
inline Eigen::MatrixXd factor_transform(const Eigen::MatrixXd& x) {
    if (x.rows() != x.cols() || x.rows() < 1) throw InvalidArgument("X must be square");
    const double scale = std::max(1.0, x.norm());
    if ((x - x.transpose()).norm() > 1e-8 * scale)
        throw InvalidArgument("X is not symmetric within tolerance");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (x + x.transpose()));
    if (es.info() != Eigen::Success) throw SolverError("eigendecomposition of X failed");
    if (es.eigenvalues().minCoeff() < -1e-6)
        throw InvalidArgument("X has eigenvalue " + format_double(es.eigenvalues().minCoeff()) +
                              "; not positive semidefinite");
    const Eigen::VectorXd roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

/// Projected gradient descent with Armijo backtracking on Eq. 4. Accepts
/// lambda = 0 (pure distance preservation). Convergence means the relative
/// objective decrease fell below opts.tol; exhausting the backtracking line
/// search also counts (the iterate is numerically stationary).
inline DebiasSolution solve_sdp(const DebiasProblem& problem, const SolverOptions& opts = {}) {
    detail::validate_problem(problem);
    if (opts.max_iters < 1) throw InvalidArgument("max_iters must be at least 1");
    if (!(opts.tol > 0.0)) throw InvalidArgument("tol must be positive");
    const Eigen::Index r = problem.A.cols();

    const SvdReduction red = reduce_via_svd(problem.A);
    const detail::SdpObjective objective(problem, red);

    Eigen::MatrixXd x;
    if (opts.x0) {
        if (opts.x0->rows() != r || opts.x0->cols() != r)
            throw InvalidArgument("x0 must be r x r");
        x = detail::project_psd(*opts.x0);
    } else {
        x = Eigen::MatrixXd::Identity(r, r);
    }

    const double lipschitz = objective.lipschitz();
    const double eta_init = lipschitz > 0.0 ? 1.0 / lipschitz : 1.0;
    constexpr double kArmijoC1 = 1e-4;
    constexpr int kMaxBacktracks = 60;

    detail::ObjectiveValue current = objective.evaluate(x);
    if (!std::isfinite(current.f)) throw SolverError("objective is non-finite at the start");

    DebiasSolution sol;
    sol.objective_trace.push_back(current.f);
    sol.trace.push_back({0, current.f, current.distortion, current.residual_bias,
                         detail::min_eigenvalue(x)});

    for (std::size_t iter = 1; iter <= opts.max_iters; ++iter) {
        const Eigen::MatrixXd grad = objective.gradient(x);
        double eta = eta_init;
        bool accepted = false;
        bool saw_finite = false;
        Eigen::MatrixXd candidate;
        detail::ObjectiveValue cand_value;
        for (int bt = 0; bt < kMaxBacktracks; ++bt) {
            candidate = detail::project_psd(x - eta * grad);
            cand_value = objective.evaluate(candidate);
            if (std::isfinite(cand_value.f)) {
                saw_finite = true;
                const double step_sq = (candidate - x).squaredNorm();
                if (cand_value.f <= current.f - (kArmijoC1 / eta) * step_sq) {
                    accepted = true;
                    break;
                }
            }
            eta *= 0.5;
        }
        if (!accepted) {
            if (!saw_finite) throw SolverError("objective became non-finite during line search");
            sol.converged = true;  // no descent step exists at line-search resolution
            break;
        }

        const double decrease = current.f - cand_value.f;
        x = std::move(candidate);
        current = cand_value;
        sol.iterations = iter;
        sol.objective_trace.push_back(current.f);
        sol.trace.push_back({iter, current.f, current.distortion, current.residual_bias,
                             detail::min_eigenvalue(x)});
        if (decrease < opts.tol * std::max(1.0, std::abs(sol.objective_trace[iter - 1]))) {
            sol.converged = true;
            break;
        }
    }

    sol.X = 0.5 * (x + x.transpose());
    sol.T = factor_transform(sol.X);
    sol.distortion = current.distortion;
    sol.residual_bias = current.residual_bias;
    return sol;
}

/// Assembles Eq. 2 inputs from an embedding. B rows are raw anchor
/// differences v_pos - v_neg (set normalize_b to unit-scale them); P rows are
/// the seed vectors; A follows the background policy: the explicit list when
/// given, otherwise every vector except seeds and anchors.
inline DebiasProblem build_problem(
    const Embedding& emb, const std::vector<std::string>& seed_words,
    const std::vector<std::pair<std::string, std::string>>& direction_pairs,
    const std::optional<std::vector<std::string>>& background, double lambda,
    bool normalize_b = false) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be positive");
    if (seed_words.empty()) throw InvalidArgument("seed word list is empty");
    if (direction_pairs.empty()) throw InvalidArgument("at least one anchor pair is required");

    const Eigen::Index r = emb.dim();
    DebiasProblem problem;
    problem.lambda = lambda;

    problem.B.resize(static_cast<Eigen::Index>(direction_pairs.size()), r);
    for (std::size_t i = 0; i < direction_pairs.size(); ++i) {
        const auto& [pos, neg] = direction_pairs[i];
        Eigen::VectorXd diff = emb.vector(pos) - emb.vector(neg);
        if (normalize_b) {
            const double norm = diff.norm();
            if (!(norm > 0.0))
                throw InvalidArgument("anchors '" + pos + "' and '" + neg +
                                      "' have identical vectors");
            diff /= norm;
        }
        problem.B.row(static_cast<Eigen::Index>(i)) = diff;
    }

    problem.P.resize(static_cast<Eigen::Index>(seed_words.size()), r);
    for (std::size_t i = 0; i < seed_words.size(); ++i)
        problem.P.row(static_cast<Eigen::Index>(i)) =
            emb.vectors().row(static_cast<Eigen::Index>(emb.require(seed_words[i])));

    if (background) {
        if (background->empty()) throw InvalidArgument("explicit background list is empty");
        problem.A.resize(static_cast<Eigen::Index>(background->size()), r);
        for (std::size_t i = 0; i < background->size(); ++i)
            problem.A.row(static_cast<Eigen::Index>(i)) =
                emb.vectors().row(static_cast<Eigen::Index>(emb.require((*background)[i])));
    } else {
        std::unordered_set<std::string> excluded(seed_words.begin(), seed_words.end());
        for (const auto& [pos, neg] : direction_pairs) {
            emb.require(pos);
            emb.require(neg);
            excluded.insert(pos);
            excluded.insert(neg);
        }
        std::vector<Eigen::Index> keep;
        keep.reserve(emb.size());
        for (std::size_t i = 0; i < emb.size(); ++i)
            if (excluded.count(emb.token(i)) == 0) keep.push_back(static_cast<Eigen::Index>(i));
        if (keep.empty())
            throw InvalidArgument("background is empty after excluding seeds and anchors");
        problem.A.resize(static_cast<Eigen::Index>(keep.size()), r);
        for (std::size_t i = 0; i < keep.size(); ++i)
            problem.A.row(static_cast<Eigen::Index>(i)) = emb.vectors().row(keep[i]);
    }
    if (problem.A.rows() < r)
        log_warn("background has fewer rows (" + std::to_string(problem.A.rows()) +
                 ") than the embedding dimension (" + std::to_string(r) +
                 "); the distance term is rank-deficient");
    return problem;
}

/// Right-multiplies every vector by T. The result is unnormalized.
inline Embedding apply_transform(const Embedding& emb, const Eigen::MatrixXd& t) {
    if (t.rows() != emb.dim() || t.cols() != emb.dim())
        throw InvalidArgument("transform must be " + std::to_string(emb.dim()) + " x " +
                              std::to_string(emb.dim()));
    return Embedding(emb.vocab(), emb.vectors() * t, false);
}

inline void write_transform(const Eigen::MatrixXd& t, const std::filesystem::path& path) {
    if (t.rows() != t.cols() || t.rows() < 1) throw InvalidArgument("transform must be square");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "debias-transform v1\n" << t.rows() << '\n';
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
        for (Eigen::Index j = 0; j < t.cols(); ++j) {
            if (j > 0) os << ' ';
            os << format_double(t(i, j));
        }
        os << '\n';
    }
    os.flush();
    if (!os) throw IoError("write failure on: " + path.string());
}

inline Eigen::MatrixXd load_transform(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open transform file: " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<std::string_view> lines;
    for_each_line(data, [&](std::string_view line, std::size_t) { lines.push_back(line); });
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    if (lines.size() < 2 || trim(lines[0]) != "debias-transform v1")
        throw ParseError("not a debias-transform v1 file: " + path.string());
    const std::int64_t r = parse_int(trim(lines[1]), "transform dimension");
    if (r < 1) throw ParseError("transform dimension must be positive");
    if (lines.size() != static_cast<std::size_t>(r) + 2)
        throw ParseError("expected " + std::to_string(r) + " matrix rows, got " +
                         std::to_string(lines.size() - 2));
    Eigen::MatrixXd t(r, r);
    for (std::int64_t i = 0; i < r; ++i) {
        const auto fields = split_ws(lines[static_cast<std::size_t>(i) + 2]);
        if (fields.size() != static_cast<std::size_t>(r))
            throw ParseError("row " + std::to_string(i + 1) + ": expected " + std::to_string(r) +
                             " values, got " + std::to_string(fields.size()));
        for (std::int64_t j = 0; j < r; ++j)
            t(i, j) = parse_double(fields[static_cast<std::size_t>(j)], "transform value");
    }
    return t;
}

inline void write_diagnostics_csv(const DebiasSolution& sol, double lambda,
                                  const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "# lambda=" << format_double(lambda) << '\n';
    os << "# converged=" << (sol.converged ? "true" : "false") << '\n';
    os << "iteration,objective,distortion,residual_bias\n";
    for (const IterationRecord& rec : sol.trace)
        os << rec.iteration << ',' << format_double(rec.objective) << ','
           << format_double(rec.distortion) << ',' << format_double(rec.residual_bias) << '\n';
    os.flush();
    if (!os) throw IoError("write failure on: " + path.string());
}

struct ReportGroup {
    double variance_before = 0.0;
    double variance_after = 0.0;
    std::size_t n_requested = 0;
    std::size_t n_covered = 0;
};

struct DebiasReportEntry {
    std::string pos_anchor;
    std::string neg_anchor;
    ReportGroup seeds;
    ReportGroup background;
    std::vector<PairedProjection> pairs;  // seed word, |projection| before, |projection| after
};

struct DebiasReport {
    std::vector<DebiasReportEntry> entries;
};

namespace detail {

inline ReportGroup report_group(const Embedding& before, const Embedding& after,
                                const std::vector<std::string>& words, const Direction& dir_before,
                                const Direction& dir_after,
                                std::vector<PairedProjection>* abs_pairs) {
    const CrossReport cross = cross_embedding_report(before, after, words, dir_before, dir_after);
    if (cross.records.size() < 2)
        throw InvalidArgument("need at least 2 covered words per report group, got " +
                              std::to_string(cross.records.size()));
    std::vector<ProjectionRecord> proj_before;
    std::vector<ProjectionRecord> proj_after;
    proj_before.reserve(cross.records.size());
    proj_after.reserve(cross.records.size());
    for (const PairedProjection& rec : cross.records) {
        proj_before.push_back({rec.word, rec.proj_a});
        proj_after.push_back({rec.word, rec.proj_b});
        if (abs_pairs) abs_pairs->push_back({rec.word, std::abs(rec.proj_a), std::abs(rec.proj_b)});
    }
    ReportGroup group;
    group.variance_before = projection_variance(proj_before);
    group.variance_after = projection_variance(proj_after);
    group.n_requested = cross.n_requested;
    group.n_covered = cross.records.size();
    return group;
}

}  // namespace detail

/// Before/after validation report: per anchor pair, the projection variance
/// of the test seeds and of the background sample, plus the paired
/// |projection| table for the seeds. Directions are computed independently
/// in each embedding from the same anchors; OOV words are skipped.
inline DebiasReport debias_report(const Embedding& before, const Embedding& after,
                                  const std::vector<std::pair<std::string, std::string>>& dir_pairs,
                                  const std::vector<std::string>& seed_test_words,
                                  const std::vector<std::string>& background_sample) {
    if (dir_pairs.empty()) throw InvalidArgument("at least one anchor pair is required");
    DebiasReport report;
    for (const auto& [pos, neg] : dir_pairs) {
        const Direction dir_before = bias_direction(before, pos, neg);
        const Direction dir_after = bias_direction(after, pos, neg);
        DebiasReportEntry entry;
        entry.pos_anchor = pos;
        entry.neg_anchor = neg;
        entry.seeds = detail::report_group(before, after, seed_test_words, dir_before, dir_after,
                                           &entry.pairs);
        entry.background = detail::report_group(before, after, background_sample, dir_before,
                                                dir_after, nullptr);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

inline void write_report_csv(const DebiasReport& report, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "pos_anchor,neg_anchor,group,n_requested,n_covered,variance_before,variance_after\n";
    for (const DebiasReportEntry& e : report.entries) {
        os << csv::escape(e.pos_anchor) << ',' << csv::escape(e.neg_anchor) << ",seeds,"
           << e.seeds.n_requested << ',' << e.seeds.n_covered << ','
           << format_double(e.seeds.variance_before) << ','
           << format_double(e.seeds.variance_after) << '\n';
        os << csv::escape(e.pos_anchor) << ',' << csv::escape(e.neg_anchor) << ",background,"
           << e.background.n_requested << ',' << e.background.n_covered << ','
           << format_double(e.background.variance_before) << ','
           << format_double(e.background.variance_after) << '\n';
    }
    os.flush();
    if (!os) throw IoError("write failure on: " + path.string());
}

inline void write_report_pairs_csv(const DebiasReport& report, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "pos_anchor,neg_anchor,word,abs_projection_before,abs_projection_after\n";
    for (const DebiasReportEntry& e : report.entries)
        for (const PairedProjection& p : e.pairs)
            os << csv::escape(e.pos_anchor) << ',' << csv::escape(e.neg_anchor) << ','
               << csv::escape(p.word) << ',' << format_double(p.proj_a) << ','
               << format_double(p.proj_b) << '\n';
    os.flush();
    if (!os) throw IoError("write failure on: " + path.string());
}

}  // namespace embias
