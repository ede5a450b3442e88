#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "embias/csv.hpp"
#include "embias/embedding.hpp"
#include "embias/errors.hpp"
#include "embias/text.hpp"

namespace embias {

/// Unit vector pointing from the negative anchor's vector toward the
/// positive anchor's.
struct Direction {
    Eigen::VectorXd axis;
    std::string pos_anchor;
    std::string neg_anchor;
};

struct ProjectionRecord {
    std::string word;
    double projection = 0.0;
};

enum class OnOov { skip, error };

inline Direction bias_direction(const Embedding& emb, std::string_view pos, std::string_view neg) {
    const Eigen::VectorXd v_pos = emb.vector(pos);
    const Eigen::VectorXd v_neg = emb.vector(neg);
    Eigen::VectorXd diff = v_pos - v_neg;
    const double norm = diff.norm();
    if (!(norm > 0.0))
        throw InvalidArgument("anchors '" + std::string(pos) + "' and '" + std::string(neg) +
                              "' have identical vectors; direction is undefined");
    diff /= norm;
    return Direction{std::move(diff), std::string(pos), std::string(neg)};
}

/// Signed projection of each word vector onto the direction axis, in input
/// order. `normalize` projects unit-scaled copies of the word vectors
/// instead of the raw rows.
inline std::vector<ProjectionRecord> project_words(const Embedding& emb,
                                                   const std::vector<std::string>& words,
                                                   const Direction& dir,
                                                   OnOov on_oov = OnOov::skip,
                                                   bool normalize = false) {
    if (words.empty()) throw InvalidArgument("word list is empty");
    if (dir.axis.size() != emb.dim())
        throw InvalidArgument("direction dimension does not match embedding");
    std::vector<ProjectionRecord> records;
    records.reserve(words.size());
    for (const std::string& word : words) {
        const auto idx = emb.index_of(word);
        if (!idx) {
            if (on_oov == OnOov::error) throw OovError(word);
            continue;
        }
        Eigen::VectorXd v = emb.vectors().row(static_cast<Eigen::Index>(*idx));
        if (normalize) {
            const double norm = v.norm();
            if (!(norm > 0.0))
                throw InvalidArgument("cannot normalize zero-norm vector for '" + word + "'");
            v /= norm;
        }
        records.push_back({word, v.dot(dir.axis)});
    }
    return records;
}

/// Population variance of the projection scalars.
inline double projection_variance(const std::vector<ProjectionRecord>& records) {
    if (records.size() < 2)
        throw InvalidArgument("variance requires at least 2 records, got " +
                              std::to_string(records.size()));
    double mean = 0.0;
    for (const auto& r : records) mean += r.projection;
    mean /= static_cast<double>(records.size());
    double acc = 0.0;
    for (const auto& r : records) {
        const double d = r.projection - mean;
        acc += d * d;
    }
    return acc / static_cast<double>(records.size());
}

struct PairedProjection {
    std::string word;
    double proj_a = 0.0;
    double proj_b = 0.0;
};

/// Per-word projections in two embeddings; words missing from either
/// vocabulary are skipped.
struct CrossReport {
    std::vector<PairedProjection> records;
    std::size_t n_requested = 0;

    double coverage() const {
        return n_requested == 0 ? 0.0
                                : static_cast<double>(records.size()) /
                                      static_cast<double>(n_requested);
    }
};

inline CrossReport cross_embedding_report(const Embedding& emb_a, const Embedding& emb_b,
                                          const std::vector<std::string>& words,
                                          const Direction& dir_a, const Direction& dir_b) {
    if (words.empty()) throw InvalidArgument("word list is empty");
    CrossReport report;
    report.n_requested = words.size();
    for (const std::string& word : words) {
        const auto ia = emb_a.index_of(word);
        const auto ib = emb_b.index_of(word);
        if (!ia || !ib) continue;
        const Eigen::VectorXd va = emb_a.vectors().row(static_cast<Eigen::Index>(*ia));
        const Eigen::VectorXd vb = emb_b.vectors().row(static_cast<Eigen::Index>(*ib));
        report.records.push_back({word, va.dot(dir_a.axis), vb.dot(dir_b.axis)});
    }
    return report;
}

inline void write_projection_csv(const std::vector<ProjectionRecord>& records,
                                 const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "word,projection\n";
    for (const auto& r : records)
        os << csv::escape(r.word) << ',' << format_double(r.projection) << '\n';
    os.flush();
    if (!os) throw IoError("write failure on: " + path.string());
}

inline void write_cross_report_csv(const CrossReport& report, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "word,projA,projB\n";
    for (const auto& r : report.records)
        os << csv::escape(r.word) << ',' << format_double(r.proj_a) << ','
           << format_double(r.proj_b) << '\n';
    os.flush();
    if (!os) throw IoError("write failure on: " + path.string());
}

}  // namespace embias
