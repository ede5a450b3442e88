#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "embias/analogy.hpp"
#include "embias/csv.hpp"
#include "embias/embedding.hpp"
#include "embias/errors.hpp"
#include "embias/text.hpp"

namespace embias {

struct SimilarityItem {
    std::string word_a;
    std::string word_b;
    double human_score = 0.0;
};

struct SimilarityDataset {
    std::string name;
    std::vector<SimilarityItem> items;
};

struct BenchmarkResult {
    std::string name;
    double metric = 0.0;    // Spearman rho or accuracy
    double coverage = 0.0;  // fraction of items with all tokens in vocabulary
};

/// Loads "word1 word2 score" lines (tab or space separated). Blank lines and
/// '#' comments are skipped; anything else malformed is an error naming the
/// line.
inline SimilarityDataset load_similarity_dataset(const std::filesystem::path& path,
                                                 std::string_view name) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open similarity dataset: " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    SimilarityDataset ds;
    ds.name = std::string(name);
    for_each_line(data, [&](std::string_view line, std::size_t line_no) {
        const std::string_view stripped = trim(line);
        if (stripped.empty() || stripped.front() == '#') return;
        const auto fields = split_ws(stripped);
        if (fields.size() != 3)
            throw ParseError("line " + std::to_string(line_no) +
                             ": expected 'word1 word2 score', got " +
                             std::to_string(fields.size()) + " fields");
        const double score = parse_double(fields[2], "similarity score");
        if (!std::isfinite(score))
            throw ParseError("line " + std::to_string(line_no) + ": non-finite score");
        ds.items.push_back({std::string(fields[0]), std::string(fields[1]), score});
    });
    if (ds.items.empty()) throw ParseError("similarity dataset is empty: " + path.string());
    return ds;
}

namespace detail {

/// Average ranks (1-based); tied values share the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const auto n = static_cast<double>(x.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0))
        throw InvalidArgument("correlation undefined: a score list is constant");
    return sxy / std::sqrt(sxx * syy);
}

inline double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (!(na > 0.0) || !(nb > 0.0)) return 0.0;
    return a.dot(b) / (na * nb);
}

}  // namespace detail

/// Spearman rank correlation with average-rank tie handling.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw InvalidArgument("score lists differ in length");
    if (x.size() < 2) throw InvalidArgument("correlation needs at least 2 items");
    return detail::pearson(detail::average_ranks(x), detail::average_ranks(y));
}

/// Spearman correlation between human scores and embedding cosines over
/// in-vocabulary pairs; OOV pairs are skipped and surfaced via coverage.
inline BenchmarkResult evaluate_similarity(const Embedding& emb, const SimilarityDataset& ds) {
    if (ds.items.empty()) throw InvalidArgument("similarity dataset is empty");
    std::vector<double> human;
    std::vector<double> cosines;
    for (const SimilarityItem& item : ds.items) {
        const auto ia = emb.index_of(item.word_a);
        const auto ib = emb.index_of(item.word_b);
        if (!ia || !ib) continue;
        human.push_back(item.human_score);
        cosines.push_back(detail::cosine(emb.vectors().row(static_cast<Eigen::Index>(*ia)),
                                         emb.vectors().row(static_cast<Eigen::Index>(*ib))));
    }
    if (human.size() < 2)
        throw InvalidArgument("dataset '" + ds.name + "' has " + std::to_string(human.size()) +
                              " in-vocabulary pairs; need at least 2");
    BenchmarkResult result;
    result.name = ds.name;
    result.metric = spearman(human, cosines);
    result.coverage = static_cast<double>(human.size()) / static_cast<double>(ds.items.size());
    return result;
}

struct AnalogyQuestion {
    std::string a;
    std::string b;
    std::string c;
    std::string expected;
};

struct AnalogyDataset {
    std::string name;
    std::vector<AnalogyQuestion> questions;
};

/// Loads "a b c expected" lines; ':'-prefixed lines are section comments.
inline AnalogyDataset load_analogy_dataset(const std::filesystem::path& path,
                                           std::string_view name) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open analogy dataset: " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    AnalogyDataset ds;
    ds.name = std::string(name);
    for_each_line(data, [&](std::string_view line, std::size_t line_no) {
        const std::string_view stripped = trim(line);
        if (stripped.empty() || stripped.front() == ':') return;
        const auto fields = split_ws(stripped);
        if (fields.size() != 4)
            throw ParseError("line " + std::to_string(line_no) +
                             ": expected 'a b c expected', got " + std::to_string(fields.size()) +
                             " fields");
        ds.questions.push_back({std::string(fields[0]), std::string(fields[1]),
                                std::string(fields[2]), std::string(fields[3])});
    });
    if (ds.questions.empty()) throw ParseError("analogy dataset is empty: " + path.string());
    return ds;
}

/// Writes labeled benchmark rows; the label column distinguishes embeddings
/// when the same datasets are evaluated against several of them.
inline void write_benchmark_csv(
    const std::vector<std::pair<std::string, BenchmarkResult>>& rows,
    const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "embedding,dataset,metric,coverage\n";
    for (const auto& [label, result] : rows)
        os << csv::escape(label) << ',' << csv::escape(result.name) << ','
           << format_double(result.metric) << ',' << format_double(result.coverage) << '\n';
    os.flush();
    if (!os) throw IoError("write failure on: " + path.string());
}

/// 3CosAdd accuracy. A question is attempted when a, b, c are in vocabulary;
/// an OOV expected word scores the attempt as wrong. Coverage counts
/// questions with all four tokens present.
inline BenchmarkResult evaluate_analogy(const Embedding& emb, const AnalogyDataset& ds) {
    if (ds.questions.empty()) throw InvalidArgument("analogy dataset is empty");
    std::size_t attempted = 0;
    std::size_t correct = 0;
    std::size_t fully_covered = 0;
    for (const AnalogyQuestion& q : ds.questions) {
        if (!emb.contains(q.a) || !emb.contains(q.b) || !emb.contains(q.c)) continue;
        if (emb.contains(q.expected)) ++fully_covered;
        ++attempted;
        if (solve_analogy(emb, q.a, q.b, q.c) == q.expected) ++correct;
    }
    if (attempted == 0)
        throw InvalidArgument("dataset '" + ds.name + "' has no in-vocabulary questions");
    BenchmarkResult result;
    result.name = ds.name;
    result.metric = static_cast<double>(correct) / static_cast<double>(attempted);
    result.coverage =
        static_cast<double>(fully_covered) / static_cast<double>(ds.questions.size());
    return result;
}

}  // namespace embias
