#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "embias/bias_metrics.hpp"
#include "embias/csv.hpp"
#include "embias/embedding.hpp"
#include "embias/errors.hpp"
#include "embias/text.hpp"

namespace embias {

struct AnalogyPair {
    std::string word_a;
    std::string word_b;
    double score = 0.0;          // S_d value, in [-1, 1]
    double pair_distance = 0.0;  // ||w_a - w_b||_2
};

namespace detail {

inline Eigen::VectorXd scoring_vector(const Embedding& emb, std::size_t index, bool normalize) {
    Eigen::VectorXd v = emb.vectors().row(static_cast<Eigen::Index>(index));
    if (normalize) {
        const double norm = v.norm();
        if (!(norm > 0.0))
            throw InvalidArgument("cannot normalize zero-norm vector for '" + emb.token(index) +
                                  "'");
        v /= norm;
    }
    return v;
}

}  // namespace detail

/// Eq. 1 score for an ordered pair, or nullopt when the pair distance
/// exceeds delta. `normalize` scores unit-scaled copies of the word vectors
/// (the convention under which delta = 1 is meaningful).
inline std::optional<AnalogyPair> score_pair(const Embedding& emb, const Direction& dir,
                                             std::string_view a, std::string_view b, double delta,
                                             bool normalize = true) {
    if (!(delta > 0.0)) throw InvalidArgument("delta must be positive");
    if (a == b) throw InvalidArgument("analogy pair words must differ, got '" + std::string(a) +
                                      "' twice");
    const std::size_t ia = emb.require(a);
    const std::size_t ib = emb.require(b);
    const Eigen::VectorXd va = detail::scoring_vector(emb, ia, normalize);
    const Eigen::VectorXd vb = detail::scoring_vector(emb, ib, normalize);
    const Eigen::VectorXd diff = va - vb;
    const double dist = diff.norm();
    if (!(dist > 0.0))
        throw InvalidArgument("words '" + std::string(a) + "' and '" + std::string(b) +
                              "' have identical vectors");
    if (dist > delta) return std::nullopt;
    return AnalogyPair{std::string(a), std::string(b), diff.dot(dir.axis) / dist, dist};
}

/// All positively oriented pairs within the delta constraint, sorted by
/// descending score (ties by ascending candidate indices), before any dedup.
/// Pairs with identical vectors or score 0 (no orientation) are omitted.
inline std::vector<AnalogyPair> score_all_pairs(const Embedding& emb, const Direction& dir,
                                                double delta,
                                                const std::vector<std::string>& candidates,
                                                bool normalize = true) {
    if (!(delta > 0.0)) throw InvalidArgument("delta must be positive");
    if (candidates.size() < 2)
        throw InvalidArgument("need at least 2 candidate words, got " +
                              std::to_string(candidates.size()));

    std::vector<std::size_t> idx;
    idx.reserve(candidates.size());
    for (const auto& w : candidates) idx.push_back(emb.require(w));

    Eigen::MatrixXd rows(static_cast<Eigen::Index>(idx.size()), emb.dim());
    for (std::size_t i = 0; i < idx.size(); ++i)
        rows.row(static_cast<Eigen::Index>(i)) = detail::scoring_vector(emb, idx[i], normalize);

    struct Scored {
        double score;
        double dist;
        std::size_t a;  // candidate indices, a on the pos_anchor side
        std::size_t b;
    };
    std::vector<Scored> scored;
    for (std::size_t i = 0; i + 1 < idx.size(); ++i) {
        for (std::size_t j = i + 1; j < idx.size(); ++j) {
            const Eigen::VectorXd diff =
                rows.row(static_cast<Eigen::Index>(i)) - rows.row(static_cast<Eigen::Index>(j));
            const double dist = diff.norm();
            if (!(dist > 0.0) || dist > delta) continue;
            const double s = diff.dot(dir.axis) / dist;
            if (s > 0.0)
                scored.push_back({s, dist, i, j});
            else if (s < 0.0)
                scored.push_back({-s, dist, j, i});
        }
    }
    std::sort(scored.begin(), scored.end(), [](const Scored& x, const Scored& y) {
        if (x.score != y.score) return x.score > y.score;
        if (x.a != y.a) return x.a < y.a;
        return x.b < y.b;
    });
    std::vector<AnalogyPair> pairs;
    pairs.reserve(scored.size());
    for (const auto& s : scored)
        pairs.push_back({candidates[s.a], candidates[s.b], s.score, s.dist});
    return pairs;
}

/// Top analogies along the direction: enumerate within delta, sort by
/// descending score, then greedy dedup (a pair is dropped when either word
/// already appears in an emitted pair), truncated to top_k. Default
/// candidates are the first `max_candidates` vocabulary rows minus the
/// direction anchors.
inline std::vector<AnalogyPair> generate_analogies(
    const Embedding& emb, const Direction& dir, double delta = 1.0, std::size_t top_k = 1000,
    std::optional<std::vector<std::string>> candidates = std::nullopt, bool normalize = true,
    std::size_t max_candidates = 50000) {
    if (top_k < 1) throw InvalidArgument("top_k must be at least 1");
    std::vector<std::string> cand;
    if (candidates) {
        cand = std::move(*candidates);
    } else {
        const std::size_t n = std::min(emb.size(), max_candidates);
        cand.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::string& t = emb.token(i);
            if (t == dir.pos_anchor || t == dir.neg_anchor) continue;
            cand.push_back(t);
        }
    }
    const std::vector<AnalogyPair> pool = score_all_pairs(emb, dir, delta, cand, normalize);

    std::vector<AnalogyPair> kept;
    std::unordered_set<std::string> used;
    for (const AnalogyPair& p : pool) {
        if (kept.size() >= top_k) break;
        if (used.count(p.word_a) != 0 || used.count(p.word_b) != 0) continue;
        used.insert(p.word_a);
        used.insert(p.word_b);
        kept.push_back(p);
    }
    return kept;
}

inline void write_analogies_csv(const std::vector<AnalogyPair>& pairs,
                                const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "word_a,word_b,score,pair_distance\n";
    for (const auto& p : pairs)
        os << csv::escape(p.word_a) << ',' << csv::escape(p.word_b) << ','
           << format_double(p.score) << ',' << format_double(p.pair_distance) << '\n';
    os.flush();
    if (!os) throw IoError("write failure on: " + path.string());
}

inline std::vector<AnalogyPair> read_analogies_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open analogies file: " + path.string());
    csv::Reader reader(in);
    const auto header = reader.next_record();
    if (!header || *header != std::vector<std::string>{"word_a", "word_b", "score",
                                                       "pair_distance"})
        throw ParseError("bad analogies CSV header in " + path.string());
    std::vector<AnalogyPair> pairs;
    while (auto rec = reader.next_record()) {
        if (rec->size() != 4)
            throw ParseError("line " + std::to_string(reader.line()) + ": expected 4 fields");
        pairs.push_back({(*rec)[0], (*rec)[1], parse_double((*rec)[2], "score"),
                         parse_double((*rec)[3], "pair_distance")});
    }
    return pairs;
}

/// One exported he:she :: word_a:word_b rating task.
struct RatingTask {
    std::int64_t id = 0;
    std::string pos_anchor;
    std::string neg_anchor;
    std::string word_a;
    std::string word_b;
    double score = 0.0;
};

/// Writes pairs as crowd-rating tasks, ids numbered 1..n in pair order.
inline void export_rating_tasks(const std::vector<AnalogyPair>& pairs, std::string_view pos_anchor,
                                std::string_view neg_anchor, const std::filesystem::path& path) {
    if (pairs.empty()) throw InvalidArgument("no pairs to export");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "id,pos_anchor,neg_anchor,word_a,word_b,score\n";
    for (std::size_t i = 0; i < pairs.size(); ++i)
        os << (i + 1) << ',' << csv::escape(std::string(pos_anchor)) << ','
           << csv::escape(std::string(neg_anchor)) << ',' << csv::escape(pairs[i].word_a) << ','
           << csv::escape(pairs[i].word_b) << ',' << format_double(pairs[i].score) << '\n';
    os.flush();
    if (!os) throw IoError("write failure on: " + path.string());
}

inline std::vector<RatingTask> load_rating_tasks(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open rating-task file: " + path.string());
    csv::Reader reader(in);
    const auto header = reader.next_record();
    if (!header || *header != std::vector<std::string>{"id", "pos_anchor", "neg_anchor", "word_a",
                                                       "word_b", "score"})
        throw ParseError("bad rating-task CSV header in " + path.string());
    std::vector<RatingTask> tasks;
    std::set<std::int64_t> seen;
    while (auto rec = reader.next_record()) {
        if (rec->size() != 6)
            throw ParseError("line " + std::to_string(reader.line()) + ": expected 6 fields");
        RatingTask t;
        t.id = parse_int((*rec)[0], "task id");
        t.pos_anchor = (*rec)[1];
        t.neg_anchor = (*rec)[2];
        t.word_a = (*rec)[3];
        t.word_b = (*rec)[4];
        t.score = parse_double((*rec)[5], "score");
        if (!seen.insert(t.id).second)
            throw ParseError("duplicate task id " + std::to_string(t.id));
        tasks.push_back(std::move(t));
    }
    if (tasks.empty()) throw ParseError("rating-task file has no rows: " + path.string());
    return tasks;
}

struct RatingAggregate {
    RatingTask task;
    std::size_t n_raters = 0;
    std::size_t n_stereotype = 0;
    std::size_t n_nonsensical = 0;
};

struct RatingSummary {
    std::vector<RatingAggregate> aggregates;  // in task order
    std::size_t n_judgments = 0;
    double fraction_stereotype = 0.0;   // over individual judgments
    double fraction_nonsensical = 0.0;  // over individual judgments
};

namespace detail {

inline bool parse_bool01(std::string_view field, std::size_t line) {
    if (field == "0") return false;
    if (field == "1") return true;
    throw ParseError("line " + std::to_string(line) + ": boolean field must be 0 or 1, got '" +
                     std::string(field) + "'");
}

}  // namespace detail

/// Aggregates per-rater responses against the exported task list. Fractions
/// are taken over all individual judgments, not per-pair majorities.
inline RatingSummary aggregate_ratings(const std::vector<RatingTask>& tasks,
                                       const std::filesystem::path& responses_path) {
    if (tasks.empty()) throw InvalidArgument("task list is empty");
    std::ifstream in(responses_path, std::ios::binary);
    if (!in) throw IoError("cannot open responses file: " + responses_path.string());

    RatingSummary summary;
    summary.aggregates.reserve(tasks.size());
    std::map<std::int64_t, std::size_t> by_id;  // task id -> aggregate index
    for (const RatingTask& t : tasks) {
        by_id.emplace(t.id, summary.aggregates.size());
        summary.aggregates.push_back({t, 0, 0, 0});
    }

    csv::Reader reader(in);
    const auto header = reader.next_record();
    if (!header ||
        *header != std::vector<std::string>{"id", "rater_id", "is_stereotype", "is_nonsensical"})
        throw ParseError("bad rating-response CSV header in " + responses_path.string());
    std::set<std::pair<std::int64_t, std::string>> seen;
    std::size_t n_stereotype = 0;
    std::size_t n_nonsensical = 0;
    while (auto rec = reader.next_record()) {
        if (rec->size() != 4)
            throw ParseError("line " + std::to_string(reader.line()) + ": expected 4 fields");
        const std::int64_t id = parse_int((*rec)[0], "response pair id");
        const auto it = by_id.find(id);
        if (it == by_id.end())
            throw ParseError("line " + std::to_string(reader.line()) + ": unknown pair id " +
                             std::to_string(id));
        if (!seen.emplace(id, (*rec)[1]).second)
            throw ParseError("line " + std::to_string(reader.line()) +
                             ": duplicate response for pair " + std::to_string(id) +
                             " by rater '" + (*rec)[1] + "'");
        const bool stereotype = detail::parse_bool01((*rec)[2], reader.line());
        const bool nonsensical = detail::parse_bool01((*rec)[3], reader.line());
        RatingAggregate& agg = summary.aggregates[it->second];
        agg.n_raters += 1;
        agg.n_stereotype += stereotype ? 1 : 0;
        agg.n_nonsensical += nonsensical ? 1 : 0;
        summary.n_judgments += 1;
        n_stereotype += stereotype ? 1 : 0;
        n_nonsensical += nonsensical ? 1 : 0;
    }
    if (summary.n_judgments > 0) {
        summary.fraction_stereotype =
            static_cast<double>(n_stereotype) / static_cast<double>(summary.n_judgments);
        summary.fraction_nonsensical =
            static_cast<double>(n_nonsensical) / static_cast<double>(summary.n_judgments);
    }
    return summary;
}

/// Writes per-pair aggregates sorted by n_stereotype descending (ties by
/// ascending id), with the judgment-level fractions as comment lines.
inline void write_aggregate_csv(const RatingSummary& summary, const std::filesystem::path& path) {
    std::vector<const RatingAggregate*> order;
    order.reserve(summary.aggregates.size());
    for (const auto& a : summary.aggregates) order.push_back(&a);
    std::sort(order.begin(), order.end(), [](const RatingAggregate* x, const RatingAggregate* y) {
        if (x->n_stereotype != y->n_stereotype) return x->n_stereotype > y->n_stereotype;
        return x->task.id < y->task.id;
    });
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "# n_judgments=" << summary.n_judgments << '\n';
    os << "# fraction_stereotype=" << format_double(summary.fraction_stereotype) << '\n';
    os << "# fraction_nonsensical=" << format_double(summary.fraction_nonsensical) << '\n';
    os << "id,word_a,word_b,score,n_raters,n_stereotype,n_nonsensical\n";
    for (const RatingAggregate* a : order)
        os << a->task.id << ',' << csv::escape(a->task.word_a) << ',' << csv::escape(a->task.word_b)
           << ',' << format_double(a->task.score) << ',' << a->n_raters << ',' << a->n_stereotype
           << ',' << a->n_nonsensical << '\n';
    os.flush();
    if (!os) throw IoError("write failure on: " + path.string());
}

/// 3CosAdd analogy answer: argmax over the vocabulary minus the query words
/// of cosine(v, unit(b) - unit(a) + unit(c)), ties by ascending vocabulary
/// index.
inline std::string solve_analogy(const Embedding& emb, std::string_view a, std::string_view b,
                                 std::string_view c) {
    const Eigen::VectorXd va = detail::scoring_vector(emb, emb.require(a), true);
    const Eigen::VectorXd vb = detail::scoring_vector(emb, emb.require(b), true);
    const Eigen::VectorXd vc = detail::scoring_vector(emb, emb.require(c), true);
    const Eigen::VectorXd query = vb - va + vc;
    if (!(query.norm() > 0.0))
        throw InvalidArgument("degenerate analogy query: b - a + c is the zero vector");
    const std::unordered_set<std::string> exclude{std::string(a), std::string(b), std::string(c)};
    if (emb.size() <= exclude.size())
        throw InvalidArgument("vocabulary has no candidates beyond the query words");
    return nearest_neighbors(emb, query, 1, exclude).at(0).token;
}

}  // namespace embias
