#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "embias/errors.hpp"
#include "embias/log.hpp"
#include "embias/text.hpp"

namespace embias {

enum class EmbeddingFormat { word2vec_binary, word2vec_text, glove_text, auto_detect };

inline std::string_view format_name(EmbeddingFormat format) {
    switch (format) {
        case EmbeddingFormat::word2vec_binary: return "word2vec-binary";
        case EmbeddingFormat::word2vec_text: return "word2vec-text";
        case EmbeddingFormat::glove_text: return "glove-text";
        case EmbeddingFormat::auto_detect: return "auto";
    }
    return "unknown";
}

inline EmbeddingFormat parse_format(std::string_view name) {
    if (name == "word2vec-binary") return EmbeddingFormat::word2vec_binary;
    if (name == "word2vec-text") return EmbeddingFormat::word2vec_text;
    if (name == "glove-text") return EmbeddingFormat::glove_text;
    if (name == "auto") return EmbeddingFormat::auto_detect;
    throw InvalidArgument("unknown embedding format: '" + std::string(name) + "'");
}

namespace detail {

struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const noexcept {
        return std::hash<std::string_view>{}(s);
    }
};

using TokenIndex = std::unordered_map<std::string, std::size_t, StringHash, std::equal_to<>>;

}  // namespace detail

/// An ordered vocabulary plus one row vector per token. Rows are stored as
/// 64-bit reals regardless of the storage precision of the source file.
/// Immutable after construction; all queries are const and safe to call
/// concurrently.
class Embedding {
public:
    /// Validates the vocabulary/matrix pair: tokens must be unique, non-empty
    /// and whitespace-free, every entry finite, and row count equal to the
    /// vocabulary size. When `normalized` is set, each row must already have
    /// unit L2 norm (within 1e-4).
    Embedding(std::vector<std::string> vocab, Eigen::MatrixXd vectors, bool normalized = false)
        : vocab_(std::move(vocab)), vectors_(std::move(vectors)), normalized_(normalized) {
        if (static_cast<std::size_t>(vectors_.rows()) != vocab_.size())
            throw InvalidArgument("vocabulary size (" + std::to_string(vocab_.size()) +
                                  ") does not match matrix row count (" +
                                  std::to_string(vectors_.rows()) + ")");
        if (vectors_.cols() < 1)
            throw InvalidArgument("embedding dimension must be positive");
        index_.reserve(vocab_.size());
        for (std::size_t i = 0; i < vocab_.size(); ++i) {
            const std::string& token = vocab_[i];
            if (token.empty()) throw InvalidArgument("empty token at index " + std::to_string(i));
            for (char c : token)
                if (is_space(c))
                    throw InvalidArgument("token contains whitespace: '" + token + "'");
            if (!index_.emplace(token, i).second)
                throw InvalidArgument("duplicate token: '" + token + "'");
        }
        if (!vectors_.allFinite())
            throw InvalidArgument("embedding contains non-finite values");
        if (normalized_) {
            for (Eigen::Index i = 0; i < vectors_.rows(); ++i) {
                const double norm = vectors_.row(i).norm();
                if (std::abs(norm - 1.0) > 1e-4)
                    throw InvalidArgument("row for token '" + vocab_[i] +
                                          "' is not unit-norm but embedding is flagged normalized");
            }
        }
    }

    std::size_t size() const noexcept { return vocab_.size(); }
    Eigen::Index dim() const noexcept { return vectors_.cols(); }
    const std::vector<std::string>& vocab() const noexcept { return vocab_; }
    const Eigen::MatrixXd& vectors() const noexcept { return vectors_; }
    bool is_normalized() const noexcept { return normalized_; }

    bool contains(std::string_view token) const { return index_.find(token) != index_.end(); }

    std::optional<std::size_t> index_of(std::string_view token) const {
        const auto it = index_.find(token);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    /// Index of `token`, or throws OovError.
    std::size_t require(std::string_view token) const {
        const auto it = index_.find(token);
        if (it == index_.end()) throw OovError(std::string(token));
        return it->second;
    }

    const std::string& token(std::size_t index) const { return vocab_.at(index); }

    /// Exact stored row for `token`; case-sensitive lookup.
    Eigen::VectorXd vector(std::string_view token) const {
        return vectors_.row(static_cast<Eigen::Index>(require(token)));
    }

private:
    std::vector<std::string> vocab_;
    Eigen::MatrixXd vectors_;
    detail::TokenIndex index_;
    bool normalized_ = false;
};

namespace detail {

inline EmbeddingFormat detect_format(std::string_view data) {
    const std::size_t nl = data.find('\n');
    std::string_view first = nl == std::string_view::npos ? data : data.substr(0, nl);
    if (!first.empty() && first.back() == '\r') first.remove_suffix(1);
    const auto fields = split_ws(first);
    bool headered = fields.size() == 2;
    if (headered) {
        for (const auto& f : fields) {
            std::int64_t v = 0;
            const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
            if (res.ec != std::errc() || res.ptr != f.data() + f.size() || v < 0) headered = false;
        }
    }
    if (!headered) return EmbeddingFormat::glove_text;
    if (nl == std::string_view::npos) return EmbeddingFormat::word2vec_text;
    // Control bytes after the header mean raw float32 payload.
    const std::string_view body = data.substr(nl + 1, 4096);
    for (char c : body) {
        const auto b = static_cast<unsigned char>(c);
        if (b < 0x20 && c != '\t' && c != '\n' && c != '\r') return EmbeddingFormat::word2vec_binary;
    }
    return EmbeddingFormat::word2vec_text;
}

struct HeaderCounts {
    std::size_t words = 0;
    std::size_t dim = 0;
};

inline HeaderCounts parse_header(std::string_view line) {
    const auto fields = split_ws(line);
    if (fields.size() != 2)
        throw ParseError("malformed header: expected '<words> <dim>', got '" + std::string(line) + "'");
    const std::int64_t n = parse_int(fields[0], "vocabulary count");
    const std::int64_t r = parse_int(fields[1], "dimension");
    if (n < 0 || r < 1) throw ParseError("malformed header: counts out of range");
    return {static_cast<std::size_t>(n), static_cast<std::size_t>(r)};
}

inline void parse_row(std::string_view line, std::size_t line_no, std::size_t dim,
                      std::vector<std::string>& vocab, Eigen::MatrixXd& vectors,
                      std::size_t row) {
    const auto fields = split_ws(line);
    if (fields.size() != dim + 1)
        throw ParseError("line " + std::to_string(line_no) + ": expected token plus " +
                         std::to_string(dim) + " values, got " + std::to_string(fields.size()) +
                         " fields");
    vocab.push_back(std::string(fields[0]));
    for (std::size_t j = 0; j < dim; ++j) {
        const double v = parse_double(fields[j + 1], "vector value");
        if (!std::isfinite(v))
            throw ParseError("non-finite value for token '" + std::string(fields[0]) +
                             "' at line " + std::to_string(line_no));
        vectors(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j)) = v;
    }
}

inline Embedding parse_word2vec_text(std::string_view data) {
    std::vector<std::string_view> lines;
    for_each_line(data, [&](std::string_view line, std::size_t) { lines.push_back(line); });
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    if (lines.empty()) throw ParseError("empty embedding file");
    const HeaderCounts header = parse_header(lines[0]);
    if (lines.size() - 1 != header.words)
        throw ParseError("header declares " + std::to_string(header.words) + " words but file has " +
                         std::to_string(lines.size() - 1) + " rows");
    std::vector<std::string> vocab;
    vocab.reserve(header.words);
    Eigen::MatrixXd vectors(header.words, header.dim);
    for (std::size_t i = 0; i < header.words; ++i)
        parse_row(lines[i + 1], i + 2, header.dim, vocab, vectors, i);
    return Embedding(std::move(vocab), std::move(vectors));
}

inline Embedding parse_glove_text(std::string_view data) {
    std::vector<std::string_view> lines;
    for_each_line(data, [&](std::string_view line, std::size_t) { lines.push_back(line); });
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    if (lines.empty()) throw ParseError("empty embedding file");
    const std::size_t dim = split_ws(lines[0]).size() - 1;
    if (dim < 1) throw ParseError("first row has no vector values");
    std::vector<std::string> vocab;
    vocab.reserve(lines.size());
    Eigen::MatrixXd vectors(lines.size(), dim);
    for (std::size_t i = 0; i < lines.size(); ++i)
        parse_row(lines[i], i + 1, dim, vocab, vectors, i);
    return Embedding(std::move(vocab), std::move(vectors));
}

inline float read_float32_le(const unsigned char* p) {
    const std::uint32_t u = static_cast<std::uint32_t>(p[0]) |
                            (static_cast<std::uint32_t>(p[1]) << 8) |
                            (static_cast<std::uint32_t>(p[2]) << 16) |
                            (static_cast<std::uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(u);
}

inline void write_float32_le(std::string& out, float value) {
    const auto u = std::bit_cast<std::uint32_t>(value);
    out.push_back(static_cast<char>(u & 0xff));
    out.push_back(static_cast<char>((u >> 8) & 0xff));
    out.push_back(static_cast<char>((u >> 16) & 0xff));
    out.push_back(static_cast<char>((u >> 24) & 0xff));
}

inline Embedding parse_word2vec_binary(std::string_view data) {
    constexpr std::size_t kMaxTokenBytes = 4096;
    const std::size_t header_end = data.find('\n');
    if (header_end == std::string_view::npos || header_end > 64)
        throw ParseError("malformed binary header");
    const HeaderCounts header = parse_header(data.substr(0, header_end));

    std::vector<std::string> vocab;
    vocab.reserve(header.words);
    Eigen::MatrixXd vectors(header.words, header.dim);
    std::size_t pos = header_end + 1;
    for (std::size_t i = 0; i < header.words; ++i) {
        while (pos < data.size() && data[pos] == '\n') ++pos;
        const std::size_t token_start = pos;
        while (pos < data.size() && data[pos] != ' ') {
            if (pos - token_start > kMaxTokenBytes)
                throw ParseError("token exceeds " + std::to_string(kMaxTokenBytes) +
                                 " bytes; file is likely not word2vec-binary");
            ++pos;
        }
        if (pos >= data.size()) throw ParseError("unexpected end of file inside token");
        const std::string token(data.substr(token_start, pos - token_start));
        if (token.find('\n') != std::string::npos || token.empty())
            throw ParseError("malformed binary record near byte " + std::to_string(token_start));
        ++pos;  // separator 0x20
        if (pos + 4 * header.dim > data.size())
            throw ParseError("unexpected end of file in vector for token '" + token + "'");
        for (std::size_t j = 0; j < header.dim; ++j) {
            const float v =
                read_float32_le(reinterpret_cast<const unsigned char*>(data.data() + pos));
            if (!std::isfinite(v))
                throw ParseError("non-finite value for token '" + token + "'");
            vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                static_cast<double>(v);
            pos += 4;
        }
        if (pos < data.size() && data[pos] == '\n') ++pos;  // optional trailing newline
        vocab.push_back(token);
    }
    while (pos < data.size() && (data[pos] == '\n' || data[pos] == ' ' || data[pos] == '\r')) ++pos;
    if (pos != data.size())
        throw ParseError("trailing data after " + std::to_string(header.words) + " declared words");
    return Embedding(std::move(vocab), std::move(vectors));
}

}  // namespace detail

/// Loads an embedding file. With `auto_detect`, a first line holding exactly
/// two integers selects the word2vec family (control bytes in the payload
/// selecting binary), anything else is parsed as GloVe text.
inline Embedding load_embedding(const std::filesystem::path& path,
                                EmbeddingFormat format = EmbeddingFormat::auto_detect) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open embedding file: " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on: " + path.string());

    if (format == EmbeddingFormat::auto_detect) {
        format = detail::detect_format(data);
        log_debug("auto-detected format " + std::string(format_name(format)) + " for " +
                  path.string());
    }
    try {
        switch (format) {
            case EmbeddingFormat::word2vec_text: return detail::parse_word2vec_text(data);
            case EmbeddingFormat::glove_text: return detail::parse_glove_text(data);
            case EmbeddingFormat::word2vec_binary: return detail::parse_word2vec_binary(data);
            default: throw InvalidArgument("unresolved embedding format");
        }
    } catch (const InvalidArgument& e) {
        // Constructor-level validation failures are data defects here.
        throw ParseError(std::string(e.what()) + " (while loading " + path.string() + ")");
    }
}

/// Writes an embedding in the requested format. Text floats use the shortest
/// round-tripping decimal form; binary stores little-endian float32.
inline void write_embedding(const Embedding& emb, const std::filesystem::path& path,
                            EmbeddingFormat format) {
    if (emb.size() == 0) throw InvalidArgument("refusing to write an empty embedding");
    if (format == EmbeddingFormat::auto_detect)
        throw InvalidArgument("an explicit format is required when writing");

    std::string out;
    const auto& m = emb.vectors();
    const std::size_t n = emb.size();
    const auto r = static_cast<std::size_t>(emb.dim());
    if (format == EmbeddingFormat::word2vec_text || format == EmbeddingFormat::word2vec_binary) {
        out += std::to_string(n);
        out.push_back(' ');
        out += std::to_string(r);
        out.push_back('\n');
    }
    for (std::size_t i = 0; i < n; ++i) {
        out += emb.token(i);
        if (format == EmbeddingFormat::word2vec_binary) {
            out.push_back(' ');
            for (std::size_t j = 0; j < r; ++j)
                detail::write_float32_le(
                    out, static_cast<float>(m(static_cast<Eigen::Index>(i),
                                              static_cast<Eigen::Index>(j))));
        } else {
            for (std::size_t j = 0; j < r; ++j) {
                out.push_back(' ');
                out += format_double(m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
            }
        }
        out.push_back('\n');
    }

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    os.flush();
    if (!os) throw IoError("write failure on: " + path.string());
}

/// Returns a copy with unit-L2 rows. Pairwise cosine similarities are
/// unchanged; the operation is idempotent.
inline Embedding normalize_rows(const Embedding& emb) {
    Eigen::MatrixXd m = emb.vectors();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double norm = m.row(i).norm();
        if (!(norm > 0.0))
            throw InvalidArgument("cannot normalize zero-norm row for token '" +
                                  emb.token(static_cast<std::size_t>(i)) + "'");
        m.row(i) /= norm;
    }
    return Embedding(emb.vocab(), std::move(m), true);
}

struct Neighbor {
    std::string token;
    double cosine;
};

/// Tokens ranked by descending cosine similarity with `query`, excluded
/// tokens omitted, ties broken by ascending vocabulary index. Zero-norm rows
/// rank as orthogonal (cosine 0).
inline std::vector<Neighbor> nearest_neighbors(const Embedding& emb,
                                               const Eigen::Ref<const Eigen::VectorXd>& query,
                                               std::size_t k,
                                               const std::unordered_set<std::string>& exclude = {}) {
    if (query.size() != emb.dim()) throw InvalidArgument("query dimension mismatch");
    const double qnorm = query.norm();
    if (!(qnorm > 0.0)) throw InvalidArgument("zero query vector");
    if (k < 1 || k > emb.size())
        throw InvalidArgument("k must be in [1, vocabulary size]");

    const auto& m = emb.vectors();
    const Eigen::VectorXd dots = m * query;
    std::vector<std::pair<double, std::size_t>> scored;  // (cosine, index)
    scored.reserve(emb.size());
    for (std::size_t i = 0; i < emb.size(); ++i) {
        if (exclude.count(emb.token(i)) != 0) continue;
        const double rnorm = m.row(static_cast<Eigen::Index>(i)).norm();
        const double cosine = rnorm > 0.0 ? dots(static_cast<Eigen::Index>(i)) / (rnorm * qnorm) : 0.0;
        scored.emplace_back(cosine, i);
    }
    const std::size_t take = std::min(k, scored.size());
    const auto better = [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    };
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                      scored.end(), better);
    std::vector<Neighbor> result;
    result.reserve(take);
    for (std::size_t i = 0; i < take; ++i)
        result.push_back({emb.token(scored[i].second), scored[i].first});
    return result;
}

}  // namespace embias
