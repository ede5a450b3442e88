#pragma once

#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "embias/errors.hpp"

namespace embias::csv {

inline bool needs_quoting(std::string_view field) {
    return field.find_first_of(",\"\r\n") != std::string_view::npos;
}

/// RFC 4180 field quoting: wrap in quotes, double embedded quotes.
inline std::string escape(std::string_view field) {
    if (!needs_quoting(field)) return std::string(field);
    std::string out;
    out.reserve(field.size() + 2);
    out.push_back('"');
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline std::string join(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i != 0) out.push_back(',');
        out += escape(fields[i]);
    }
    return out;
}

/// Incremental RFC 4180 record reader. Accepts LF and CRLF endings and quoted
/// fields spanning multiple lines; skips records that are entirely empty.
class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    std::size_t line() const noexcept { return line_; }

    std::optional<std::vector<std::string>> next_record() {
        for (;;) {
            auto record = read_record();
            if (!record) return std::nullopt;
            if (record->size() == 1 && (*record)[0].empty()) continue;  // blank line
            return record;
        }
    }

private:
    std::optional<std::vector<std::string>> read_record() {
        int c = in_.get();
        if (c == std::istream::traits_type::eof()) return std::nullopt;
        ++line_;
        std::vector<std::string> fields;
        std::string field;
        bool in_quotes = false;
        bool field_started = false;
        for (;;) {
            if (c == std::istream::traits_type::eof()) {
                if (in_quotes) throw ParseError("unterminated quoted CSV field at line " + std::to_string(line_));
                break;
            }
            const char ch = static_cast<char>(c);
            if (in_quotes) {
                if (ch == '"') {
                    const int next = in_.peek();
                    if (next == '"') {
                        in_.get();
                        field.push_back('"');
                    } else {
                        in_quotes = false;
                    }
                } else {
                    if (ch == '\n') ++line_;
                    field.push_back(ch);
                }
            } else if (ch == '"') {
                if (field_started && !field.empty())
                    throw ParseError("unexpected quote inside CSV field at line " + std::to_string(line_));
                in_quotes = true;
                field_started = true;
            } else if (ch == ',') {
                fields.push_back(std::move(field));
                field.clear();
                field_started = false;
            } else if (ch == '\n') {
                break;
            } else if (ch == '\r') {
                const int next = in_.peek();
                if (next == '\n') {
                    in_.get();
                    break;
                }
                field.push_back(ch);
                field_started = true;
            } else {
                field.push_back(ch);
                field_started = true;
            }
            c = in_.get();
        }
        fields.push_back(std::move(field));
        return fields;
    }

    std::istream& in_;
    std::size_t line_ = 0;
};

}  // namespace embias::csv
