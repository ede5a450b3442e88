#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "embias/errors.hpp"
#include "embias/text.hpp"

namespace embias {

/// Loads a word list: one token or phrase per line, '#' starts a comment
/// line, blank lines are skipped. Multiword phrases are joined with '_'
/// to match the usual embedding phrase convention.
inline std::vector<std::string> load_word_list(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open word list: " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    std::vector<std::string> words;
    for_each_line(data, [&](std::string_view line, std::size_t) {
        const std::string_view trimmed = trim(line);
        if (trimmed.empty() || trimmed.front() == '#') return;
        const auto parts = split_ws(trimmed);
        std::string word;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            if (i != 0) word.push_back('_');
            word.append(parts[i]);
        }
        words.push_back(std::move(word));
    });
    return words;
}

}  // namespace embias
