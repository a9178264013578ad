#pragma once

#include <algorithm>
#include <cctype>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "error.hpp"

namespace opendas {

/// Whitespace word-level vocabulary. Ids 0..2 are reserved.
class Vocabulary {
  public:
    static constexpr int kUnknown = 0;
    static constexpr int kEos = 1;
    static constexpr int kPad = 2;
    static constexpr int kFirstWord = 3;

    Vocabulary() : words_{"<unk>", "<eos>", "<pad>"} {}

    static Vocabulary from_words(const std::vector<std::string>& words) {
        Vocabulary v;
        for (const auto& w : words) v.add(w);
        return v;
    }

    // Adds every word of every phrase, in order of first appearance.
    static Vocabulary from_phrases(const std::vector<std::string>& phrases) {
        Vocabulary v;
        for (const auto& p : phrases)
            for (const auto& w : split_words(p)) v.add(w);
        return v;
    }

    int add(std::string_view word) {
        std::string key = normalize(word);
        if (key.empty()) throw ValidationError("cannot add an empty word to the vocabulary");
        if (auto it = index_.find(key); it != index_.end()) return it->second;
        int id = static_cast<int>(words_.size());
        words_.push_back(key);
        index_.emplace(std::move(key), id);
        return id;
    }

    int id(std::string_view word) const {
        auto it = index_.find(normalize(word));
        return it == index_.end() ? kUnknown : it->second;
    }

    const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
    int size() const { return static_cast<int>(words_.size()); }
    const std::vector<std::string>& words() const { return words_; }

    bool operator==(const Vocabulary& o) const { return words_ == o.words_; }

    static std::string normalize(std::string_view w) {
        std::string s(w);
        std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
        return s;
    }

    static std::vector<std::string> split_words(std::string_view text) {
        std::vector<std::string> out;
        std::istringstream in{std::string(text)};
        for (std::string w; in >> w;) out.push_back(w);
        return out;
    }

  private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

struct TokenIds {
    std::vector<int> ids; // content ids followed by Vocabulary::kEos
    bool truncated = false;
};

/// Tokenizes `query` and appends [EOS]. `max_tokens` counts the [EOS] slot.
/// Overlong queries throw unless `allow_truncation` is set, in which case
/// the content is cut and `truncated` is raised.
inline TokenIds tokenize_text(std::string_view query, const Vocabulary& vocab, int max_tokens,
                              bool allow_truncation = false) {
    auto words = Vocabulary::split_words(query);
    if (words.empty()) throw ValidationError("cannot tokenize an empty query");
    TokenIds out;
    const auto max_content = static_cast<std::size_t>(std::max(0, max_tokens - 1));
    if (words.size() > max_content) {
        if (!allow_truncation)
            throw ValidationError("query '" + std::string(query) + "' has " + std::to_string(words.size()) +
                                  " tokens, context allows " + std::to_string(max_content));
        words.resize(max_content);
        out.truncated = true;
    }
    for (const auto& w : words) out.ids.push_back(vocab.id(w));
    out.ids.push_back(Vocabulary::kEos);
    return out;
}

} // namespace opendas
