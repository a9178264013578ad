#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tensor.hpp"
#include "tokenizer.hpp"

namespace opendas {

/// Base query -> generated negative queries, in file order.
struct NegativeBank {
    std::vector<std::pair<std::string, std::vector<std::string>>> entries;

    bool empty() const { return entries.empty(); }
    std::size_t size() const { return entries.size(); }

    const std::vector<std::string>* find(const std::string& key) const {
        for (const auto& [k, v] : entries)
            if (k == key) return &v;
        return nullptr;
    }

    std::size_t negative_count() const {
        std::size_t n = 0;
        for (const auto& e : entries) n += e.second.size();
        return n;
    }

    bool operator==(const NegativeBank&) const = default;
};

/// Every invariant violation, one message per problem. Empty means valid.
inline std::vector<std::string> check_negative_bank(const NegativeBank& bank) {
    std::vector<std::string> problems;
    std::unordered_set<std::string> keys;
    for (const auto& [key, negs] : bank.entries) {
        if (key.empty()) problems.push_back("empty base query key");
        if (!keys.insert(key).second) problems.push_back("'" + key + "': key appears more than once");
        const std::string key_l = Vocabulary::normalize(key);
        std::unordered_set<std::string> seen;
        for (const auto& n : negs) {
            const std::string n_l = Vocabulary::normalize(n);
            if (n.empty()) problems.push_back("'" + key + "': empty negative");
            if (n_l == key_l) problems.push_back("'" + key + "': lists itself ('" + n + "') as a negative");
            if (!seen.insert(n_l).second) problems.push_back("'" + key + "': duplicate negative '" + n + "'");
        }
    }
    return problems;
}

inline NegativeBank parse_negative_bank(const std::string& text) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("negative bank is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("negative bank must be a JSON object of string -> string array");
    NegativeBank bank;
    for (const auto& [key, value] : j.items()) {
        if (!value.is_array()) throw ParseError("negative bank entry '" + key + "' is not an array");
        std::vector<std::string> negs;
        for (const auto& n : value) {
            if (!n.is_string()) throw ParseError("negative bank entry '" + key + "' holds a non-string");
            negs.push_back(n.get<std::string>());
        }
        bank.entries.emplace_back(key, std::move(negs));
    }
    if (auto problems = check_negative_bank(bank); !problems.empty()) throw ValidationError(problems.front());
    return bank;
}

inline NegativeBank load_negative_bank(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open negative bank " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_negative_bank(ss.str());
}

inline std::string dump_negative_bank(const NegativeBank& bank) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [k, v] : bank.entries) j[k] = v;
    return j.dump(2) + "\n";
}

/// Training label space: base queries first, then deduplicated negatives.
struct LabelSpace {
    std::vector<std::string> labels;
    std::size_t base_count = 0;
    std::vector<bool> is_base;

    std::size_t size() const { return labels.size(); }

    std::optional<std::size_t> index_of(const std::string& label) const {
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == label) return i;
        return std::nullopt;
    }

    bool operator==(const LabelSpace&) const = default;
};

/// Base queries keep their order and indices. Negatives follow in key order
/// then list order; any string already present is dropped.
inline LabelSpace build_label_space(const std::vector<std::string>& base, const NegativeBank& bank) {
    if (base.empty()) throw ValidationError("label space needs at least one base query");
    LabelSpace ls;
    std::unordered_set<std::string> seen;
    for (const auto& q : base)
        if (seen.insert(q).second) ls.labels.push_back(q);
    ls.base_count = ls.labels.size();
    for (const auto& [key, negs] : bank.entries)
        for (const auto& n : negs)
            if (seen.insert(n).second) ls.labels.push_back(n);
    ls.is_base.assign(ls.labels.size(), false);
    for (std::size_t i = 0; i < ls.base_count; ++i) ls.is_base[i] = true;
    return ls;
}

inline constexpr const char* kNegativeInstruction =
    "Your task is to produce five distinct examples for each class provided in the list, ensuring that the "
    "examples are not subcategories of each other but rather represent clear and separate entities within the "
    "same class. This means that each example should not be a subset or type of another example within the same "
    "category. The objective is to create similar examples that might be confused by a machine learning model but "
    "remain discernible to a human observer to be used as clear negative examples for triplet loss training. The "
    "output format should be a Python dictionary for easy integration.";

/// Instruction text for an external text generator, followed by the class
/// list as a JSON array.
inline std::string build_instruction_prompt(const std::vector<std::string>& base) {
    if (base.empty()) throw ValidationError("instruction prompt needs at least one class");
    std::string out = kNegativeInstruction;
    out += "\n\nClasses: ";
    out += nlohmann::json(base).dump();
    out += "\n";
    return out;
}

/// Index of the label embedding closest (L2) to `v`, excluding
/// `true_index`. Ties go to the lowest index.
template <typename T>
std::size_t hardest_negative(const RowVector<T>& v, const std::vector<RowVector<T>>& labels, std::size_t true_index) {
    if (labels.size() < 2) throw ValidationError("hardest_negative: need at least one candidate besides the true class");
    if (true_index >= labels.size()) throw ValidationError("hardest_negative: true index out of range");
    std::size_t best = labels.size();
    T best_d = T(0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i == true_index) continue;
        T d = (v - labels[i]).squaredNorm();
        if (best == labels.size() || d < best_d) {
            best = i;
            best_d = d;
        }
    }
    return best;
}

} // namespace opendas
