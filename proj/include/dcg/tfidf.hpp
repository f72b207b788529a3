#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dcg/errors.hpp"

namespace dcg {

/// Sparse term-weight vector. Entries are (vocabulary index, weight) pairs
/// sorted by index; zero weights are never stored.
struct SparseVector {
    std::vector<std::pair<std::uint32_t, double>> entries;

    bool empty() const noexcept { return entries.empty(); }

    double norm() const {
        double s = 0.0;
        for (const auto& [i, w] : entries) s += w * w;
        return std::sqrt(s);
    }
};

/// Lowercases and splits on non-alphanumeric characters.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : text) {
        const unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            current.push_back(static_cast<char>(std::tolower(u)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

/// TF-IDF weighting model. Immutable once fitted; safe for concurrent
/// vectorize/cosine calls.
///
/// idf(t) = ln((1+N)/(1+df(t))) + 1, which keeps every weight positive.
class TfidfModel {
public:
    static TfidfModel fit(const std::vector<std::string>& corpus) {
        if (corpus.empty()) throw EmptyCorpusError("fit requires a non-empty corpus");

        std::map<std::string, std::size_t> df;
        for (const auto& doc : corpus) {
            std::vector<std::string> tokens = tokenize(doc);
            std::sort(tokens.begin(), tokens.end());
            tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
            for (auto& t : tokens) ++df[t];
        }

        TfidfModel model;
        model.doc_count_ = corpus.size();
        model.terms_.reserve(df.size());
        model.idf_.reserve(df.size());
        model.df_.reserve(df.size());
        const double n = static_cast<double>(corpus.size());
        for (const auto& [term, count] : df) {
            model.index_.emplace(term, static_cast<std::uint32_t>(model.terms_.size()));
            model.terms_.push_back(term);
            model.df_.push_back(count);
            model.idf_.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
        }
        return model;
    }

    SparseVector vectorize(std::string_view text) const {
        std::map<std::uint32_t, double> tf;
        for (const auto& token : tokenize(text)) {
            auto it = index_.find(token);
            if (it == index_.end()) continue;  // out-of-vocabulary
            tf[it->second] += 1.0;
        }
        SparseVector v;
        v.entries.reserve(tf.size());
        for (const auto& [idx, count] : tf) v.entries.emplace_back(idx, count * idf_[idx]);
        return v;
    }

    std::size_t vocabulary_size() const noexcept { return terms_.size(); }
    std::size_t doc_count() const noexcept { return doc_count_; }

    /// Document frequency of a term; 0 when unknown.
    std::size_t df(std::string_view term) const {
        auto it = index_.find(std::string(term));
        return it == index_.end() ? 0 : df_[it->second];
    }

    double idf(std::string_view term) const {
        auto it = index_.find(std::string(term));
        return it == index_.end() ? 0.0 : idf_[it->second];
    }

    const std::vector<std::string>& terms() const noexcept { return terms_; }

private:
    std::unordered_map<std::string, std::uint32_t> index_;
    std::vector<std::string> terms_;   // sorted; position == vocabulary index
    std::vector<double> idf_;
    std::vector<std::size_t> df_;
    std::size_t doc_count_ = 0;
};

/// Cosine similarity over sparse vectors. Returns 0 when either vector is
/// empty or has zero norm; all weights are nonnegative, so the result lies
/// in [0, 1].
inline double cosine(const SparseVector& u, const SparseVector& v) {
    if (u.empty() || v.empty()) return 0.0;
    double dot = 0.0;
    auto a = u.entries.begin();
    auto b = v.entries.begin();
    while (a != u.entries.end() && b != v.entries.end()) {
        if (a->first < b->first) {
            ++a;
        } else if (b->first < a->first) {
            ++b;
        } else {
            dot += a->second * b->second;
            ++a;
            ++b;
        }
    }
    const double nu = u.norm();
    const double nv = v.norm();
    if (nu == 0.0 || nv == 0.0) return 0.0;
    return dot / (nu * nv);
}

}  // namespace dcg
