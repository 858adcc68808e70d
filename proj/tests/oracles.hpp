#pragma once

// Independent reference computations used only by tests. None of these call into the
// library's metric, similarity or digest code paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "egoqa/similarity.hpp"

namespace oracle {

/// IoU as |A∩B| / (|A| + |B| - |A∩B|) from raw endpoints.
inline double iou(double s1, double e1, double s2, double e2)
{
    double lo = s1 > s2 ? s1 : s2;
    double hi = e1 < e2 ? e1 : e2;
    double inter = hi > lo ? hi - lo : 0.0;
    double uni = (e1 - s1) + (e2 - s2) - inter;
    return inter / uni;
}

/// Cosine in long double with a plain two-pass evaluation.
inline long double cosine(egoqa::Embedding const& a, egoqa::Embedding const& b)
{
    long double dot = 0, na = 0, nb = 0;
    auto x = a.values();
    auto y = b.values();
    for (std::size_t i = 0; i < x.size(); ++i)
        dot += static_cast<long double>(x[i]) * static_cast<long double>(y[i]);
    for (double v : x)
        na += static_cast<long double>(v) * v;
    for (double v : y)
        nb += static_cast<long double>(v) * v;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct Pred
{
    std::string qid;
    std::vector<std::pair<double, double>> candidates;  // empty = NA
    std::pair<double, double> window;
    int confidence = 1;
    int choice = -1;
};

struct Truth
{
    std::pair<double, double> window;
    int choice = 0;
};

/// Exhaustive recount over every (candidate, gt) pair.
struct Recount
{
    double na_ratio = 0, overlap = 0, iou_star_03 = 0, iou_star_05 = 0, r1_03 = 0, r1_05 = 0, accuracy = 0;
};

inline Recount recount(std::vector<Pred> const& preds, std::vector<Truth> const& truth)
{
    Recount r;
    std::size_t na = 0, non_na = 0, overlap = 0, s03 = 0, s05 = 0, r03 = 0, r05 = 0, correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        auto const& p = preds[i];
        auto const& t = truth[i];
        if (p.candidates.empty()) {
            ++na;
        } else {
            ++non_na;
            bool any_overlap = false, any03 = false, any05 = false;
            for (auto const& [s, e] : p.candidates) {
                double inter = std::min(e, t.window.second) - std::max(s, t.window.first);
                if (inter > 0)
                    any_overlap = true;
                double v = iou(s, e, t.window.first, t.window.second);
                if (v > 0.3)
                    any03 = true;
                if (v > 0.5)
                    any05 = true;
            }
            overlap += any_overlap;
            s03 += any03;
            s05 += any05;
        }
        double v = iou(p.window.first, p.window.second, t.window.first, t.window.second);
        r03 += v > 0.3;
        r05 += v > 0.5;
        correct += p.choice == t.choice;
    }
    auto frac = [](std::size_t n, std::size_t d) { return d == 0 ? 0.0 : double(n) / double(d); };
    r.na_ratio = frac(na, preds.size());
    r.overlap = frac(overlap, non_na);
    r.iou_star_03 = frac(s03, non_na);
    r.iou_star_05 = frac(s05, non_na);
    r.r1_03 = frac(r03, preds.size());
    r.r1_05 = frac(r05, preds.size());
    r.accuracy = frac(correct, preds.size());
    return r;
}

/// Indices of captions whose cosine with at least one query text reaches the threshold,
/// checked over every (caption, query text) pair.
inline std::vector<std::size_t> survivors(std::vector<std::string> const& captions,
                                          std::vector<std::string> const& query_texts, egoqa::MockEmbedder const& m,
                                          double threshold)
{
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < captions.size(); ++i) {
        bool any = false;
        for (auto const& q : query_texts) {
            if (oracle::cosine(m.embed_one(captions[i]), m.embed_one(q)) >= threshold - 1e-12L)
                any = true;
        }
        if (any)
            keep.push_back(i);
    }
    return keep;
}

/// [first, last) runs of two or more, built by scanning neighbours left to right.
inline std::vector<std::pair<std::size_t, std::size_t>> groups(std::vector<std::string> const& texts,
                                                               egoqa::MockEmbedder const& m, double threshold,
                                                               std::size_t cap)
{
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t i = 0;
    while (i < texts.size()) {
        std::size_t j = i + 1;
        while (j < texts.size() && j - i < cap && oracle::cosine(m.embed_one(texts[j]), m.embed_one(texts[j - 1])) >= threshold - 1e-12L)
            ++j;
        if (j - i >= 2)
            out.emplace_back(i, j);
        i = j;
    }
    return out;
}

} // namespace oracle
