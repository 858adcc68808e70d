#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "egoqa/answer.hpp"
#include "egoqa/ensemble.hpp"
#include "egoqa/interval.hpp"

namespace egoqa {

inline double iou(Interval const& a, Interval const& b)
{
    double const inter = intersection_length(a, b);
    if (inter <= 0.0)
        return 0.0;
    double const uni = std::max(a.end_s, b.end_s) - std::min(a.start_s, b.start_s);
    return std::clamp(inter / uni, 0.0, 1.0);
}

/// numerator / denominator; a zero denominator reports 0 and sets `undefined`.
struct Rate
{
    std::size_t numerator = 0;
    std::size_t denominator = 0;

    [[nodiscard]] bool undefined() const noexcept { return denominator == 0; }
    [[nodiscard]] double value() const noexcept
    {
        return denominator == 0 ? 0.0 : static_cast<double>(numerator) / static_cast<double>(denominator);
    }

    [[nodiscard]] nlohmann::ordered_json to_json() const
    {
        return {{"value", value()}, {"numerator", numerator}, {"denominator", denominator}, {"undefined", undefined()}};
    }

    friend bool operator==(Rate const&, Rate const&) = default;
};

using AnswerMap = std::map<std::string, LlmAnswer>;
using WindowMap = std::map<std::string, Interval>;
using ChoiceMap = std::map<std::string, int>;

namespace detail {

template <typename Map, typename Truth>
void require_truth(Map const& preds, Truth const& gts)
{
    std::vector<std::string> missing;
    for (auto const& [qid, _] : preds) {
        if (!gts.contains(qid))
            missing.push_back(qid);
    }
    if (!missing.empty()) {
        std::string msg = "no ground truth for " + std::to_string(missing.size()) + " prediction(s):";
        for (auto const& q : missing)
            msg += " " + q;
        throw std::invalid_argument(msg);
    }
}

inline double best_iou(LlmAnswer const& a, Interval const& gt)
{
    double best = 0.0;
    for (auto const& w : a.intervals)
        best = std::max(best, iou(w, gt));
    return best;
}

} // namespace detail

struct OverlapResult
{
    /// Non-NA predictions with some candidate positively intersecting the gt.
    Rate overlap;
    /// Same numerator over all predictions, NA included.
    Rate overlap_all;
    Rate na_ratio;
};

inline OverlapResult overlap_rate(AnswerMap const& preds, WindowMap const& gts)
{
    detail::require_truth(preds, gts);
    OverlapResult r;
    for (auto const& [qid, a] : preds) {
        ++r.na_ratio.denominator;
        ++r.overlap_all.denominator;
        if (a.is_na()) {
            ++r.na_ratio.numerator;
            continue;
        }
        ++r.overlap.denominator;
        auto const& gt = gts.at(qid);
        bool const hit = std::any_of(a.intervals.begin(), a.intervals.end(),
                                     [&](Interval const& w) { return intersection_length(w, gt) > 0.0; });
        if (hit) {
            ++r.overlap.numerator;
            ++r.overlap_all.numerator;
        }
    }
    return r;
}

/// Fraction of non-NA predictions whose best candidate has IoU strictly above threshold.
inline Rate iou_star_at(AnswerMap const& preds, WindowMap const& gts, double threshold)
{
    if (!(threshold > 0.0 && threshold <= 1.0))
        throw std::invalid_argument("iou_star_at: threshold must lie in (0, 1]");
    detail::require_truth(preds, gts);
    Rate r;
    for (auto const& [qid, a] : preds) {
        if (a.is_na())
            continue;
        ++r.denominator;
        if (detail::best_iou(a, gts.at(qid)) > threshold)
            ++r.numerator;
    }
    return r;
}

/// Fraction of queries whose single final window has IoU strictly above threshold.
inline Rate recall_at_1(WindowMap const& preds, WindowMap const& gts, double threshold)
{
    detail::require_truth(preds, gts);
    Rate r;
    for (auto const& [qid, w] : preds) {
        ++r.denominator;
        if (iou(w, gts.at(qid)) > threshold)
            ++r.numerator;
    }
    return r;
}

/// Arithmetic mean of R@1 at IoU 0.3 and 0.5.
inline double recall_mean(WindowMap const& preds, WindowMap const& gts)
{
    return (recall_at_1(preds, gts, 0.3).value() + recall_at_1(preds, gts, 0.5).value()) / 2.0;
}

/// Unanswered QA predictions count as wrong.
inline Rate qa_accuracy(AnswerMap const& preds, ChoiceMap const& gts)
{
    detail::require_truth(preds, gts);
    Rate r;
    for (auto const& [qid, a] : preds) {
        if (a.kind != QueryKind::qa)
            throw std::invalid_argument("qa_accuracy: " + qid + " is not a QA prediction");
        ++r.denominator;
        if (a.choice_idx && *a.choice_idx == gts.at(qid))
            ++r.numerator;
    }
    return r;
}

inline constexpr double kIouThresholds[] = {0.3, 0.5};

inline std::string threshold_key(double t)
{
    std::ostringstream os;
    os << t;
    return os.str();
}

/// Evaluation over one prediction set. NLQ fields are present when NLQ predictions were
/// evaluated, the QA field when QA predictions were.
struct EvalReport
{
    std::size_t n_queries = 0;
    std::optional<Rate> na_ratio;
    std::optional<Rate> overlap;
    std::optional<Rate> overlap_all;
    std::map<std::string, Rate> iou_star;
    std::map<std::string, Rate> recall_at_1;
    std::optional<double> recall_mean;
    std::optional<Rate> qa_accuracy;
    std::map<int, EvalReport> per_confidence;

    [[nodiscard]] nlohmann::ordered_json to_json() const
    {
        nlohmann::ordered_json j;
        j["n_queries"] = n_queries;
        if (na_ratio)
            j["na_ratio"] = na_ratio->to_json();
        if (overlap)
            j["overlap"] = overlap->to_json();
        if (overlap_all)
            j["overlap_all_predictions"] = overlap_all->to_json();
        if (!iou_star.empty()) {
            j["iou_star"] = nlohmann::ordered_json::object();
            for (auto const& [k, r] : iou_star)
                j["iou_star"][k] = r.to_json();
        }
        if (!recall_at_1.empty()) {
            j["recall_at_1"] = nlohmann::ordered_json::object();
            for (auto const& [k, r] : recall_at_1)
                j["recall_at_1"][k] = r.to_json();
        }
        if (recall_mean)
            j["recall_mean"] = *recall_mean;
        if (qa_accuracy)
            j["qa_accuracy"] = qa_accuracy->to_json();
        if (!per_confidence.empty()) {
            j["per_confidence"] = nlohmann::ordered_json::object();
            for (auto const& [level, sub] : per_confidence)
                j["per_confidence"][">=" + std::to_string(level)] = sub.to_json();
        }
        return j;
    }
};

/// Final NLQ output: the model's candidates plus the refined window.
struct NlqPrediction
{
    LlmAnswer answer;
    Interval window;
};

using NlqPredictionMap = std::map<std::string, NlqPrediction>;

inline EvalReport evaluate_nlq(NlqPredictionMap const& preds, WindowMap const& gts)
{
    AnswerMap answers;
    WindowMap windows;
    for (auto const& [qid, p] : preds) {
        answers.emplace(qid, p.answer);
        windows.emplace(qid, p.window);
    }
    EvalReport r;
    r.n_queries = preds.size();
    auto ov = overlap_rate(answers, gts);
    r.na_ratio = ov.na_ratio;
    r.overlap = ov.overlap;
    r.overlap_all = ov.overlap_all;
    for (double t : kIouThresholds) {
        r.iou_star[threshold_key(t)] = iou_star_at(answers, gts, t);
        r.recall_at_1[threshold_key(t)] = recall_at_1(windows, gts, t);
    }
    r.recall_mean = (r.recall_at_1.at("0.3").value() + r.recall_at_1.at("0.5").value()) / 2.0;
    return r;
}

inline EvalReport evaluate_qa(AnswerMap const& preds, ChoiceMap const& gts)
{
    EvalReport r;
    r.n_queries = preds.size();
    r.qa_accuracy = qa_accuracy(preds, gts);
    return r;
}

/// Reports over the predictions with confidence >= 1, >= 2 and >= 3.
inline std::map<int, EvalReport> stratify_by_confidence(NlqPredictionMap const& preds, WindowMap const& gts)
{
    std::map<int, EvalReport> out;
    for (int level = kMinConfidence; level <= kMaxConfidence; ++level) {
        NlqPredictionMap subset;
        for (auto const& [qid, p] : preds) {
            if (p.answer.confidence >= level)
                subset.emplace(qid, p);
        }
        out.emplace(level, evaluate_nlq(subset, gts));
    }
    return out;
}

inline std::map<int, EvalReport> stratify_by_confidence(AnswerMap const& preds, ChoiceMap const& gts)
{
    std::vector<LlmAnswer> all;
    for (auto const& [_, a] : preds)
        all.push_back(a);
    std::map<int, EvalReport> out;
    for (int level = kMinConfidence; level <= kMaxConfidence; ++level) {
        AnswerMap subset;
        for (auto& a : filter_by_confidence(all, level))
            subset.emplace(a.qid, std::move(a));
        out.emplace(level, evaluate_qa(subset, gts));
    }
    return out;
}

inline std::string format_percent(Rate const& r)
{
    if (r.undefined())
        return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * r.value());
    return buf;
}

/// Plain-text table in the usual reporting layout.
inline std::string format_summary(EvalReport const& report)
{
    std::ostringstream os;
    auto const row = [&](std::string const& label, EvalReport const& r) {
        os << label;
        if (r.qa_accuracy)
            os << " | " << r.n_queries << " | " << format_percent(*r.qa_accuracy);
        if (r.overlap) {
            os << " | " << r.n_queries << " | " << format_percent(*r.na_ratio) << " | " << format_percent(*r.overlap)
               << " | " << format_percent(r.iou_star.at("0.3")) << " | " << format_percent(r.iou_star.at("0.5"))
               << " | " << format_percent(r.recall_at_1.at("0.3")) << " | " << format_percent(r.recall_at_1.at("0.5"));
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.1f", 100.0 * r.recall_mean.value_or(0.0));
            os << " | " << buf;
        }
        os << '\n';
    };
    if (report.qa_accuracy)
        os << "Conf. | N | Accuracy\n";
    if (report.overlap)
        os << "Conf. | N | NA | Overlap | IoU*@0.3 | IoU*@0.5 | R@1 IoU@0.3 | R@1 IoU@0.5 | Mean\n";
    row("all", report);
    for (auto const& [level, sub] : report.per_confidence)
        row(">=" + std::to_string(level), sub);
    return os.str();
}

} // namespace egoqa
