#pragma once

#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "egoqa/answer.hpp"
#include "egoqa/util.hpp"

namespace egoqa {

/// No structured block could be recovered from a model response.
class ParseError : public std::runtime_error
{
public:
    ParseError(std::string const& what, std::string raw) : std::runtime_error(what), raw_(std::move(raw)) {}
    [[nodiscard]] std::string const& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

struct ParseResult
{
    /// One answer per expected qid, in expected order.
    std::vector<LlmAnswer> answers;
    std::vector<std::string> warnings;
};

namespace detail {

/// Bodies of ``` fenced blocks, with any language tag line dropped.
inline std::vector<std::string> fenced_blocks(std::string_view raw)
{
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        auto open = raw.find("```", pos);
        if (open == std::string_view::npos)
            break;
        auto body = open + 3;
        auto eol = raw.find('\n', body);
        auto close = raw.find("```", body);
        if (close == std::string_view::npos)
            break;
        if (eol != std::string_view::npos && eol < close) {
            auto tag = util::trim(raw.substr(body, eol - body));
            if (tag.empty() || std::all_of(tag.begin(), tag.end(), [](unsigned char c) { return std::isalnum(c); }))
                body = eol + 1;
        }
        out.emplace_back(raw.substr(body, close - body));
        pos = close + 3;
    }
    return out;
}

/// Balanced JSON-looking spans starting at '[' or '{', outermost first, in text order.
inline std::vector<std::string> bracket_spans(std::string_view raw)
{
    std::vector<std::string> out;
    for (std::size_t start = 0; start < raw.size(); ++start) {
        if (raw[start] != '[' && raw[start] != '{')
            continue;
        int depth = 0;
        bool in_string = false, escaped = false;
        std::size_t end = std::string_view::npos;
        for (std::size_t i = start; i < raw.size(); ++i) {
            char c = raw[i];
            if (in_string) {
                if (escaped)
                    escaped = false;
                else if (c == '\\')
                    escaped = true;
                else if (c == '"')
                    in_string = false;
                continue;
            }
            if (c == '"')
                in_string = true;
            else if (c == '[' || c == '{')
                ++depth;
            else if ((c == ']' || c == '}') && --depth == 0) {
                end = i;
                break;
            }
        }
        if (end != std::string_view::npos) {
            out.emplace_back(raw.substr(start, end - start + 1));
            if (out.size() >= 16)
                break;
        }
    }
    return out;
}

/// The list of per-query entry objects carried by a parsed document, if it has that shape.
inline std::optional<std::vector<nlohmann::json>> entries_of(nlohmann::json const& doc)
{
    auto const is_entry = [](nlohmann::json const& e) {
        return e.is_object() && (e.contains("qid") || e.contains("answer") || e.contains("intervals"));
    };
    std::vector<nlohmann::json> out;
    if (doc.is_array()) {
        for (auto const& e : doc) {
            if (!is_entry(e))
                return std::nullopt;
            out.push_back(e);
        }
        return out;
    }
    if (doc.is_object()) {
        for (char const* key : {"answers", "predictions", "results"}) {
            if (auto it = doc.find(key); it != doc.end() && it->is_array())
                return entries_of(*it);
        }
        if (is_entry(doc))
            return std::vector<nlohmann::json>{doc};
    }
    return std::nullopt;
}

inline std::optional<std::vector<nlohmann::json>> find_entries(std::string_view raw)
{
    auto const try_parse = [](std::string const& text) -> std::optional<std::vector<nlohmann::json>> {
        auto doc = nlohmann::json::parse(text, nullptr, false);
        if (doc.is_discarded())
            return std::nullopt;
        return entries_of(doc);
    };
    for (auto const& block : fenced_blocks(raw)) {
        if (auto e = try_parse(block))
            return e;
        for (auto const& span : bracket_spans(block)) {
            if (auto e = try_parse(span))
                return e;
        }
    }
    for (auto const& span : bracket_spans(raw)) {
        if (auto e = try_parse(span))
            return e;
    }
    return std::nullopt;
}

inline std::optional<double> as_number(nlohmann::json const& v)
{
    if (v.is_number())
        return v.get<double>();
    if (v.is_string()) {
        auto s = util::trim(v.get<std::string>());
        if (s.empty() || s.find_first_not_of("0123456789.eE+-") != std::string::npos)
            return std::nullopt;
        std::size_t used = 0;
        try {
            double d = std::stod(s, &used);
            if (used == s.size() && std::isfinite(d))
                return d;
        } catch (std::exception const&) {
        }
    }
    return std::nullopt;
}

inline bool is_na_token(std::string_view s)
{
    auto t = util::to_lower(util::trim(s));
    return t == "na" || t == "n/a" || t == "none" || t == "null";
}

/// Leading "NA" followed by a non-alphanumeric character or end of text.
inline bool starts_with_na(std::string_view raw)
{
    auto t = util::trim(raw);
    if (t.size() < 2 || (t.compare(0, 2, "NA") != 0 && t.compare(0, 3, "N/A") != 0))
        return false;
    auto const len = t.compare(0, 3, "N/A") == 0 ? 3u : 2u;
    return t.size() == len || !std::isalnum(static_cast<unsigned char>(t[len]));
}

inline int parse_confidence(nlohmann::json const* field, std::string const& qid, std::vector<std::string>& warnings)
{
    if (field == nullptr || field->is_null()) {
        warnings.push_back(qid + ": missing confidence, using 1");
        return kMinConfidence;
    }
    if (field->is_string()) {
        auto s = util::to_lower(util::trim(field->get<std::string>()));
        static std::map<std::string, int> const words{{"low", 1}, {"medium", 2}, {"high", 3}};
        if (auto it = words.find(s); it != words.end())
            return it->second;
    }
    if (auto n = as_number(*field)) {
        double r = std::round(*n);
        if (r == *n && r >= kMinConfidence && r <= kMaxConfidence)
            return static_cast<int>(r);
        int clamped = static_cast<int>(std::clamp(r, double(kMinConfidence), double(kMaxConfidence)));
        warnings.push_back(qid + ": confidence " + field->dump() + " clamped to " + std::to_string(clamped));
        return clamped;
    }
    warnings.push_back(qid + ": unreadable confidence " + field->dump() + ", using 1");
    return kMinConfidence;
}

inline std::optional<int> parse_choice(nlohmann::json const& v)
{
    if (!v.is_string())
        return std::nullopt;
    auto s = util::trim(v.get<std::string>());
    auto lower = util::to_lower(s);
    for (std::string_view prefix : {"option ", "answer ", "choice "}) {
        if (lower.rfind(prefix, 0) == 0) {
            s = util::trim(s.substr(prefix.size()));
            break;
        }
    }
    if (!s.empty() && s.front() == '(')
        s.erase(0, 1);
    if (s.empty())
        return std::nullopt;
    auto idx = letter_to_index(s.front());
    if (!idx)
        return std::nullopt;
    if (s.size() > 1 && std::isalnum(static_cast<unsigned char>(s[1])))
        return std::nullopt;
    return idx;
}

inline std::vector<Interval> parse_intervals(nlohmann::json const& v, std::string const& qid,
                                             std::vector<std::string>& warnings)
{
    std::vector<Interval> out;
    if (v.is_string()) {
        if (!is_na_token(v.get<std::string>()))
            warnings.push_back(qid + ": unreadable intervals " + v.dump() + ", treated as NA");
        return out;
    }
    if (v.is_null())
        return out;
    if (!v.is_array()) {
        warnings.push_back(qid + ": unreadable intervals, treated as NA");
        return out;
    }
    // A bare [start, end] pair is accepted as a single candidate.
    if (v.size() == 2 && !v[0].is_array() && !v[1].is_array()) {
        auto s = as_number(v[0]), e = as_number(v[1]);
        if (s && e && *s < *e)
            return {{*s, *e}};
    }
    for (auto const& pair : v) {
        if (!pair.is_array() || pair.size() != 2) {
            warnings.push_back(qid + ": skipped malformed interval " + pair.dump());
            continue;
        }
        auto s = as_number(pair[0]), e = as_number(pair[1]);
        if (!s || !e || !(*s < *e)) {
            warnings.push_back(qid + ": skipped invalid interval " + pair.dump());
            continue;
        }
        out.push_back({*s, *e});
    }
    if (out.empty() && !v.empty())
        warnings.push_back(qid + ": no valid interval, treated as NA");
    return out;
}

inline LlmAnswer degraded_answer(std::string const& qid, QueryKind kind, std::string const& raw)
{
    LlmAnswer a;
    a.qid = qid;
    a.kind = kind;
    a.confidence = kMinConfidence;
    a.raw_text = raw;
    return a;
}

} // namespace detail

/// Extracts the structured block from a model response and maps its entries to answers for
/// `expected_qids`. Surrounding prose and code fencing are ignored. Missing fields degrade
/// to documented defaults with a warning; qids absent from the block become NA with
/// confidence 1. Throws ParseError when no block can be recovered.
inline ParseResult parse_response(std::string const& raw, QueryKind kind, std::span<std::string const> expected_qids)
{
    ParseResult result;
    auto entries = detail::find_entries(raw);

    if (!entries) {
        if (kind == QueryKind::nlq && detail::starts_with_na(raw)) {
            auto text = util::trim(raw);
            auto rest = util::trim(text.substr(text.compare(0, 3, "N/A") == 0 ? 3 : 2));
            while (!rest.empty() && (rest.front() == '-' || rest.front() == ':' || rest.front() == ','
                                     || static_cast<unsigned char>(rest.front()) >= 0x80))
                rest = util::trim(rest.substr(1));
            for (auto const& qid : expected_qids) {
                auto a = detail::degraded_answer(qid, kind, raw);
                a.explanation = util::single_line(rest);
                result.answers.push_back(std::move(a));
            }
            result.warnings.push_back("unstructured NA response");
            return result;
        }
        throw ParseError("no structured block in response", raw);
    }

    std::map<std::string, nlohmann::json const*> by_qid;
    std::set<std::string> expected(expected_qids.begin(), expected_qids.end());
    for (auto const& e : *entries) {
        std::string qid;
        if (auto it = e.find("qid"); it != e.end() && (it->is_string() || it->is_number()))
            qid = it->is_string() ? it->get<std::string>() : it->dump();
        else if (expected_qids.size() == 1 && entries->size() == 1)
            qid = expected_qids.front();
        if (qid.empty()) {
            result.warnings.push_back("entry without qid ignored");
            continue;
        }
        if (!expected.contains(qid)) {
            result.warnings.push_back("unexpected qid " + qid + " ignored");
            continue;
        }
        if (!by_qid.emplace(qid, &e).second)
            result.warnings.push_back("duplicate entry for " + qid + " ignored");
    }

    for (auto const& qid : expected_qids) {
        auto a = detail::degraded_answer(qid, kind, raw);
        auto found = by_qid.find(qid);
        if (found == by_qid.end()) {
            result.warnings.push_back(qid + ": absent from response, treated as NA");
            result.answers.push_back(std::move(a));
            continue;
        }
        auto const& e = *found->second;

        if (kind == QueryKind::qa) {
            auto it = e.find("answer");
            if (it != e.end())
                a.choice_idx = detail::parse_choice(*it);
            if (!a.choice_idx)
                result.warnings.push_back(qid + ": no usable answer letter");
        } else {
            if (auto it = e.find("intervals"); it != e.end()) {
                a.intervals = detail::parse_intervals(*it, qid, result.warnings);
            } else if (auto ans = e.find("answer"); ans != e.end() && ans->is_string() && detail::is_na_token(ans->get<std::string>())) {
                // "answer": "NA" is an accepted spelling of refusal.
            } else {
                result.warnings.push_back(qid + ": missing intervals, treated as NA");
            }
        }

        if (auto it = e.find("explanation"); it != e.end() && it->is_string()) {
            a.explanation = it->get<std::string>();
        } else {
            result.warnings.push_back(qid + ": missing explanation");
        }
        auto conf = e.find("confidence");
        a.confidence = detail::parse_confidence(conf == e.end() ? nullptr : &*conf, qid, result.warnings);
        result.answers.push_back(std::move(a));
    }
    return result;
}

/// Canonical structured block for a set of answers; parse_response inverts it.
inline std::string format_reference(std::span<LlmAnswer const> answers)
{
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (auto const& a : answers) {
        nlohmann::ordered_json e;
        e["qid"] = a.qid;
        if (a.kind == QueryKind::qa) {
            if (a.choice_idx)
                e["answer"] = std::string(1, index_to_letter(*a.choice_idx));
        } else if (a.intervals.empty()) {
            e["intervals"] = "NA";
        } else {
            auto iv = nlohmann::ordered_json::array();
            for (auto const& w : a.intervals)
                iv.push_back({w.start_s, w.end_s});
            e["intervals"] = iv;
        }
        e["explanation"] = a.explanation;
        e["confidence"] = a.confidence;
        arr.push_back(std::move(e));
    }
    return "```json\n" + arr.dump() + "\n```";
}

/// Clamps candidate windows to clip bounds. Windows entirely outside are dropped; if none
/// remain the answer becomes NA. Returns the number of windows changed or dropped.
inline std::size_t clamp_to_bounds(LlmAnswer& answer, Interval const& bounds)
{
    std::size_t touched = 0;
    std::vector<Interval> kept;
    for (auto w : answer.intervals) {
        Interval c{std::max(w.start_s, bounds.start_s), std::min(w.end_s, bounds.end_s)};
        if (c != w)
            ++touched;
        if (c.valid())
            kept.push_back(c);
    }
    answer.intervals = std::move(kept);
    return touched;
}

} // namespace egoqa
