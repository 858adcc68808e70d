#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "egoqa/digest.hpp"
#include "egoqa/llm.hpp"
#include "egoqa/refine.hpp"
#include "egoqa/util.hpp"

namespace egoqa {

/// Invalid or incomplete configuration; reported as a usage error.
class ConfigError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Every recognised key with its default. Keys are "section.name"; the config file uses
/// [section] headers and `name = value` lines.
inline std::map<std::string, std::string> const& config_defaults()
{
    static std::map<std::string, std::string> const defaults{
        {"paths.captions", ""},
        {"paths.queries", ""},
        {"paths.transcripts", ""},
        {"paths.predictions", ""},
        {"paths.output", ""},
        {"paths.stats", ""},
        {"digest.blocklist", "looks around;looks at the camera"},
        {"digest.relevance_threshold", "0.3"},
        {"digest.adjacency_threshold", "0.85"},
        {"digest.max_merge_group", "8"},
        {"digest.merge_mode", "llm"},
        {"refine.pad_alpha", "10"},
        {"refine.jitter_shift_max", "30"},
        {"refine.jitter_scale_low", "0.5"},
        {"refine.jitter_scale_high", "2"},
        {"refine.pos_iou", "0.5"},
        {"refine.neg_iou", "0.1"},
        {"refine.positives_per_gt", "4"},
        {"refine.attempt_budget", "10000"},
        {"llm.kind", "replay"},
        {"llm.endpoint", ""},
        {"llm.auth_env", ""},
        {"llm.wire", "plain"},
        {"llm.model", ""},
        {"llm.timeout_s", "120"},
        {"llm.max_attempts", "3"},
        {"llm.backoff_base_ms", "1000"},
        {"llm.backoff_cap_ms", "30000"},
        {"embedder.kind", "mock"},
        {"embedder.endpoint", ""},
        {"embedder.auth_env", ""},
        {"embedder.seed", "0"},
        {"embedder.dim", "64"},
        {"run.runs", "5"},
        {"run.seed", ""},
        {"run.in_flight_limit", "4"},
    };
    return defaults;
}

struct LlmSettings
{
    std::string kind;
    std::string endpoint;
    std::string auth_env;
    std::string wire;
    std::string model;
    std::chrono::seconds timeout{120};
    RetryPolicy retry;
};

struct EmbedderSettings
{
    std::string kind;
    std::string endpoint;
    std::string auth_env;
    std::uint64_t seed = 0;
    std::size_t dim = 64;
};

struct PipelineConfig
{
    std::map<std::string, std::string> values = config_defaults();

    /// Reads an INI file over the current values. Unknown keys are rejected.
    void load_file(std::string const& path)
    {
        boost::property_tree::ptree tree;
        try {
            boost::property_tree::read_ini(path, tree);
        } catch (boost::property_tree::ini_parser_error const& e) {
            throw ConfigError(std::string("cannot read config: ") + e.what());
        }
        for (auto const& [section, body] : tree) {
            if (body.empty()) {
                set(section, body.data());
                continue;
            }
            for (auto const& [name, leaf] : body)
                set(section + "." + name, leaf.data());
        }
    }

    void set(std::string const& key, std::string const& value)
    {
        auto it = values.find(key);
        if (it == values.end())
            throw ConfigError("unknown config key: " + key);
        it->second = util::trim(value);
    }

    [[nodiscard]] std::string const& get(std::string const& key) const
    {
        auto it = values.find(key);
        if (it == values.end())
            throw ConfigError("unknown config key: " + key);
        return it->second;
    }

    /// sha256 over the sorted key=value lines.
    [[nodiscard]] std::string hash() const
    {
        std::string canonical;
        for (auto const& [k, v] : values)
            canonical += k + "=" + v + "\n";
        return util::sha256_hex(canonical);
    }

    [[nodiscard]] std::uint64_t seed() const
    {
        auto const& s = get("run.seed");
        if (s.empty())
            throw ConfigError("run.seed is required (set it in the config or pass --seed)");
        return to_u64("run.seed");
    }

    [[nodiscard]] std::size_t runs() const { return to_positive("run.runs"); }
    [[nodiscard]] std::size_t in_flight_limit() const { return to_positive("run.in_flight_limit"); }

    [[nodiscard]] DigestConfig digest() const
    {
        DigestConfig d;
        d.blocklist.clear();
        std::string const& list = get("digest.blocklist");
        std::size_t pos = 0;
        while (pos <= list.size()) {
            auto next = list.find(';', pos);
            auto phrase = util::trim(list.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
            if (!phrase.empty())
                d.blocklist.push_back(phrase);
            if (next == std::string::npos)
                break;
            pos = next + 1;
        }
        d.relevance_threshold = to_double("digest.relevance_threshold");
        d.adjacency_threshold = to_double("digest.adjacency_threshold");
        d.max_merge_group = to_positive("digest.max_merge_group");
        auto const& mode = get("digest.merge_mode");
        if (mode == "llm")
            d.merge_mode = MergeMode::llm;
        else if (mode == "concat")
            d.merge_mode = MergeMode::concat;
        else
            throw ConfigError("digest.merge_mode must be llm or concat");
        try {
            d.validate();
        } catch (std::invalid_argument const& e) {
            throw ConfigError(e.what());
        }
        return d;
    }

    [[nodiscard]] RefineConfig refine() const
    {
        RefineConfig r;
        r.pad_alpha = to_double("refine.pad_alpha");
        r.jitter_shift_max = to_double("refine.jitter_shift_max");
        r.jitter_scale_low = to_double("refine.jitter_scale_low");
        r.jitter_scale_high = to_double("refine.jitter_scale_high");
        r.pos_iou = to_double("refine.pos_iou");
        r.neg_iou = to_double("refine.neg_iou");
        r.positives_per_gt = to_positive("refine.positives_per_gt");
        r.attempt_budget = to_positive("refine.attempt_budget");
        try {
            r.validate();
        } catch (std::invalid_argument const& e) {
            throw ConfigError(e.what());
        }
        return r;
    }

    [[nodiscard]] LlmSettings llm() const
    {
        LlmSettings s;
        s.kind = get("llm.kind");
        if (s.kind != "http" && s.kind != "replay")
            throw ConfigError("llm.kind must be http or replay");
        s.endpoint = get("llm.endpoint");
        s.auth_env = get("llm.auth_env");
        s.wire = get("llm.wire");
        if (s.wire != "plain" && s.wire != "chat")
            throw ConfigError("llm.wire must be plain or chat");
        s.model = get("llm.model");
        s.timeout = std::chrono::seconds(to_positive("llm.timeout_s"));
        s.retry.max_attempts = static_cast<int>(to_positive("llm.max_attempts"));
        s.retry.base = std::chrono::milliseconds(to_u64("llm.backoff_base_ms"));
        s.retry.cap = std::chrono::milliseconds(to_u64("llm.backoff_cap_ms"));
        if (s.kind == "http" && s.endpoint.empty())
            throw ConfigError("llm.endpoint is required for llm.kind = http");
        return s;
    }

    [[nodiscard]] EmbedderSettings embedder() const
    {
        EmbedderSettings s;
        s.kind = get("embedder.kind");
        if (s.kind != "http" && s.kind != "mock")
            throw ConfigError("embedder.kind must be http or mock");
        s.endpoint = get("embedder.endpoint");
        s.auth_env = get("embedder.auth_env");
        s.seed = to_u64("embedder.seed");
        s.dim = to_positive("embedder.dim");
        if (s.kind == "http" && s.endpoint.empty())
            throw ConfigError("embedder.endpoint is required for embedder.kind = http");
        return s;
    }

    /// A path key that must name an existing file.
    [[nodiscard]] std::string const& existing_path(std::string const& key) const
    {
        auto const& p = get(key);
        if (p.empty())
            throw ConfigError(key + " is required");
        if (std::ifstream probe(p); !probe)
            throw ConfigError(key + " does not exist: " + p);
        return p;
    }

    [[nodiscard]] std::string const& required(std::string const& key) const
    {
        auto const& v = get(key);
        if (v.empty())
            throw ConfigError(key + " is required");
        return v;
    }

private:
    [[nodiscard]] double to_double(std::string const& key) const
    {
        auto const& v = get(key);
        try {
            std::size_t used = 0;
            double d = std::stod(v, &used);
            if (used == v.size() && std::isfinite(d))
                return d;
        } catch (std::exception const&) {
        }
        throw ConfigError(key + " must be a number, got \"" + v + "\"");
    }

    [[nodiscard]] std::uint64_t to_u64(std::string const& key) const
    {
        auto const& v = get(key);
        try {
            std::size_t used = 0;
            if (!v.empty() && v.front() != '-') {
                auto n = std::stoull(v, &used);
                if (used == v.size())
                    return n;
            }
        } catch (std::exception const&) {
        }
        throw ConfigError(key + " must be a non-negative integer, got \"" + v + "\"");
    }

    [[nodiscard]] std::size_t to_positive(std::string const& key) const
    {
        auto n = to_u64(key);
        if (n == 0)
            throw ConfigError(key + " must be positive");
        return static_cast<std::size_t>(n);
    }
};

} // namespace egoqa
