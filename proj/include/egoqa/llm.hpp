#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "egoqa/similarity.hpp"
#include "egoqa/util.hpp"

namespace egoqa {

/// A system/user prompt pair plus the queries whose answers it requests.
struct Prompt
{
    std::string system_text;
    std::string user_text;
    std::vector<std::string> query_ids;

    friend bool operator==(Prompt const&, Prompt const&) = default;
};

/// Key used by transcript files: sha256 over system text, a blank line, then user text.
inline std::string prompt_digest(std::string_view system_text, std::string_view user_text)
{
    std::string joined;
    joined.reserve(system_text.size() + user_text.size() + 2);
    joined.append(system_text).append("\n\n").append(user_text);
    return util::sha256_hex(joined);
}

inline std::string prompt_digest(Prompt const& p) { return prompt_digest(p.system_text, p.user_text); }

struct CompletionRequest
{
    std::string system_text;
    std::string user_text;
    std::optional<std::uint64_t> seed;
    std::size_t run_index = 0;
};

class LlmBackend
{
public:
    virtual ~LlmBackend() = default;

    /// Raw completion text. Throws TransportError (retryable) or BackendError.
    virtual std::string complete(CompletionRequest const& request) = 0;
    [[nodiscard]] virtual std::string kind() const = 0;
};

using Transcripts = std::map<std::string, std::map<std::string, std::string>>;

inline std::string run_key(std::size_t run_index) { return "run_" + std::to_string(run_index); }

inline Transcripts parse_transcripts(nlohmann::json const& doc)
{
    if (!doc.is_object())
        throw DataError("transcripts document must be an object");
    Transcripts out;
    for (auto const& [digest, runs] : doc.items()) {
        if (!runs.is_object())
            throw DataError("transcripts entry " + digest + " must be an object");
        for (auto const& [run, text] : runs.items()) {
            if (!text.is_string())
                throw DataError("transcript " + digest + "/" + run + " must be a string");
            out[digest][run] = text.get<std::string>();
        }
    }
    return out;
}

inline Transcripts load_transcripts(std::string const& path)
{
    auto in = util::open_input(path);
    try {
        return parse_transcripts(nlohmann::json::parse(in));
    } catch (nlohmann::json::parse_error const& e) {
        throw DataError("malformed transcripts file " + path + ": " + e.what());
    }
}

inline void write_transcripts(std::ostream& os, Transcripts const& transcripts)
{
    nlohmann::json doc = nlohmann::json::object();
    for (auto const& [digest, runs] : transcripts) {
        for (auto const& [run, text] : runs)
            doc[digest][run] = text;
    }
    os << doc.dump(2) << '\n';
}

/// Returns recorded transcripts keyed by (prompt digest, run index). Read-only after construction.
class ReplayLlm final : public LlmBackend
{
public:
    explicit ReplayLlm(Transcripts transcripts) : transcripts_(std::move(transcripts)) {}

    std::string complete(CompletionRequest const& request) override
    {
        auto const digest = prompt_digest(request.system_text, request.user_text);
        auto it = transcripts_.find(digest);
        if (it == transcripts_.end())
            throw BackendError("no transcript for prompt " + digest);
        auto run = it->second.find(run_key(request.run_index));
        if (run == it->second.end())
            throw BackendError("no transcript for prompt " + digest + " " + run_key(request.run_index));
        return run->second;
    }

    [[nodiscard]] std::string kind() const override { return "replay"; }

private:
    Transcripts transcripts_;
};

/// Backend driven by a callable; used for rule-based stand-ins and tests.
class FunctionLlm final : public LlmBackend
{
public:
    using Fn = std::function<std::string(CompletionRequest const&)>;

    explicit FunctionLlm(Fn fn, std::string kind = "scripted") : fn_(std::move(fn)), kind_(std::move(kind)) {}

    std::string complete(CompletionRequest const& request) override { return fn_(request); }
    [[nodiscard]] std::string kind() const override { return kind_; }

private:
    Fn fn_;
    std::string kind_;
};

/// Forwards to another backend and keeps every successful completion for later replay.
class RecordingLlm final : public LlmBackend
{
public:
    explicit RecordingLlm(LlmBackend& inner) : inner_(inner) {}

    std::string complete(CompletionRequest const& request) override
    {
        auto text = inner_.complete(request);
        std::lock_guard lock(mutex_);
        recorded_[prompt_digest(request.system_text, request.user_text)][run_key(request.run_index)] = text;
        return text;
    }

    [[nodiscard]] std::string kind() const override { return inner_.kind(); }
    [[nodiscard]] Transcripts transcripts() const
    {
        std::lock_guard lock(mutex_);
        return recorded_;
    }

private:
    LlmBackend& inner_;
    mutable std::mutex mutex_;
    Transcripts recorded_;
};

/// Capped exponential backoff: delay before attempt k+1 is min(cap, base * 2^(k-1)).
struct RetryPolicy
{
    int max_attempts = 3;
    std::chrono::milliseconds base{1000};
    std::chrono::milliseconds cap{30000};

    [[nodiscard]] std::chrono::milliseconds delay_after(int attempt) const
    {
        auto delay = base;
        for (int i = 1; i < attempt && delay < cap; ++i)
            delay *= 2;
        return std::min(delay, cap);
    }
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline Sleeper real_sleeper()
{
    return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

/// Calls fn, retrying TransportError under the policy. Other exceptions propagate at once.
template <typename Fn>
auto with_retry(RetryPolicy const& policy, Sleeper const& sleep, Fn&& fn, int* attempts_out = nullptr)
{
    for (int attempt = 1;; ++attempt) {
        if (attempts_out != nullptr)
            *attempts_out = attempt;
        try {
            return fn();
        } catch (TransportError const&) {
            if (attempt >= policy.max_attempts)
                throw;
            if (sleep)
                sleep(policy.delay_after(attempt));
        }
    }
}

struct RunResponse
{
    std::size_t run_index = 0;
    std::string text;
};

struct RunFailure
{
    std::size_t run_index = 0;
    int attempts = 0;
    std::string message;
};

struct RunOutcome
{
    std::vector<RunResponse> responses;
    std::vector<RunFailure> failures;
};

/// Issues `runs` independent completions of one prompt. Run i is sampled with
/// util::derive_seed(seed, i). Runs that still fail after retries are reported, not thrown.
inline RunOutcome run(Prompt const& prompt, LlmBackend& backend, std::size_t runs, std::uint64_t seed,
                      RetryPolicy const& policy = {}, Sleeper const& sleep = real_sleeper())
{
    if (runs == 0)
        throw std::invalid_argument("run: runs must be at least 1");
    RunOutcome out;
    for (std::size_t i = 0; i < runs; ++i) {
        CompletionRequest req{prompt.system_text, prompt.user_text, util::derive_seed(seed, i), i};
        int attempts = 0;
        try {
            out.responses.push_back({i, with_retry(policy, sleep, [&] { return backend.complete(req); }, &attempts)});
        } catch (std::exception const& e) {
            out.failures.push_back({i, attempts, e.what()});
        }
    }
    return out;
}

} // namespace egoqa
