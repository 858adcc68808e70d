#pragma once

#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include "egoqa/llm.hpp"
#include "egoqa/similarity.hpp"

namespace egoqa {

struct Endpoint
{
    std::string base;  // scheme://host[:port]
    std::string path;  // starts with '/'

    static Endpoint parse(std::string const& url)
    {
        auto const scheme = url.find("://");
        if (scheme == std::string::npos)
            throw std::invalid_argument("endpoint must be an absolute http(s) URL: " + url);
        auto const proto = url.substr(0, scheme);
        if (proto != "http" && proto != "https")
            throw std::invalid_argument("unsupported scheme in endpoint: " + url);
        auto const slash = url.find('/', scheme + 3);
        Endpoint e;
        e.base = url.substr(0, slash);
        e.path = slash == std::string::npos ? "/" : url.substr(slash);
        return e;
    }
};

struct HttpOptions
{
    std::string endpoint;
    /// Name of the environment variable holding a bearer token; empty for none.
    std::string auth_env;
    std::chrono::seconds timeout{120};
};

namespace detail {

inline std::string read_token(std::string const& env_name)
{
    if (env_name.empty())
        return {};
    char const* value = std::getenv(env_name.c_str());
    if (value == nullptr || *value == '\0')
        throw std::invalid_argument("auth token variable " + env_name + " is not set");
    return value;
}

/// POSTs a JSON document and returns the parsed JSON reply. Connection failures and
/// 408/429/5xx replies raise TransportError; anything else unexpected raises BackendError.
inline nlohmann::json post_json(Endpoint const& ep, std::string const& token, std::chrono::seconds timeout,
                                nlohmann::json const& body)
{
    httplib::Client client(ep.base);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!token.empty())
        headers.emplace("Authorization", "Bearer " + token);

    auto res = client.Post(ep.path, headers, body.dump(), "application/json");
    if (!res)
        throw TransportError("POST " + ep.base + ep.path + " failed: " + httplib::to_string(res.error()));
    if (res->status == 408 || res->status == 429 || res->status >= 500)
        throw TransportError("POST " + ep.path + " returned HTTP " + std::to_string(res->status));
    if (res->status != 200)
        throw BackendError("POST " + ep.path + " returned HTTP " + std::to_string(res->status));
    auto doc = nlohmann::json::parse(res->body, nullptr, false);
    if (doc.is_discarded())
        throw BackendError("POST " + ep.path + " returned malformed JSON");
    return doc;
}

} // namespace detail

/// Wire formats for the completion endpoint.
enum class LlmWire {
    /// {"system","user","seed"?} -> {"text"}
    plain,
    /// chat-completion message array -> choices[0].message.content
    chat,
};

class HttpLlm final : public LlmBackend
{
public:
    HttpLlm(HttpOptions options, LlmWire wire = LlmWire::plain, std::string model = {})
        : endpoint_(Endpoint::parse(options.endpoint)), token_(detail::read_token(options.auth_env)),
          timeout_(options.timeout), wire_(wire), model_(std::move(model))
    {
    }

    std::string complete(CompletionRequest const& request) override
    {
        nlohmann::json body;
        if (wire_ == LlmWire::plain) {
            body["system"] = request.system_text;
            body["user"] = request.user_text;
        } else {
            if (!model_.empty())
                body["model"] = model_;
            body["messages"] = nlohmann::json::array({{{"role", "system"}, {"content", request.system_text}},
                                                      {{"role", "user"}, {"content", request.user_text}}});
        }
        if (request.seed)
            body["seed"] = *request.seed;

        auto const doc = detail::post_json(endpoint_, token_, timeout_, body);
        if (wire_ == LlmWire::plain) {
            if (!doc.is_object() || !doc.contains("text") || !doc["text"].is_string())
                throw BackendError("completion reply lacks a \"text\" string");
            return doc["text"].get<std::string>();
        }
        auto const* content = doc.is_object() && doc.contains("choices") && doc["choices"].is_array()
                                      && !doc["choices"].empty() && doc["choices"][0].contains("message")
                                  ? &doc["choices"][0]["message"]
                                  : nullptr;
        if (content == nullptr || !content->contains("content") || !(*content)["content"].is_string())
            throw BackendError("chat reply lacks choices[0].message.content");
        return (*content)["content"].get<std::string>();
    }

    [[nodiscard]] std::string kind() const override { return "http"; }

private:
    Endpoint endpoint_;
    std::string token_;
    std::chrono::seconds timeout_;
    LlmWire wire_;
    std::string model_;
};

/// {"texts": [...]} -> {"embeddings": [[...], ...]}
class HttpEmbedder final : public EmbedderBackend
{
public:
    explicit HttpEmbedder(HttpOptions options, RetryPolicy retry = {}, Sleeper sleep = real_sleeper())
        : endpoint_(Endpoint::parse(options.endpoint)), token_(detail::read_token(options.auth_env)),
          timeout_(options.timeout), retry_(retry), sleep_(std::move(sleep))
    {
    }

    std::vector<Embedding> embed(std::span<std::string const> texts) override
    {
        nlohmann::json body;
        body["texts"] = std::vector<std::string>(texts.begin(), texts.end());
        auto const doc = with_retry(retry_, sleep_, [&] { return detail::post_json(endpoint_, token_, timeout_, body); });
        if (!doc.is_object() || !doc.contains("embeddings") || !doc["embeddings"].is_array())
            throw BackendError("embedding reply lacks an \"embeddings\" array");
        std::vector<Embedding> out;
        for (auto const& row : doc["embeddings"]) {
            if (!row.is_array())
                throw BackendError("embedding row is not an array");
            std::vector<double> v;
            v.reserve(row.size());
            for (auto const& x : row) {
                if (!x.is_number())
                    throw BackendError("non-numeric embedding component");
                v.push_back(x.get<double>());
            }
            out.emplace_back(std::move(v));
        }
        if (out.size() != texts.size())
            throw BackendError("count mismatch: " + std::to_string(out.size()) + " embeddings for "
                               + std::to_string(texts.size()) + " texts");
        return out;
    }

    [[nodiscard]] std::string kind() const override { return "http"; }

private:
    Endpoint endpoint_;
    std::string token_;
    std::chrono::seconds timeout_;
    RetryPolicy retry_;
    Sleeper sleep_;
};

} // namespace egoqa
