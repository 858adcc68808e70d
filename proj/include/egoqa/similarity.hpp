#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "egoqa/util.hpp"

namespace egoqa {

/// Failure talking to a remote backend. Callers may retry.
class TransportError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Backend returned something that breaks its contract. Not retryable.
class BackendError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Non-zero, finite embedding vector.
class Embedding
{
public:
    explicit Embedding(std::vector<double> values) : values_(std::move(values))
    {
        if (values_.empty())
            throw BackendError("empty embedding");
        bool nonzero = false;
        for (double v : values_) {
            if (!std::isfinite(v))
                throw BackendError("non-finite embedding component");
            nonzero = nonzero || v != 0.0;
        }
        if (!nonzero)
            throw BackendError("zero embedding");
    }

    [[nodiscard]] std::size_t dim() const noexcept { return values_.size(); }
    [[nodiscard]] std::span<double const> values() const noexcept { return values_; }

    friend bool operator==(Embedding const&, Embedding const&) = default;

private:
    std::vector<double> values_;
};

/// Cosine similarity, clamped to [-1, 1]. Evaluation is symmetric in its arguments.
inline double cosine(Embedding const& a, Embedding const& b)
{
    if (a.dim() != b.dim())
        throw std::invalid_argument("cosine: dimension mismatch");
    auto const x = a.values();
    auto const y = b.values();
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        dot += x[i] * y[i];
        nx += x[i] * x[i];
        ny += y[i] * y[i];
    }
    // nx * ny is commutative, so swapping a and b yields the same bits.
    double const c = dot / std::sqrt(nx * ny);
    return std::clamp(c, -1.0, 1.0);
}

class EmbedderBackend
{
public:
    virtual ~EmbedderBackend() = default;

    /// One embedding per text, in order. May throw TransportError or BackendError.
    virtual std::vector<Embedding> embed(std::span<std::string const> texts) = 0;

    /// True when the backend cannot serve concurrent calls.
    [[nodiscard]] virtual bool single_flight() const noexcept { return false; }
    [[nodiscard]] virtual std::string kind() const = 0;
};

/// Validating front door for every backend call.
inline std::vector<Embedding> embed_batch(EmbedderBackend& backend, std::span<std::string const> texts)
{
    if (texts.empty())
        throw std::invalid_argument("embed_batch: no texts");
    for (auto const& t : texts) {
        if (t.empty())
            throw std::invalid_argument("embed_batch: empty text");
    }
    auto out = backend.embed(texts);
    if (out.size() != texts.size())
        throw BackendError("count mismatch: " + std::to_string(out.size()) + " embeddings for "
                           + std::to_string(texts.size()) + " texts");
    for (auto const& e : out) {
        if (e.dim() != out.front().dim())
            throw BackendError("dimension mismatch within batch");
    }
    return out;
}

/// Seeded feature hashing of character trigrams and whole words into a fixed number of
/// signed buckets. Identical texts embed identically; unrelated texts land near zero.
class MockEmbedder final : public EmbedderBackend
{
public:
    explicit MockEmbedder(std::uint64_t seed = 0, std::size_t dim = 64) : seed_(seed), dim_(dim)
    {
        if (dim_ == 0)
            throw std::invalid_argument("MockEmbedder: dim must be positive");
    }

    std::vector<Embedding> embed(std::span<std::string const> texts) override
    {
        std::vector<Embedding> out;
        out.reserve(texts.size());
        for (auto const& t : texts)
            out.push_back(embed_one(t));
        return out;
    }

    [[nodiscard]] Embedding embed_one(std::string const& text) const
    {
        std::vector<double> v(dim_, 0.0);
        auto const add = [&](std::string_view feature, double weight) {
            auto const h = util::mix64(util::fnv1a64(feature) ^ util::mix64(seed_));
            auto const bucket = static_cast<std::size_t>(h % dim_);
            v[bucket] += ((h >> 63) != 0U ? -1.0 : 1.0) * weight;
        };
        auto const padded = " " + util::to_lower(text) + " ";
        for (std::size_t i = 0; i + 3 <= padded.size(); ++i)
            add(std::string_view(padded).substr(i, 3), 1.0);
        std::size_t pos = 0;
        while (pos < padded.size()) {
            auto const start = padded.find_first_not_of(' ', pos);
            if (start == std::string::npos)
                break;
            auto const stop = std::min(padded.find(' ', start), padded.size());
            add("w:" + padded.substr(start, stop - start), 2.0);
            pos = stop;
        }
        if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) {
            // Features cancelled out; fall back to a one-hot of the whole text.
            v[util::mix64(util::fnv1a64(text) ^ seed_) % dim_] = 1.0;
        }
        return Embedding(std::move(v));
    }

    [[nodiscard]] std::string kind() const override { return "mock"; }

private:
    std::uint64_t seed_;
    std::size_t dim_;
};

/// Memoizes another backend by exact text bytes and serializes calls to single-flight backends.
class CachingEmbedder final : public EmbedderBackend
{
public:
    explicit CachingEmbedder(std::shared_ptr<EmbedderBackend> inner) : inner_(std::move(inner)) {}

    std::vector<Embedding> embed(std::span<std::string const> texts) override
    {
        std::vector<std::string> missing;
        {
            std::lock_guard lock(mutex_);
            std::set<std::string_view> queued;
            for (auto const& t : texts) {
                if (!cache_.contains(t) && queued.insert(t).second)
                    missing.push_back(t);
            }
        }
        if (!missing.empty()) {
            std::unique_lock<std::mutex> flight(call_mutex_, std::defer_lock);
            if (inner_->single_flight())
                flight.lock();
            auto fresh = embed_batch(*inner_, missing);
            if (flight.owns_lock())
                flight.unlock();
            std::lock_guard lock(mutex_);
            for (std::size_t i = 0; i < missing.size(); ++i)
                cache_.insert_or_assign(missing[i], std::move(fresh[i]));
        }
        std::lock_guard lock(mutex_);
        std::vector<Embedding> out;
        out.reserve(texts.size());
        for (auto const& t : texts)
            out.push_back(cache_.at(t));
        return out;
    }

    [[nodiscard]] std::string kind() const override { return inner_->kind(); }
    [[nodiscard]] std::size_t cached() const
    {
        std::lock_guard lock(mutex_);
        return cache_.size();
    }

private:
    std::shared_ptr<EmbedderBackend> inner_;
    mutable std::mutex mutex_;
    std::mutex call_mutex_;
    std::map<std::string, Embedding> cache_;
};

} // namespace egoqa
