#pragma once

#include <chrono>
#include <mutex>
#include <ostream>
#include <string>

#include <json.hpp>

namespace egoqa {

/// Structured event log: one JSON object per line. Thread-safe; a null sink discards events.
class Logger
{
public:
    Logger() = default;
    explicit Logger(std::ostream* sink) : sink_(sink) {}

    void event(std::string const& level, std::string const& stage, std::string const& message,
               nlohmann::json fields = nlohmann::json::object())
    {
        {
            std::lock_guard lock(mutex_);
            if (level == "warn")
                ++warnings_;
            else if (level == "error")
                ++errors_;
        }
        if (sink_ == nullptr)
            return;
        nlohmann::ordered_json line;
        line["level"] = level;
        line["stage"] = stage;
        line["msg"] = message;
        for (auto const& [k, v] : fields.items())
            line[k] = v;
        std::lock_guard lock(mutex_);
        *sink_ << line.dump() << '\n';
    }

    void info(std::string const& stage, std::string const& msg, nlohmann::json fields = nlohmann::json::object())
    {
        event("info", stage, msg, std::move(fields));
    }
    void warn(std::string const& stage, std::string const& msg, nlohmann::json fields = nlohmann::json::object())
    {
        event("warn", stage, msg, std::move(fields));
    }
    void error(std::string const& stage, std::string const& msg, nlohmann::json fields = nlohmann::json::object())
    {
        event("error", stage, msg, std::move(fields));
    }

    [[nodiscard]] std::size_t warnings() const
    {
        std::lock_guard lock(mutex_);
        return warnings_;
    }
    [[nodiscard]] std::size_t errors() const
    {
        std::lock_guard lock(mutex_);
        return errors_;
    }

private:
    std::ostream* sink_ = nullptr;
    mutable std::mutex mutex_;
    std::size_t warnings_ = 0;
    std::size_t errors_ = 0;
};

/// Milliseconds elapsed since construction.
class Stopwatch
{
public:
    [[nodiscard]] double elapsed_ms() const
    {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

} // namespace egoqa
