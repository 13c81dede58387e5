#pragma once

#include <chrono>
#include <filesystem>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>

#include "vqacap/completion.hpp"
#include "vqacap/completion_cache.hpp"
#include "vqacap/errors.hpp"
#include "vqacap/log.hpp"
#include "vqacap/throttle.hpp"

namespace vqacap::completion {

// Concurrency/rate limits applied below the gateway, so cache hits are
// never throttled. requests_per_interval 0 disables rate limiting.
struct ThrottleConfig {
    std::size_t max_in_flight = 4;
    std::size_t requests_per_interval = 0;
    throttle::Duration interval = std::chrono::seconds(1);
    throttle::Duration queue_timeout = throttle::Duration::max();
    throttle::Clock* clock = nullptr;
};

class ThrottledService : public CompletionService {
  public:
    ThrottledService(std::shared_ptr<CompletionService> upstream, ThrottleConfig config)
        : upstream_(std::move(upstream)),
          config_(config),
          turnstile_(config.max_in_flight) {
        if (config_.requests_per_interval > 0) {
            limiter_.emplace(config_.requests_per_interval, config_.interval,
                             config_.clock ? *config_.clock : throttle::SteadyClock::instance());
        }
    }

    CompletionResponse complete(const CompletionRequest& request) override {
        auto pass = turnstile_.enter(config_.queue_timeout);
        if (limiter_) limiter_->acquire();
        return upstream_->complete(request);
    }

  private:
    std::shared_ptr<CompletionService> upstream_;
    ThrottleConfig config_;
    throttle::Turnstile turnstile_;
    std::optional<throttle::RateLimiter> limiter_;
};

struct GatewayOptions {
    std::filesystem::path cache_dir;  // empty disables the disk cache
    int max_attempts = 4;
    throttle::Duration retry_backoff = std::chrono::milliseconds(250);
    throttle::Clock* clock = nullptr;  // backoff sleeps; tests inject a virtual clock
};

// Front door for all completion traffic: disk cache, coalescing of identical
// concurrent requests, bounded retries with exponential backoff, and
// client-side stop-string trimming. `cached` is true whenever the response
// was served without triggering a fresh upstream call.
class Gateway : public CompletionService {
  public:
    explicit Gateway(std::shared_ptr<CompletionService> upstream, GatewayOptions options = {})
        : upstream_(std::move(upstream)), options_(std::move(options)) {
        if (!options_.cache_dir.empty()) cache_ = std::make_unique<ResponseCache>(options_.cache_dir);
        if (options_.max_attempts < 1) throw Error("Gateway: max_attempts must be >= 1");
    }

    CompletionResponse complete(const CompletionRequest& request) override {
        request.validate();
        const std::string key = request.cache_key();

        if (cache_) {
            if (auto hit = cache_->load(key)) return finalize(std::move(*hit), request, /*cached=*/true);
        }

        std::shared_future<CompletionResponse> future;
        bool leader = false;
        {
            std::lock_guard lock(mutex_);
            auto it = in_flight_.find(key);
            if (it != in_flight_.end()) {
                future = it->second;
            } else {
                std::promise<CompletionResponse> promise;
                future = promise.get_future().share();
                in_flight_.emplace(key, future);
                promise_for_.emplace(key, std::move(promise));
                leader = true;
            }
        }

        if (!leader) return finalize(future.get(), request, /*cached=*/true);

        try {
            CompletionResponse resp = fetch_with_retries(request);
            if (cache_) cache_->store(key, resp);
            settle(key, [&](std::promise<CompletionResponse>& p) { p.set_value(resp); });
            return finalize(std::move(resp), request, /*cached=*/false);
        } catch (...) {
            auto eptr = std::current_exception();
            settle(key, [&](std::promise<CompletionResponse>& p) { p.set_exception(eptr); });
            throw;
        }
    }

  private:
    CompletionResponse fetch_with_retries(const CompletionRequest& request) {
        throttle::Clock& clock = options_.clock ? *options_.clock : throttle::SteadyClock::instance();
        throttle::Duration backoff = options_.retry_backoff;
        for (int attempt = 1;; ++attempt) {
            try {
                CompletionResponse resp = upstream_->complete(request);
                if (resp.choices.empty()) throw ProtocolError("completions: empty choice list");
                if (resp.choices.size() != static_cast<std::size_t>(request.num_samples))
                    throw ProtocolError("completions: got " + std::to_string(resp.choices.size()) +
                                        " choices, requested " + std::to_string(request.num_samples));
                return resp;
            } catch (const RetryableError& e) {
                if (attempt >= options_.max_attempts) throw;
                log::warn("completions attempt " + std::to_string(attempt) + " failed (" + e.what() +
                          "), retrying");
                clock.sleep_for(backoff);
                backoff *= 2;
            }
        }
    }

    template <typename Fn>
    void settle(const std::string& key, Fn&& fulfill) {
        std::promise<CompletionResponse> promise;
        {
            std::lock_guard lock(mutex_);
            auto it = promise_for_.find(key);
            promise = std::move(it->second);
            promise_for_.erase(it);
        }
        fulfill(promise);
        // Joiners that already hold the future are served; new arrivals go
        // back through the cache. Erase after fulfilling so no request ever
        // sees neither map entry nor cache entry.
        std::lock_guard lock(mutex_);
        in_flight_.erase(key);
    }

    static CompletionResponse finalize(CompletionResponse resp, const CompletionRequest& request, bool cached) {
        for (auto& choice : resp.choices) choice = trim_at_stop(std::move(choice), request.stop);
        resp.cached = cached;
        return resp;
    }

    std::shared_ptr<CompletionService> upstream_;
    GatewayOptions options_;
    std::unique_ptr<ResponseCache> cache_;
    std::mutex mutex_;
    std::unordered_map<std::string, std::shared_future<CompletionResponse>> in_flight_;
    std::unordered_map<std::string, std::promise<CompletionResponse>> promise_for_;
};

}  // namespace vqacap::completion
