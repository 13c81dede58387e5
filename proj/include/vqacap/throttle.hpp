#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <set>
#include <thread>

#include "vqacap/errors.hpp"

namespace vqacap::throttle {

using Duration = std::chrono::nanoseconds;

// Injectable time source so rate-limit behavior is testable without real
// sleeps. now() is monotonic from an arbitrary epoch.
class Clock {
  public:
    virtual ~Clock() = default;
    virtual Duration now() = 0;
    virtual void sleep_for(Duration d) = 0;
};

class SteadyClock : public Clock {
  public:
    Duration now() override {
        return std::chrono::duration_cast<Duration>(std::chrono::steady_clock::now().time_since_epoch());
    }
    void sleep_for(Duration d) override { std::this_thread::sleep_for(d); }

    static SteadyClock& instance() {
        static SteadyClock clock;
        return clock;
    }
};

// Test clock: sleeping advances time instead of blocking. Meant for
// single-threaded rate-limit tests; concurrent sleepers each advance the
// shared clock, which is fine for upper-bound assertions only.
class VirtualClock : public Clock {
  public:
    Duration now() override {
        std::lock_guard lock(mutex_);
        return now_;
    }
    void sleep_for(Duration d) override { advance(d); }
    void advance(Duration d) {
        std::lock_guard lock(mutex_);
        now_ += d;
    }

  private:
    std::mutex mutex_;
    Duration now_{0};
};

// FIFO concurrency gate: at most `limit` holders at once, admitted strictly
// in arrival order (ticket numbers). A waiter that times out abandons its
// ticket so later arrivals are not blocked behind it.
class Turnstile {
  public:
    explicit Turnstile(std::size_t limit) : limit_(limit) {
        if (limit == 0) throw Error("Turnstile: limit must be positive");
    }

    class Pass {
      public:
        Pass() = default;
        explicit Pass(Turnstile* owner) : owner_(owner) {}
        Pass(Pass&& other) noexcept : owner_(other.owner_) { other.owner_ = nullptr; }
        Pass& operator=(Pass&& other) noexcept {
            if (this != &other) {
                release();
                owner_ = other.owner_;
                other.owner_ = nullptr;
            }
            return *this;
        }
        Pass(const Pass&) = delete;
        Pass& operator=(const Pass&) = delete;
        ~Pass() { release(); }

        void release() {
            if (owner_) {
                owner_->exit();
                owner_ = nullptr;
            }
        }

      private:
        Turnstile* owner_ = nullptr;
    };

    Pass enter(Duration timeout = Duration::max()) {
        std::unique_lock lock(mutex_);
        const std::uint64_t ticket = next_ticket_++;
        auto ready = [&] { return serving_ == ticket && active_ < limit_; };
        if (timeout == Duration::max()) {
            cv_.wait(lock, ready);
        } else {
            const auto deadline = std::chrono::steady_clock::now() + timeout;
            while (!ready()) {
                if (cv_.wait_until(lock, deadline) == std::cv_status::timeout && !ready()) {
                    abandoned_.insert(ticket);
                    skip_abandoned();
                    cv_.notify_all();
                    throw RetryableError("throttle: timed out waiting for an in-flight slot");
                }
            }
        }
        ++serving_;
        skip_abandoned();
        ++active_;
        cv_.notify_all();
        return Pass(this);
    }

    std::size_t active() {
        std::lock_guard lock(mutex_);
        return active_;
    }

  private:
    void exit() {
        std::lock_guard lock(mutex_);
        --active_;
        cv_.notify_all();
    }

    // Requires mutex_ held. serving_ may land on a ticket whose owner gave
    // up; step past every such ticket.
    void skip_abandoned() {
        while (abandoned_.erase(serving_) != 0) ++serving_;
    }

    std::mutex mutex_;
    std::condition_variable cv_;
    std::size_t limit_;
    std::size_t active_ = 0;
    std::uint64_t next_ticket_ = 0;
    std::uint64_t serving_ = 0;
    std::set<std::uint64_t> abandoned_;

    friend class Pass;
};

// Fixed-window rate limiter: at most `limit` acquisitions per `interval`.
// Callers over the budget sleep (via the injected clock) until the next
// window opens.
class RateLimiter {
  public:
    RateLimiter(std::size_t limit, Duration interval, Clock& clock = SteadyClock::instance())
        : limit_(limit), interval_(interval), clock_(clock) {
        if (limit == 0) throw Error("RateLimiter: limit must be positive");
        if (interval <= Duration::zero()) throw Error("RateLimiter: interval must be positive");
        window_start_ = clock_.now();
    }

    void acquire() {
        for (;;) {
            Duration wait;
            {
                std::lock_guard lock(mutex_);
                const Duration now = clock_.now();
                if (now - window_start_ >= interval_) {
                    const auto windows = (now - window_start_) / interval_;
                    window_start_ += interval_ * windows;
                    used_ = 0;
                }
                if (used_ < limit_) {
                    ++used_;
                    return;
                }
                wait = window_start_ + interval_ - now;
            }
            clock_.sleep_for(wait);
        }
    }

  private:
    std::mutex mutex_;
    std::size_t limit_;
    Duration interval_;
    Clock& clock_;
    Duration window_start_;
    std::size_t used_ = 0;
};

}  // namespace vqacap::throttle
