#pragma once

#include <atomic>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace notelm {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic randomness. All sampling goes through Rng so that runs are
// reproducible bit-for-bit from a seed, independent of the standard library's
// distribution implementations.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a64_bytes(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64_bytes(s.data(), s.size(), h);
}

class Rng {
public:
    explicit Rng(uint64_t seed = 0) {
        // scramble the seed so nearby seeds give unrelated streams
        uint64_t s = seed;
        state_[0] = splitmix64(s);
        state_[1] = splitmix64(s);
        state_[2] = splitmix64(s);
        state_[3] = splitmix64(s);
    }

    // xoshiro256**
    uint64_t next_u64() {
        auto rotl = [](uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // uniform integer in [0, n)
    uint64_t uniform(uint64_t n) {
        if (n == 0) throw Error("Rng::uniform: n must be positive");
        // rejection sampling keeps the draw unbiased and deterministic
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    // uniform real in [0, 1)
    double uniform_real() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform_real() < p; }

    // standard normal via Box-Muller; second value cached
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
        double u2 = uniform_real();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    template <typename Vec>
    void shuffle(Vec& v) {
        // Fisher-Yates
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    template <typename Vec>
    const typename Vec::value_type& pick(const Vec& v) {
        if (v.empty()) throw Error("Rng::pick: empty collection");
        return v[static_cast<size_t>(uniform(v.size()))];
    }

    // independent child stream, stable under the tag
    Rng child(std::string_view tag) const {
        uint64_t mixed = state_[0] ^ fnv1a64(tag);
        return Rng(mixed);
    }

private:
    uint64_t state_[4];
    double cached_ = 0.0;
    bool has_cached_ = false;
};

// stable seed derivation for named sub-streams
inline uint64_t derive_seed(uint64_t seed, std::string_view tag) {
    uint64_t s = seed ^ fnv1a64(tag);
    return splitmix64(s);
}

// ---------------------------------------------------------------------------
// Number formatting. CSV and JSON outputs must be byte-stable across runs, so
// all floating-point serialization uses shortest round-trip form.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw Error("format_double failed");
    return std::string(buf, p);
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cooperative interrupt flag, set by the CLI's SIGINT handler. Training loops
// poll it once per iteration and return early so a checkpoint can be written.
// ---------------------------------------------------------------------------

inline std::atomic<bool>& interrupt_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}

// ---------------------------------------------------------------------------
// Tiny static-partition thread pool for the matmul kernels. Each output row
// is computed start-to-finish by exactly one thread, so results are bitwise
// identical for any worker count. Only the thread that owns the pool may fan
// out; calls from worker threads run inline (harness cases run in their own
// threads and must not share the pool).
// ---------------------------------------------------------------------------

class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    void set_threads(int n) {
        std::lock_guard<std::mutex> lk(config_mutex_);
        stop_workers();
        threads_ = n < 1 ? 1 : n;
        if (threads_ > 1) start_workers(threads_ - 1);
    }

    int threads() const { return threads_; }

    // fn(begin, end) over [0, n) in contiguous chunks
    void parallel_for(size_t n, const std::function<void(size_t, size_t)>& fn) {
        if (n == 0) return;
        if (threads_ <= 1 || workers_.empty() || in_worker_ ||
            std::this_thread::get_id() != owner_) {
            fn(0, n);
            return;
        }
        size_t parts = std::min<size_t>(static_cast<size_t>(threads_), n);
        size_t chunk = (n + parts - 1) / parts;
        {
            std::lock_guard<std::mutex> lk(mutex_);
            task_ = &fn;
            task_n_ = n;
            task_chunk_ = chunk;
            task_parts_ = parts;
            next_part_ = 1;  // part 0 runs on the calling thread
            pending_ = parts - 1;
            ++generation_;
        }
        cv_.notify_all();
        fn(0, std::min(chunk, n));
        std::unique_lock<std::mutex> lk(mutex_);
        done_cv_.wait(lk, [&] { return pending_ == 0; });
        task_ = nullptr;
    }

    ~ThreadPool() { stop_workers(); }

private:
    ThreadPool() : owner_(std::this_thread::get_id()) {}

    void start_workers(int n) {
        stopping_ = false;
        for (int i = 0; i < n; ++i) {
            workers_.emplace_back([this] {
                in_worker_ = true;
                uint64_t seen = 0;
                for (;;) {
                    std::unique_lock<std::mutex> lk(mutex_);
                    cv_.wait(lk, [&] { return stopping_ || generation_ != seen; });
                    if (stopping_) return;
                    seen = generation_;
                    for (;;) {
                        size_t part = next_part_;
                        if (part >= task_parts_) break;
                        ++next_part_;
                        lk.unlock();
                        size_t begin = part * task_chunk_;
                        size_t end = std::min(begin + task_chunk_, task_n_);
                        if (begin < end) (*task_)(begin, end);
                        lk.lock();
                        --pending_;
                        if (pending_ == 0) done_cv_.notify_all();
                    }
                }
            });
        }
    }

    void stop_workers() {
        {
            std::lock_guard<std::mutex> lk(mutex_);
            stopping_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
        workers_.clear();
    }

    std::mutex config_mutex_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    std::vector<std::thread> workers_;
    std::thread::id owner_;
    int threads_ = 1;
    bool stopping_ = false;
    const std::function<void(size_t, size_t)>* task_ = nullptr;
    size_t task_n_ = 0, task_chunk_ = 0, task_parts_ = 0, next_part_ = 0, pending_ = 0;
    uint64_t generation_ = 0;
    static thread_local bool in_worker_;
};

inline thread_local bool ThreadPool::in_worker_ = false;

inline void set_num_threads(int n) { ThreadPool::instance().set_threads(n); }

inline void parallel_for(size_t n, const std::function<void(size_t, size_t)>& fn) {
    ThreadPool::instance().parallel_for(n, fn);
}

}  // namespace notelm
