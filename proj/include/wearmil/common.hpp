#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace wearmil {

// Error taxonomy shared by every module. The C API maps each class onto a
// status code, the CLI onto an exit code.
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    FormatError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset(offset) {}
    std::uint64_t offset;
};

// Naive local calendar dates and timestamps; no timezone handling.
using Date = std::chrono::sys_days;
using Timestamp = std::chrono::sys_seconds;

Date make_date(int year, unsigned month, unsigned day);
Timestamp at_midnight(Date d);
Date date_of(Timestamp t);
// "YYYY-MM-DD"
std::string format_date(Date d);
Date parse_date(std::string_view s);
// "YYYY-MM-DDTHH:MM:SS"
std::string format_timestamp(Timestamp t);
Timestamp parse_timestamp(std::string_view s);

enum class Modality : std::uint8_t { Ecg = 0, Activity = 1, Sleep = 2 };
inline constexpr int kModalityCount = 3;
std::string_view modality_name(Modality m);

enum class Horizon { M3, M6 };
std::string_view horizon_name(Horizon h);  // "M3" / "M6"
Horizon parse_horizon(std::string_view s);  // accepts m3/M3/m6/M6

/// Derives an independent 64-bit seed from the global seed and a path of
/// labels (stage name, patient id, ...). FNV-1a over the labels, then a
/// splitmix64 finalizer mixed with the seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::string_view sub);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t a,
                          std::uint64_t b = 0, std::uint64_t c = 0);

/// mt19937_64 with distribution code written out so sequences do not depend
/// on the standard library's (unspecified) distribution algorithms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    // [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n), n > 0. Rejection-free multiply-shift.
    std::uint64_t below(std::uint64_t n);
    double normal();
    double normal(double mean, double sd) { return mean + sd * normal(); }
    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Shortest round-trippable decimal form of a double ("%.17g" trimmed).
std::string format_double(double v);

/// Either a value or the reason it was rejected. Rejection is an ordinary
/// outcome (low-quality window, sparse week), not an error.
template <class T>
class Outcome {
public:
    Outcome(T value) : value_(std::move(value)) {}
    static Outcome reject(std::string reason) { return Outcome(std::move(reason), 0); }

    bool ok() const { return value_.has_value(); }
    explicit operator bool() const { return ok(); }
    const T& value() const { return *value_; }
    T& value() { return *value_; }
    const std::string& reason() const { return reason_; }

private:
    Outcome(std::string reason, int) : reason_(std::move(reason)) {}
    std::optional<T> value_;
    std::string reason_;
};

}  // namespace wearmil
