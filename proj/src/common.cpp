#include "wearmil/common.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>

namespace wearmil {

namespace {

int parse_int(std::string_view s, std::size_t pos, std::size_t len, std::string_view whole) {
    if (pos + len > s.size()) throw DataError("malformed date/time '" + std::string(whole) + "'");
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
        char c = s[i];
        if (c < '0' || c > '9') throw DataError("malformed date/time '" + std::string(whole) + "'");
        v = v * 10 + (c - '0');
    }
    return v;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

Date make_date(int year, unsigned month, unsigned day) {
    std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                                    std::chrono::day{day}};
    if (!ymd.ok()) throw DataError("invalid calendar date");
    return Date{ymd};
}

Timestamp at_midnight(Date d) { return Timestamp{d}; }

Date date_of(Timestamp t) { return std::chrono::floor<std::chrono::days>(t); }

std::string format_date(Date d) {
    std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()),
                  unsigned(ymd.day()));
    return buf;
}

Date parse_date(std::string_view s) {
    if (s.size() < 10 || s[4] != '-' || s[7] != '-')
        throw DataError("malformed date '" + std::string(s) + "'");
    return make_date(parse_int(s, 0, 4, s), unsigned(parse_int(s, 5, 2, s)),
                     unsigned(parse_int(s, 8, 2, s)));
}

std::string format_timestamp(Timestamp t) {
    Date d = date_of(t);
    auto secs = (t - Timestamp{d}).count();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%sT%02lld:%02lld:%02lld", format_date(d).c_str(),
                  static_cast<long long>(secs / 3600), static_cast<long long>((secs / 60) % 60),
                  static_cast<long long>(secs % 60));
    return buf;
}

Timestamp parse_timestamp(std::string_view s) {
    Date d = parse_date(s.substr(0, std::min<std::size_t>(s.size(), 10)));
    if (s.size() == 10) return Timestamp{d};
    if (s.size() < 19 || (s[10] != 'T' && s[10] != ' ') || s[13] != ':' || s[16] != ':')
        throw DataError("malformed timestamp '" + std::string(s) + "'");
    int hh = parse_int(s, 11, 2, s), mm = parse_int(s, 14, 2, s), ss = parse_int(s, 17, 2, s);
    if (hh > 23 || mm > 59 || ss > 59) throw DataError("malformed timestamp '" + std::string(s) + "'");
    return Timestamp{d} + std::chrono::seconds{hh * 3600 + mm * 60 + ss};
}

std::string_view modality_name(Modality m) {
    switch (m) {
        case Modality::Ecg: return "ecg";
        case Modality::Activity: return "activity";
        case Modality::Sleep: return "sleep";
    }
    return "?";
}

std::string_view horizon_name(Horizon h) { return h == Horizon::M3 ? "M3" : "M6"; }

Horizon parse_horizon(std::string_view s) {
    if (s == "m3" || s == "M3") return Horizon::M3;
    if (s == "m6" || s == "M6") return Horizon::M6;
    throw ArgumentError("unknown horizon '" + std::string(s) + "' (expected m3 or m6)");
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
    return splitmix64(seed ^ splitmix64(fnv1a(label)));
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::string_view sub) {
    std::uint64_t h = fnv1a(label);
    h = fnv1a("/", h);
    h = fnv1a(sub, h);
    return splitmix64(seed ^ splitmix64(h));
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t a,
                          std::uint64_t b, std::uint64_t c) {
    std::uint64_t h = splitmix64(fnv1a(label));
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    h = splitmix64(h ^ c);
    return splitmix64(seed ^ h);
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw ArgumentError("Rng::below requires n > 0");
    // Rejection keeps the draw exactly uniform.
    const std::uint64_t limit = n * (UINT64_MAX / n);
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

}  // namespace wearmil
