#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ahst {

// Error taxonomy. Everything the library throws derives from Error so the
// CLI can map failure classes to exit codes in one place.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error { using Error::Error; };     // tensor dimension mismatch
struct ContractError : Error { using Error::Error; };  // violated precondition
struct IngestError : Error { using Error::Error; };    // malformed input file
struct WindowError : Error { using Error::Error; };    // insufficient history
struct ConfigError : Error { using Error::Error; };    // bad run configuration
struct TrainError : Error { using Error::Error; };     // NaN gradients, divergence
struct IoError : Error { using Error::Error; };        // missing/unreadable file

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

// Deterministic random source. The uniform/normal transforms are written out
// here instead of using <random> distributions, whose output is
// implementation-defined; given the same seed every standard library
// produces the same stream from this class.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1) with 53 bits of randomness.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; the spare value is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(kTwoPi * u2);
    have_spare_ = true;
    return r * std::cos(kTwoPi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // [0, n). Modulo bias is negligible for the shuffle sizes used here.
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(gen_() % static_cast<uint64_t>(n));
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(uniform_int(i + 1))]);
    }
  }

  // State round-trips through text exactly; the cached normal is stored as
  // its raw bit pattern.
  std::string save_state() const {
    uint64_t bits = 0;
    static_assert(sizeof(bits) == sizeof(spare_));
    std::memcpy(&bits, &spare_, sizeof(bits));
    std::ostringstream os;
    os << gen_ << ' ' << (have_spare_ ? 1 : 0) << ' ' << bits;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    int spare_flag = 0;
    uint64_t bits = 0;
    is >> gen_ >> spare_flag >> bits;
    if (!is) throw IoError("bad rng state string");
    have_spare_ = spare_flag != 0;
    std::memcpy(&spare_, &bits, sizeof(bits));
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string to_hex(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

// ---- Calendar helpers (UTC, no time zones) ----

// Days since 1970-01-01 for a civil date (Howard Hinnant's algorithm).
inline int64_t days_from_civil(int64_t y, int64_t m, int64_t d) {
  y -= m <= 2;
  const int64_t era = (y >= 0 ? y : y - 399) / 400;
  const int64_t yoe = y - era * 400;
  const int64_t doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + doe - 719468;
}

inline void civil_from_days(int64_t z, int64_t& y, int64_t& m, int64_t& d) {
  z += 719468;
  const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const int64_t doe = z - era * 146097;
  const int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const int64_t mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y = yoe + era * 400 + (m <= 2);
}

// Accepts "YYYY-MM-DDTHH:MM:SS" or with a space separator. Returns epoch
// seconds; throws IngestError on anything else.
inline int64_t parse_iso8601(std::string_view s) {
  auto bad = [&] { throw IngestError("bad timestamp '" + std::string(s) + "'"); };
  if (s.size() != 19) bad();
  auto digits = [&](int pos, int len) -> int64_t {
    int64_t v = 0;
    for (int i = pos; i < pos + len; ++i) {
      if (s[static_cast<size_t>(i)] < '0' || s[static_cast<size_t>(i)] > '9') bad();
      v = v * 10 + (s[static_cast<size_t>(i)] - '0');
    }
    return v;
  };
  if (s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':' || s[16] != ':') bad();
  const int64_t y = digits(0, 4), mo = digits(5, 2), d = digits(8, 2);
  const int64_t h = digits(11, 2), mi = digits(14, 2), se = digits(17, 2);
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || se > 59) bad();
  return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + se;
}

inline std::string format_iso8601(int64_t epoch_s) {
  int64_t days = epoch_s / 86400;
  int64_t rem = epoch_s % 86400;
  if (rem < 0) {
    rem += 86400;
    days -= 1;
  }
  int64_t y, m, d;
  civil_from_days(days, y, m, d);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04lld-%02lld-%02lldT%02lld:%02lld:%02lld",
                static_cast<long long>(y), static_cast<long long>(m), static_cast<long long>(d),
                static_cast<long long>(rem / 3600), static_cast<long long>((rem / 60) % 60),
                static_cast<long long>(rem % 60));
  return buf;
}

// Monday = 0 ... Sunday = 6. 1970-01-01 was a Thursday.
inline int day_of_week(int64_t epoch_s) {
  int64_t days = epoch_s / 86400;
  if (epoch_s % 86400 < 0) days -= 1;
  int64_t dow = (days + 3) % 7;
  if (dow < 0) dow += 7;
  return static_cast<int>(dow);
}

}  // namespace ahst
