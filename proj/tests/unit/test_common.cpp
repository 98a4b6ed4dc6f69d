#include <doctest.h>

#include <cmath>
#include <set>

#include "sentinel/common/binary_io.hpp"
#include "sentinel/common/hash.hpp"
#include "sentinel/common/rng.hpp"
#include "sentinel/common/time.hpp"

using namespace sentinel;

TEST_CASE("rfc3339 parsing") {
  CHECK(parse_rfc3339("2024-01-01T00:00:00Z") == 1704067200000);
  CHECK(parse_rfc3339("2024-01-01T00:00:00.123Z") == 1704067200123);
  CHECK(parse_rfc3339("2024-01-01T00:00:00.123456Z") == 1704067200123);
  CHECK(parse_rfc3339("2024-01-01T02:00:00+02:00") == 1704067200000);
  CHECK(parse_rfc3339("2024-02-29T12:00:00Z").has_value());
  CHECK_FALSE(parse_rfc3339("2023-02-29T12:00:00Z").has_value());
  CHECK_FALSE(parse_rfc3339("2024-01-01").has_value());
  CHECK_FALSE(parse_rfc3339("2024-01-01T00:00:00").has_value());
  CHECK_FALSE(parse_rfc3339("garbage").has_value());
}

TEST_CASE("rfc3339 formatting round-trips") {
  for (TimeMs t : {TimeMs{1}, TimeMs{1704067200123}, TimeMs{951782400000}, TimeMs{4102444799999}}) {
    CHECK(parse_rfc3339(format_rfc3339(t)) == t);
  }
  CHECK(format_rfc3339(1704067200000) == "2024-01-01T00:00:00.000Z");
}

TEST_CASE("duration parsing") {
  CHECK(parse_duration("15m") == 15 * kMinuteMs);
  CHECK(parse_duration("30s") == 30 * kSecondMs);
  CHECK(parse_duration("6h") == 6 * kHourMs);
  CHECK(parse_duration("250ms") == 250);
  CHECK(parse_duration("42") == 42);
  CHECK_FALSE(parse_duration("x").has_value());
  CHECK_FALSE(parse_duration("5w").has_value());
}

TEST_CASE("xoshiro256** reference output") {
  // First outputs for state {1, 2, 3, 4} from the reference C implementation.
  auto r = Rng::from_state({1, 2, 3, 4});
  CHECK(r.next_u64() == 11520ULL);
  CHECK(r.next_u64() == 0ULL);
  CHECK(r.next_u64() == 1509978240ULL);
  CHECK(r.next_u64() == 1215971899390074240ULL);
}

TEST_CASE("rng determinism and ranges") {
  Rng a(7), b(7), c(8);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng(7).next_u64() != c.next_u64());
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.uniform_index(7) < 7);
  }
}

TEST_CASE("poisson mean is close to requested") {
  Rng r(3);
  for (double mean : {0.5, 10.0, 75.0}) {
    double total = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) total += static_cast<double>(r.poisson(mean));
    CHECK(total / n == doctest::Approx(mean).epsilon(0.03));
  }
  CHECK(r.poisson(0.0) == 0);
}

TEST_CASE("categorical respects zero weights") {
  Rng r(5);
  const std::vector<double> w{0.0, 1.0, 0.0, 3.0};
  std::set<std::size_t> seen;
  for (int i = 0; i < 500; ++i) seen.insert(r.categorical(w));
  CHECK(seen == std::set<std::size_t>{1, 3});
}

TEST_CASE("sha256 known vector") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("binary io round trip and truncation") {
  ByteWriter w;
  w.u32(7);
  w.i64(-5);
  w.f64(-0.0);
  w.str("hello");
  w.f64s(std::vector<double>{1.5, 2.25});
  const std::string bytes = w.bytes();
  ByteReader r(bytes);
  CHECK(r.u32() == 7);
  CHECK(r.i64() == -5);
  CHECK(std::signbit(r.f64()));
  CHECK(r.str() == "hello");
  CHECK(r.f64s() == std::vector<double>{1.5, 2.25});
  CHECK(r.done());
  ByteReader truncated(std::string_view(bytes).substr(0, 10));
  truncated.u32();
  CHECK_THROWS_AS(truncated.i64(), FormatError);
}
