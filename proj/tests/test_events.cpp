#include "evib/events.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "helpers.hpp"

using namespace evib;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  out << body;
}

}  // namespace

TEST_CASE("csv parsing maps fields directly", "[events]") {
  const std::string path = temp_path("evib_events_basic.csv");
  write_text(path, "# geometry,8,8\n0,3,4,1\n10,3,5,-1\n");
  const EventStream s = read_events(path, EventFormat::csv);
  REQUIRE(s.geometry() == SensorGeometry{8, 8});
  REQUIRE(s.size() == 2);
  CHECK(s.events()[0] == Event{0, 3, 4, 1});
  CHECK(s.events()[1] == Event{10, 3, 5, -1});
}

TEST_CASE("empty body with valid header is an empty stream", "[events]") {
  const std::string path = temp_path("evib_events_empty.csv");
  write_text(path, "# geometry,8,8\n");
  const EventStream s = read_events(path, EventFormat::csv);
  CHECK(s.empty());
  CHECK(s.geometry().width == 8);
}

TEST_CASE("unsorted timestamps are rejected naming the record", "[events]") {
  const std::string path = temp_path("evib_events_unsorted.csv");
  write_text(path, "# geometry,8,8\n10,1,1,1\n0,2,2,-1\n");
  REQUIRE_THROWS_WITH(read_events(path, EventFormat::csv),
                      Catch::Matchers::ContainsSubstring("record 2"));
}

TEST_CASE("malformed line reports its line number", "[events]") {
  const std::string path = temp_path("evib_events_bad.csv");
  write_text(path, "# geometry,8,8\n0,1,1,1\nnot-an-event\n");
  REQUIRE_THROWS_WITH(read_events(path, EventFormat::csv),
                      Catch::Matchers::ContainsSubstring("line 3"));
}

TEST_CASE("out-of-geometry coordinates are rejected", "[events]") {
  const std::string path = temp_path("evib_events_oob.csv");
  write_text(path, "# geometry,4,4\n0,5,1,1\n");
  REQUIRE_THROWS_AS(read_events(path, EventFormat::csv), std::invalid_argument);
}

TEST_CASE("round trips preserve streams in both formats", "[events]") {
  const EventStream s = testutil::random_stream(42, 1000, SensorGeometry{32, 24});
  const std::string csv = temp_path("evib_rt.csv");
  const std::string bin = temp_path("evib_rt.bin");

  write_events(s, csv, EventFormat::csv);
  write_events(s, bin, EventFormat::bin);
  const EventStream rc = read_events(csv, EventFormat::csv);
  const EventStream rb = read_events(bin, EventFormat::bin);

  REQUIRE(rc.geometry() == s.geometry());
  REQUIRE(rb.geometry() == s.geometry());
  REQUIRE(rc.events() == s.events());
  REQUIRE(rb.events() == s.events());
}

TEST_CASE("csv round trip is byte-stable", "[events]") {
  const EventStream s = testutil::random_stream(7, 200, SensorGeometry{16, 16});
  const std::string p1 = temp_path("evib_bytes1.csv");
  const std::string p2 = temp_path("evib_bytes2.csv");
  write_events(s, p1, EventFormat::csv);
  write_events(read_events(p1, EventFormat::csv), p2, EventFormat::csv);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
}

TEST_CASE("empty stream round trips", "[events]") {
  const EventStream s(SensorGeometry{8, 8}, {});
  const std::string bin = temp_path("evib_rt_empty.bin");
  write_events(s, bin, EventFormat::bin);
  const EventStream r = read_events(bin, EventFormat::bin);
  CHECK(r.empty());
  CHECK(r.geometry() == s.geometry());
}

TEST_CASE("binary layout matches the declared record format", "[events]") {
  EventStream s(SensorGeometry{300, 200}, {Event{0x0102030405060708LL, 299, 42, -1}});
  const std::string bin = temp_path("evib_layout.bin");
  write_events(s, bin, EventFormat::bin);
  std::ifstream in(bin, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 20 + 16);
  CHECK(bytes.substr(0, 4) == "EVS1");
  // little-endian u32 width
  CHECK(static_cast<unsigned char>(bytes[4]) == 300 % 256);
  CHECK(static_cast<unsigned char>(bytes[5]) == 300 / 256);
  // record: u64 t little-endian
  CHECK(static_cast<unsigned char>(bytes[20]) == 0x08);
  CHECK(static_cast<unsigned char>(bytes[27]) == 0x01);
  // i8 polarity at offset 12, pad bytes zero
  CHECK(static_cast<signed char>(bytes[20 + 12]) == -1);
  CHECK(bytes[20 + 13] == 0);
  CHECK(bytes[20 + 15] == 0);
}

TEST_CASE("crop_roi keeps membership and re-bases coordinates", "[events]") {
  const EventStream s(SensorGeometry{8, 8}, {Event{0, 2, 2, 1}, Event{5, 6, 6, -1}});

  SECTION("membership") {
    const EventStream c = crop_roi(s, Roi{0, 0, 4, 4});
    REQUIRE(c.size() == 1);
    CHECK(c.events()[0] == Event{0, 2, 2, 1});
    CHECK(c.geometry() == SensorGeometry{4, 4});
  }
  SECTION("full-geometry roi is identity") {
    const EventStream c = crop_roi(s, Roi{0, 0, 8, 8});
    CHECK(c.events() == s.events());
    CHECK(c.geometry() == s.geometry());
  }
  SECTION("re-basing") {
    const EventStream c = crop_roi(s, Roi{4, 4, 4, 4});
    REQUIRE(c.size() == 1);
    CHECK(c.events()[0] == Event{5, 2, 2, -1});
  }
  SECTION("roi outside geometry") {
    REQUIRE_THROWS_AS(crop_roi(s, Roi{5, 5, 4, 4}), std::invalid_argument);
  }
}

TEST_CASE("crop_roi composes like intersection", "[events]") {
  const EventStream s = testutil::random_stream(11, 500, SensorGeometry{32, 32});
  const Roi a{4, 4, 20, 20};
  const Roi b_rebased{2, 3, 10, 9};  // inside a, in a's frame
  const EventStream once = crop_roi(s, Roi{a.x0 + b_rebased.x0, a.y0 + b_rebased.y0,
                                           b_rebased.w, b_rebased.h});
  const EventStream twice = crop_roi(crop_roi(s, a), b_rebased);
  CHECK(once.events() == twice.events());
  CHECK(once.geometry() == twice.geometry());
}

TEST_CASE("time_slice keeps the half-open window", "[events]") {
  const EventStream s(SensorGeometry{4, 4},
                      {Event{0, 0, 0, 1}, Event{10, 1, 1, -1}, Event{20, 2, 2, 1}});

  SECTION("interior slice") {
    const EventStream c = time_slice(s, 5, 25);
    REQUIRE(c.size() == 2);
    CHECK(c.events()[0].t == 10);
    CHECK(c.events()[1].t == 20);
  }
  SECTION("full range is identity") {
    const EventStream c = time_slice(s, 0, 1'000'000);
    CHECK(c.events() == s.events());
  }
  SECTION("empty half-open interval") {
    CHECK(time_slice(s, 7, 7).empty());
  }
  SECTION("inverted interval throws") {
    REQUIRE_THROWS_AS(time_slice(s, 10, 5), std::invalid_argument);
  }
}

TEST_CASE("adjacent slices concatenate to the original stream", "[events]") {
  const EventStream s = testutil::random_stream(3, 400, SensorGeometry{16, 16});
  const std::int64_t mid = s.last_t() / 2;
  const EventStream a = time_slice(s, 0, mid);
  const EventStream b = time_slice(s, mid, s.last_t() + 1);
  std::vector<Event> joined = a.events();
  joined.insert(joined.end(), b.events().begin(), b.events().end());
  CHECK(joined == s.events());
}

TEST_CASE("merge_streams offsets and sorts", "[events]") {
  const EventStream left(SensorGeometry{4, 4}, {Event{5, 1, 1, 1}, Event{9, 2, 2, -1}});
  const EventStream right(SensorGeometry{4, 4}, {Event{3, 0, 0, 1}, Event{9, 3, 3, 1}});
  const EventStream merged = merge_streams(
      {{&left, 0, 0}, {&right, 4, 0}}, SensorGeometry{8, 4});
  REQUIRE(merged.size() == 4);
  CHECK(merged.events()[0] == Event{3, 4, 0, 1});
  CHECK(merged.events()[1] == Event{5, 1, 1, 1});
  // tie at t=9: left-listed stream first (stable)
  CHECK(merged.events()[2] == Event{9, 2, 2, -1});
  CHECK(merged.events()[3] == Event{9, 7, 3, 1});
}

TEST_CASE("stream validation rejects bad polarity and negative time", "[events]") {
  CHECK_THROWS_AS(EventStream(SensorGeometry{4, 4}, {Event{0, 0, 0, 2}}), std::invalid_argument);
  CHECK_THROWS_AS(EventStream(SensorGeometry{4, 4}, {Event{-1, 0, 0, 1}}), std::invalid_argument);
}
