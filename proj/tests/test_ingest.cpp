#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "vibrancy/ingest.hpp"

using namespace vibrancy;

namespace {

GridSpec grid() {
  GridSpec g;
  g.n_cols = 20;
  g.n_rows = 20;
  g.region_name = "t";
  return g;
}

ParseResult<TrafficRecord> traffic(const std::string& body) {
  std::istringstream in("col,row,timestamp,service,direction,volume\n" + body);
  return parse_traffic(in, grid());
}

}  // namespace

TEST(ParseTraffic, FormatExample) {
  const auto r = traffic("3,7,2019-03-16T00:00,WhatsApp,downlink,12.5\n");
  ASSERT_EQ(r.records.size(), 1u);
  const auto& rec = r.records[0];
  EXPECT_EQ(rec.cell, (CellId{3, 7}));
  EXPECT_EQ(rec.timestamp, (Timestamp{2019, 3, 16, 0, 0}));
  EXPECT_EQ(rec.service, "WhatsApp");
  EXPECT_EQ(rec.direction, Direction::Downlink);
  EXPECT_DOUBLE_EQ(rec.volume, 12.5);
  EXPECT_EQ(r.rejected(), 0u);
}

TEST(ParseTraffic, NegativeVolumeRejected) {
  const auto r = traffic("3,7,2019-03-16T00:00,WhatsApp,downlink,-1\n");
  EXPECT_TRUE(r.records.empty());
  ASSERT_EQ(r.rejected(), 1u);
  EXPECT_EQ(r.rejections[0].kind, ErrorKind::MalformedLine);
  EXPECT_EQ(r.rejections[0].line, 2u);
}

TEST(ParseTraffic, UnalignedTimestampRejected) {
  const auto r = traffic("3,7,2019-03-16T00:07,WhatsApp,uplink,1\n");
  ASSERT_EQ(r.rejected(), 1u);
  EXPECT_EQ(r.rejections[0].kind, ErrorKind::MalformedLine);
}

TEST(ParseTraffic, DirectionAndBoundsErrors) {
  const auto r = traffic(
      "1,1,2019-03-16T00:15,A,sideways,1\n"
      "20,1,2019-03-16T00:15,A,ul,1\n"
      "1,1,2019-02-30T00:15,A,dl,1\n"
      "1,1,2019-03-16T00:15,A,UL,2\n");
  ASSERT_EQ(r.rejected(), 3u);
  EXPECT_EQ(r.rejections[0].kind, ErrorKind::UnknownDirection);
  EXPECT_EQ(r.rejections[1].kind, ErrorKind::OutOfBounds);
  EXPECT_EQ(r.rejections[2].kind, ErrorKind::MalformedLine);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].direction, Direction::Uplink);
}

TEST(ParseTraffic, HeaderIsMandatory) {
  std::istringstream in("3,7,2019-03-16T00:00,WhatsApp,downlink,12.5\n");
  try {
    parse_traffic(in, grid());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MalformedHeader);
  }
}

TEST(ParseTraffic, EmptyStreamIsEmpty) {
  std::istringstream in("");
  const auto r = parse_traffic(in, grid());
  EXPECT_TRUE(r.records.empty());
  EXPECT_EQ(r.data_lines, 0u);
}

// Random mix of valid and broken lines: counts add up, order is kept, and re-parsing the
// same bytes yields the same records.
TEST(ParseTraffic, CountsAndDeterminism) {
  std::mt19937_64 gen(5);
  std::ostringstream body;
  std::vector<double> expected_volumes;
  std::size_t expected_bad = 0;
  for (int i = 0; i < 2000; ++i) {
    const int kind = static_cast<int>(gen() % 5);
    const int minute = kind == 1 ? 7 : 15 * static_cast<int>(gen() % 4);
    const double vol = kind == 2 ? -3.0 : static_cast<double>(gen() % 1000) / 8.0;
    const std::string dir = kind == 3 ? "both" : (gen() % 2 ? "downlink" : "uplink");
    const int col = kind == 4 ? 25 : static_cast<int>(gen() % 20);
    char ts[32];
    std::snprintf(ts, sizeof ts, "2019-04-%02dT%02d:%02d", 1 + static_cast<int>(gen() % 28), static_cast<int>(gen() % 24),
                  minute);
    body << col << ',' << gen() % 20 << ',' << ts << ",svc" << gen() % 3 << ',' << dir << ',' << vol << '\n';
    if (kind == 0) expected_volumes.push_back(vol);
    else ++expected_bad;
  }
  const auto a = traffic(body.str());
  const auto b = traffic(body.str());
  EXPECT_EQ(a.data_lines, 2000u);
  EXPECT_EQ(a.records.size() + a.rejected(), a.data_lines);
  EXPECT_EQ(a.rejected(), expected_bad);
  ASSERT_EQ(a.records.size(), expected_volumes.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].volume, expected_volumes[i]);
    EXPECT_EQ(a.records[i], b.records[i]);
  }
}

TEST(ParsePois, FormatExampleAndRejections) {
  std::istringstream in(
      "x,y,label,source_category\n"
      "512.0,884.0,restaurant,amenity\n"
      "1,2,house,building\n"
      "abc,2,cafe,amenity\n");
  const auto r = parse_pois(in);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0], (PoiRecord{512.0, 884.0, "restaurant", PoiSource::Amenity}));
  ASSERT_EQ(r.rejected(), 2u);
  EXPECT_EQ(r.rejections[0].kind, ErrorKind::UnknownCategory);
  EXPECT_EQ(r.rejections[1].kind, ErrorKind::MalformedLine);
  EXPECT_EQ(r.data_lines, 3u);
}

TEST(ParsePois, EmptyFileGivesNothing) {
  std::istringstream in("");
  const auto r = parse_pois(in);
  EXPECT_TRUE(r.records.empty());
  EXPECT_EQ(r.rejected(), 0u);
}

TEST(ParsePois, WriterRoundTrip) {
  const std::vector<PoiRecord> pois{{1.5, 2.25, "bar", PoiSource::Amenity}, {3, 4, "park, big", PoiSource::Leisure},
                                    {5, 6, "tennis", PoiSource::Sport}, {7, 8, "bakery", PoiSource::Shop}};
  std::ostringstream out;
  write_pois(out, pois);
  std::istringstream in(out.str());
  EXPECT_EQ(parse_pois(in).records, pois);
}

TEST(Taxonomy, GroupsServicesIntoCategories) {
  std::istringstream in("service,category\nApple iMessage,Messaging\nWhatsApp,Messaging\nFacebook,Social\n");
  const auto t = load_taxonomy(in);
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.categories(), (std::vector<std::string>{"Messaging", "Social"}));
  EXPECT_EQ(t.category_of("WhatsApp"), 0u);
  EXPECT_EQ(t.category_of("Facebook"), 1u);
  EXPECT_FALSE(t.category_of("Netflix"));
}

TEST(Taxonomy, DuplicateServiceAndEmptyList) {
  std::istringstream dup("service,category\nWhatsApp,Messaging\nWhatsApp,Social\n");
  try {
    load_taxonomy(dup);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DuplicateService);
  }
  std::istringstream empty("service,category\n");
  try {
    load_taxonomy(empty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyCategoryList);
  }
}

TEST(Taxonomy, ShippedExampleHasThirtyCategories) {
  const auto t = load_taxonomy(std::string(VIBRANCY_SOURCE_DIR) + "/configs/services_example.csv");
  EXPECT_EQ(t.services().size(), 68u);
  EXPECT_EQ(t.size(), 30u);
  const auto messaging = t.category_of("WhatsApp");
  ASSERT_TRUE(messaging);
  for (const char* s : {"Apple_iMessage", "Facebook_Messenger", "Skype", "Telegram"}) EXPECT_EQ(t.category_of(s), messaging);
}

TEST(Timestamp, WeekdaysAndDayNumbers) {
  EXPECT_EQ((Timestamp{2019, 3, 18, 0, 0}).iso_weekday(), 1u);  // Monday
  EXPECT_EQ((Timestamp{2019, 3, 17, 0, 0}).iso_weekday(), 7u);  // Sunday
  const Timestamp t{2019, 5, 31, 23, 45};
  EXPECT_EQ(Timestamp::from_day_number(t.day_number(), 23, 45), t);
  EXPECT_EQ(parse_timestamp(t.to_string()), t);
  EXPECT_EQ(parse_timestamp("2019-05-31 23:45"), t);
  EXPECT_FALSE(parse_timestamp("2019-13-01T00:00"));
  EXPECT_FALSE(parse_timestamp("2019-03-16T24:00"));
}
