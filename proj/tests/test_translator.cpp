#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "edi/translator.hpp"
#include "support/testutil.hpp"

using namespace edi::translator;
namespace ic = edi::interchange;

namespace {

const std::string kPoMap = R"({
  "docType": "PO",
  "header": [{"tag": "BEG", "elements": [{"field": "poNumber"}, {"field": "poDate"}]}],
  "items": {"path": "items", "segments": [
    {"tag": "IT1", "elements": [{"field": "sku"}, {"field": "qty"}, {"field": "unitPrice"}]}
  ]},
  "summary": [{"tag": "CTT", "elements": [{"count": "items"}]}]
})";

InternalDocument sample_po() {
  InternalDocument doc;
  doc.doc_type = "PO";
  doc.header = {{"poNumber", "PO1"}, {"poDate", "20110101"}};
  doc.items = {{{"sku", "S1"}, {"qty", "2"}, {"unitPrice", "10.00"}}};
  return doc;
}

OutboundStamp stamp() { return {"000000001", "20110101", "0930", false}; }

}  // namespace

TEST_CASE("loads the reference purchase order map") {
  MappingSpec map = load_map(kPoMap);
  CHECK(map.doc_type == "PO");
  REQUIRE(map.header_segments.size() == 1);
  CHECK(map.header_segments[0].tag == "BEG");
  REQUIRE(map.item_segments.size() == 1);
  CHECK(map.item_segments[0].tag == "IT1");
  REQUIRE(map.summary_segments.size() == 1);
  CHECK(map.summary_segments[0].tag == "CTT");
}

TEST_CASE("the shipped map file matches the inline reference") {
  const char* src = std::getenv("EDI_SOURCE_DIR");
  std::filesystem::path root = src ? src : ".";
  if (!std::filesystem::exists(root / "maps/po.map.json")) return;  // out-of-tree run
  MappingSpec shipped = load_map_file(root / "maps/po.map.json");
  CHECK(shipped == load_map(kPoMap));
}

TEST_CASE("rejects a field bound twice in one template") {
  const std::string bad = R"({
    "docType": "PO",
    "header": [{"tag": "BEG", "elements": [{"field": "poNumber"}, {"field": "poNumber"}]}]
  })";
  try {
    load_map(bad);
    FAIL("expected MapNotInvertible");
  } catch (const MapError& e) {
    CHECK(e.code() == MapErrc::not_invertible);
  }
}

TEST_CASE("rejects reserved envelope tags") {
  const std::string bad = R"({
    "docType": "PO",
    "header": [{"tag": "ISA", "elements": [{"field": "poNumber"}]}]
  })";
  try {
    load_map(bad);
    FAIL("expected ReservedTag");
  } catch (const MapError& e) {
    CHECK(e.code() == MapErrc::reserved_tag);
  }
}

TEST_CASE("rejects maps whose item boundary is ambiguous") {
  const std::string bad = R"({
    "docType": "PO",
    "header": [{"tag": "BEG", "elements": [{"field": "poNumber"}]}],
    "items": {"path": "items", "segments": [{"tag": "IT1", "elements": [{"field": "sku"}]}]},
    "summary": [{"tag": "IT1", "elements": [{"count": "items"}]}]
  })";
  try {
    load_map(bad);
    FAIL("expected MapNotInvertible");
  } catch (const MapError& e) {
    CHECK(e.code() == MapErrc::not_invertible);
  }
}

TEST_CASE("outbound produces the reference body") {
  MappingSpec map = load_map(kPoMap);
  ic::Interchange doc = translate_outbound(sample_po(), map, "A", "B", stamp());
  std::string bytes = ic::serialize_interchange(doc);
  CHECK(bytes.find("BEG*PO1*20110101~IT1*S1*2*10.00~CTT*1~") != std::string::npos);
  CHECK(ic::validate(doc, {"PO"}).ok);
}

TEST_CASE("outbound with zero items emits a zero count") {
  MappingSpec map = load_map(kPoMap);
  InternalDocument doc = sample_po();
  doc.items.clear();
  std::string bytes = ic::serialize_interchange(translate_outbound(doc, map, "A", "B", stamp()));
  CHECK(bytes.find("BEG*PO1*20110101~CTT*0~") != std::string::npos);
}

TEST_CASE("outbound names the missing field") {
  MappingSpec map = load_map(kPoMap);
  InternalDocument doc = sample_po();
  doc.header.erase("poDate");
  try {
    translate_outbound(doc, map, "A", "B", stamp());
    FAIL("expected MissingField");
  } catch (const TranslateError& e) {
    CHECK(e.code() == TranslateErrc::missing_field);
    CHECK(e.field() == "poDate");
  }
}

TEST_CASE("outbound rejects a document of the wrong type") {
  MappingSpec map = load_map(kPoMap);
  InternalDocument doc = sample_po();
  doc.doc_type = "INV";
  try {
    translate_outbound(doc, map, "A", "B", stamp());
    FAIL("expected DocTypeMismatch");
  } catch (const TranslateError& e) {
    CHECK(e.code() == TranslateErrc::doc_type_mismatch);
  }
}

TEST_CASE("inbound inverts the outbound body") {
  MappingSpec map = load_map(kPoMap);
  InternalDocument original = sample_po();
  ic::Interchange wire = translate_outbound(original, map, "A", "B", stamp());
  std::vector<InternalDocument> docs = translate_inbound(wire, map);
  REQUIRE(docs.size() == 1);
  CHECK(docs[0] == original);
}

TEST_CASE("inbound flags a count mismatch") {
  MappingSpec map = load_map(kPoMap);
  ic::Interchange wire = translate_outbound(sample_po(), map, "A", "B", stamp());
  wire.groups[0].transactions[0].body.back().elements[0] = "2";  // CTT*2 with one IT1
  try {
    translate_inbound(wire, map);
    FAIL("expected CountMismatch");
  } catch (const TranslateError& e) {
    CHECK(e.code() == TranslateErrc::count_mismatch);
  }
}

TEST_CASE("inbound flags an unexpected tag sequence") {
  MappingSpec map = load_map(kPoMap);
  ic::Interchange wire = translate_outbound(sample_po(), map, "A", "B", stamp());
  wire.groups[0].transactions[0].body[0].tag = "XXX";
  try {
    translate_inbound(wire, map);
    FAIL("expected TemplateMismatch");
  } catch (const TranslateError& e) {
    CHECK(e.code() == TranslateErrc::template_mismatch);
  }
}

TEST_CASE("inbound flags a literal mismatch instead of dropping it") {
  const std::string lit_map = R"({
    "docType": "PO",
    "header": [{"tag": "BEG", "elements": [{"literal": "00"}, {"field": "poNumber"}]}]
  })";
  MappingSpec map = load_map(lit_map);
  InternalDocument doc;
  doc.doc_type = "PO";
  doc.header = {{"poNumber", "PO1"}};
  ic::Interchange wire = translate_outbound(doc, map, "A", "B", stamp());
  CHECK(translate_inbound(wire, map)[0] == doc);
  wire.groups[0].transactions[0].body[0].elements[0] = "01";
  CHECK_THROWS_AS(translate_inbound(wire, map), TranslateError);
}

TEST_CASE("randomized documents survive the outbound-inbound cycle") {
  MappingSpec map = load_map(kPoMap);
  std::mt19937 rng(42);
  for (int i = 0; i < 300; ++i) {
    InternalDocument doc = testutil::random_po(rng);
    ic::Interchange wire = translate_outbound(doc, map, "SND", "RCV", stamp());
    std::vector<InternalDocument> back = translate_inbound(wire, map);
    REQUIRE(back.size() == 1);
    REQUIRE(back[0] == doc);
  }
}

TEST_CASE("outbound is deterministic") {
  MappingSpec map = load_map(kPoMap);
  std::string a = ic::serialize_interchange(translate_outbound(sample_po(), map, "A", "B", stamp()));
  std::string b = ic::serialize_interchange(translate_outbound(sample_po(), map, "A", "B", stamp()));
  CHECK(a == b);
}

TEST_CASE("documents load from and save to JSON") {
  const std::string json = R"({
    "docType": "PO",
    "header": {"poNumber": "PO1", "poDate": "20110101"},
    "items": [{"sku": "S1", "qty": 2, "unitPrice": "10.00"}]
  })";
  InternalDocument doc = document_from_json(json);
  CHECK(doc.doc_type == "PO");
  CHECK(doc.items[0].at("qty") == "2");  // numbers become their decimal form
  InternalDocument reloaded = document_from_json(document_to_json(doc));
  CHECK(reloaded == doc);

  CHECK_THROWS_AS(document_from_json("{"), DocumentParseError);
  CHECK_THROWS_AS(document_from_json(R"({"docType":"PO","header":{"9bad":"x"}})"),
                  DocumentParseError);
}
