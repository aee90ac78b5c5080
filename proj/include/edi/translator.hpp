#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "edi/interchange.hpp"

namespace edi::translator {

// Flat internal business document: one header record plus ordered line items.
// Values are strings; numeric formatting is the caller's business.
struct InternalDocument {
  std::string doc_type;
  std::map<std::string, std::string> header;
  std::vector<std::map<std::string, std::string>> items;
  bool operator==(const InternalDocument&) const = default;
};

struct FieldRef {
  std::string name;
  bool operator==(const FieldRef&) const = default;
};
struct Literal {
  std::string value;
  bool operator==(const Literal&) const = default;
};
struct ItemCount {
  bool operator==(const ItemCount&) const = default;
};
using ElementSource = std::variant<FieldRef, Literal, ItemCount>;

struct SegmentTemplate {
  std::string tag;
  std::vector<ElementSource> elements;
  bool operator==(const SegmentTemplate&) const = default;
};

// One declarative map drives both directions; load_map rejects maps that
// cannot be inverted unambiguously.
struct MappingSpec {
  std::string doc_type;
  std::vector<SegmentTemplate> header_segments;
  std::vector<SegmentTemplate> item_segments;    // applied once per item
  std::vector<SegmentTemplate> summary_segments; // may reference the item count
  bool operator==(const MappingSpec&) const = default;
};

enum class MapErrc { parse, not_invertible, reserved_tag };

class MapError : public std::runtime_error {
 public:
  MapError(MapErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  MapErrc code() const { return code_; }

 private:
  MapErrc code_;
};

enum class TranslateErrc {
  missing_field,
  doc_type_mismatch,
  template_mismatch,
  count_mismatch
};

class TranslateError : public std::runtime_error {
 public:
  TranslateError(TranslateErrc code, const std::string& what, std::string field = {})
      : std::runtime_error(what), code_(code), field_(std::move(field)) {}
  TranslateErrc code() const { return code_; }
  const std::string& field() const { return field_; }

 private:
  TranslateErrc code_;
  std::string field_;
};

class DocumentParseError : public std::runtime_error {
 public:
  explicit DocumentParseError(const std::string& what) : std::runtime_error(what) {}
};

MappingSpec load_map(std::string_view json_bytes);
MappingSpec load_map_file(const std::filesystem::path& path);

struct OutboundStamp {
  std::string control_number;  // 9 digits
  std::string date;            // YYYYMMDD
  std::string time;            // HHMM
  bool ack_requested = false;
};

interchange::Interchange translate_outbound(const InternalDocument& doc,
                                            const MappingSpec& map,
                                            const std::string& sender,
                                            const std::string& receiver,
                                            const OutboundStamp& stamp);

// One document per transaction set, in interchange order.
std::vector<InternalDocument> translate_inbound(const interchange::Interchange& doc,
                                                const MappingSpec& map);

InternalDocument document_from_json(std::string_view json_bytes);
std::string document_to_json(const InternalDocument& doc);

}  // namespace edi::translator
