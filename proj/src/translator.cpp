#include "edi/translator.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace edi::translator {

namespace {

using nlohmann::json;

const std::set<std::string> kReservedTags = {"ISA", "IEA", "GS", "GE", "ST", "SE"};

bool valid_field_name(std::string_view name) {
  if (name.empty()) return false;
  char c0 = name[0];
  if (!((c0 >= 'a' && c0 <= 'z') || (c0 >= 'A' && c0 <= 'Z'))) return false;
  for (char c : name)
    if (!((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
          c == '_'))
      return false;
  return true;
}

bool valid_code(std::string_view code) {
  if (code.empty() || code.size() > 8) return false;
  if (code[0] < 'A' || code[0] > 'Z') return false;
  for (char c : code)
    if (!((c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9'))) return false;
  return true;
}

bool valid_tag(std::string_view tag) {
  if (tag.size() < 2 || tag.size() > 3) return false;
  if (tag[0] < 'A' || tag[0] > 'Z') return false;
  for (char c : tag.substr(1))
    if (!((c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9'))) return false;
  return true;
}

ElementSource parse_source(const json& j, bool count_allowed) {
  if (!j.is_object() || j.size() != 1)
    throw MapError(MapErrc::parse,
                   "element source must be an object with exactly one of field/literal/count");
  if (j.contains("field")) {
    std::string name = j.at("field").get<std::string>();
    if (!valid_field_name(name))
      throw MapError(MapErrc::parse, "bad field name: '" + name + "'");
    return FieldRef{std::move(name)};
  }
  if (j.contains("literal")) return Literal{j.at("literal").get<std::string>()};
  if (j.contains("count")) {
    if (j.at("count").get<std::string>() != "items")
      throw MapError(MapErrc::parse, "count source must reference \"items\"");
    if (!count_allowed)
      throw MapError(MapErrc::parse, "count source is only allowed in summary segments");
    return ItemCount{};
  }
  throw MapError(MapErrc::parse, "element source must name field, literal or count");
}

std::vector<SegmentTemplate> parse_templates(const json& arr, bool count_allowed) {
  std::vector<SegmentTemplate> out;
  if (!arr.is_array()) throw MapError(MapErrc::parse, "segment list must be an array");
  for (const json& j : arr) {
    SegmentTemplate t;
    t.tag = j.at("tag").get<std::string>();
    if (!valid_tag(t.tag)) throw MapError(MapErrc::parse, "bad segment tag: '" + t.tag + "'");
    if (kReservedTags.contains(t.tag))
      throw MapError(MapErrc::reserved_tag, "tag " + t.tag + " is reserved for envelopes");
    for (const json& e : j.at("elements")) t.elements.push_back(parse_source(e, count_allowed));
    out.push_back(std::move(t));
  }
  return out;
}

// A field may be bound once per scope, or inbound extraction is ambiguous.
void check_bindings(const std::vector<SegmentTemplate>& templates,
                    std::set<std::string>& scope_seen) {
  for (const SegmentTemplate& t : templates) {
    std::set<std::string> within;
    for (const ElementSource& src : t.elements) {
      if (const FieldRef* f = std::get_if<FieldRef>(&src)) {
        if (!within.insert(f->name).second)
          throw MapError(MapErrc::not_invertible,
                         "field " + f->name + " bound twice in template " + t.tag);
        if (!scope_seen.insert(f->name).second)
          throw MapError(MapErrc::not_invertible,
                         "field " + f->name + " bound in more than one segment");
      }
    }
  }
}

}  // namespace

MappingSpec load_map(std::string_view json_bytes) {
  json j;
  try {
    j = json::parse(json_bytes);
  } catch (const json::exception& e) {
    throw MapError(MapErrc::parse, std::string("map is not valid JSON: ") + e.what());
  }
  MappingSpec spec;
  try {
    spec.doc_type = j.at("docType").get<std::string>();
    if (!valid_code(spec.doc_type))
      throw MapError(MapErrc::parse, "bad docType code: '" + spec.doc_type + "'");
    if (j.contains("header")) spec.header_segments = parse_templates(j.at("header"), false);
    if (j.contains("items")) {
      const json& items = j.at("items");
      if (items.at("path").get<std::string>() != "items")
        throw MapError(MapErrc::parse, "items path must be \"items\"");
      spec.item_segments = parse_templates(items.at("segments"), false);
    }
    if (j.contains("summary")) spec.summary_segments = parse_templates(j.at("summary"), true);
  } catch (const json::exception& e) {
    throw MapError(MapErrc::parse, std::string("map is missing required keys: ") + e.what());
  }

  if (spec.header_segments.empty() && spec.summary_segments.empty())
    throw MapError(MapErrc::parse,
                   "map needs at least one header or summary segment, or a document "
                   "with no items would produce an empty transaction body");

  std::set<std::string> header_scope;
  check_bindings(spec.header_segments, header_scope);
  check_bindings(spec.summary_segments, header_scope);
  std::set<std::string> item_scope;
  check_bindings(spec.item_segments, item_scope);

  // Inbound detects item boundaries by the first item tag, so the summary
  // must not start with it.
  if (!spec.item_segments.empty() && !spec.summary_segments.empty() &&
      spec.item_segments.front().tag == spec.summary_segments.front().tag)
    throw MapError(MapErrc::not_invertible,
                   "first summary tag equals first item tag; item boundary is ambiguous");

  return spec;
}

MappingSpec load_map_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MapError(MapErrc::parse, "cannot open map file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_map(buf.str());
}

namespace {

std::string resolve(const ElementSource& src,
                    const std::map<std::string, std::string>& fields,
                    std::size_t item_count, const std::string& where) {
  if (const FieldRef* f = std::get_if<FieldRef>(&src)) {
    auto it = fields.find(f->name);
    if (it == fields.end())
      throw TranslateError(TranslateErrc::missing_field,
                           "missing field " + f->name + " in " + where, f->name);
    return it->second;
  }
  if (const Literal* l = std::get_if<Literal>(&src)) return l->value;
  return std::to_string(item_count);
}

}  // namespace

interchange::Interchange translate_outbound(const InternalDocument& doc,
                                            const MappingSpec& map,
                                            const std::string& sender,
                                            const std::string& receiver,
                                            const OutboundStamp& stamp) {
  if (doc.doc_type != map.doc_type)
    throw TranslateError(TranslateErrc::doc_type_mismatch,
                         "document type " + doc.doc_type + " does not match map type " +
                             map.doc_type);
  if (map.item_segments.empty() && !doc.items.empty())
    throw TranslateError(TranslateErrc::template_mismatch,
                         "document has items but the map has no item segments");

  interchange::TransactionSet txn;
  txn.txn_type = map.doc_type;
  txn.txn_control = "0001";

  auto apply = [&](const SegmentTemplate& t, const std::map<std::string, std::string>& fields,
                   const std::string& where) {
    interchange::Segment seg;
    seg.tag = t.tag;
    for (const ElementSource& src : t.elements)
      seg.elements.push_back(resolve(src, fields, doc.items.size(), where));
    txn.body.push_back(std::move(seg));
  };

  for (const SegmentTemplate& t : map.header_segments) apply(t, doc.header, "header");
  for (std::size_t i = 0; i < doc.items.size(); ++i)
    for (const SegmentTemplate& t : map.item_segments)
      apply(t, doc.items[i], "items[" + std::to_string(i) + "]");
  for (const SegmentTemplate& t : map.summary_segments) apply(t, doc.header, "header");

  interchange::Interchange out;
  out.sender_id = sender;
  out.receiver_id = receiver;
  out.date = stamp.date;
  out.time = stamp.time;
  out.control_number = stamp.control_number;
  out.ack_requested = stamp.ack_requested;
  out.groups.push_back(
      interchange::FunctionalGroup{map.doc_type, "0001", {std::move(txn)}});
  return out;
}

namespace {

struct BodyScanner {
  const std::vector<interchange::Segment>& body;
  std::size_t pos = 0;

  const interchange::Segment& take(const SegmentTemplate& t) {
    if (pos >= body.size())
      throw TranslateError(TranslateErrc::template_mismatch,
                           "body ends where segment " + t.tag + " was expected");
    const interchange::Segment& seg = body[pos];
    if (seg.tag != t.tag)
      throw TranslateError(TranslateErrc::template_mismatch,
                           "expected segment " + t.tag + ", found " + seg.tag);
    if (seg.elements.size() != t.elements.size())
      throw TranslateError(TranslateErrc::template_mismatch,
                           t.tag + " carries " + std::to_string(seg.elements.size()) +
                               " elements, template expects " +
                               std::to_string(t.elements.size()));
    ++pos;
    return seg;
  }
};

void extract(const SegmentTemplate& t, const interchange::Segment& seg,
             std::map<std::string, std::string>& fields, std::size_t item_count,
             bool check_count) {
  for (std::size_t i = 0; i < t.elements.size(); ++i) {
    const ElementSource& src = t.elements[i];
    const std::string& value = seg.elements[i];
    if (const FieldRef* f = std::get_if<FieldRef>(&src)) {
      fields[f->name] = value;
    } else if (const Literal* l = std::get_if<Literal>(&src)) {
      if (value != l->value)
        throw TranslateError(TranslateErrc::template_mismatch,
                             t.tag + " literal mismatch: expected '" + l->value +
                                 "', found '" + value + "'");
    } else if (check_count) {
      if (value != std::to_string(item_count))
        throw TranslateError(TranslateErrc::count_mismatch,
                             "summary declares " + value + " items, parsed " +
                                 std::to_string(item_count));
    }
  }
}

}  // namespace

std::vector<InternalDocument> translate_inbound(const interchange::Interchange& doc,
                                                const MappingSpec& map) {
  std::vector<InternalDocument> out;
  for (const interchange::FunctionalGroup& g : doc.groups) {
    if (g.doc_type != map.doc_type)
      throw TranslateError(TranslateErrc::doc_type_mismatch,
                           "group type " + g.doc_type + " does not match map type " +
                               map.doc_type);
    for (const interchange::TransactionSet& txn : g.transactions) {
      if (txn.txn_type != map.doc_type)
        throw TranslateError(TranslateErrc::doc_type_mismatch,
                             "transaction type " + txn.txn_type +
                                 " does not match map type " + map.doc_type);
      InternalDocument d;
      d.doc_type = map.doc_type;
      BodyScanner scan{txn.body};

      for (const SegmentTemplate& t : map.header_segments)
        extract(t, scan.take(t), d.header, 0, false);

      if (!map.item_segments.empty()) {
        const std::string& first_tag = map.item_segments.front().tag;
        while (scan.pos < txn.body.size() && txn.body[scan.pos].tag == first_tag) {
          std::map<std::string, std::string> item;
          for (const SegmentTemplate& t : map.item_segments)
            extract(t, scan.take(t), item, 0, false);
          d.items.push_back(std::move(item));
        }
      }

      for (const SegmentTemplate& t : map.summary_segments)
        extract(t, scan.take(t), d.header, d.items.size(), true);

      if (scan.pos != txn.body.size())
        throw TranslateError(TranslateErrc::template_mismatch,
                             "unexpected trailing segment " + txn.body[scan.pos].tag);
      out.push_back(std::move(d));
    }
  }
  return out;
}

namespace {

std::string value_to_string(const json& v, const std::string& where) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
  if (v.is_number_float()) return v.dump();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  throw DocumentParseError("value of " + where + " must be a string, number or boolean");
}

std::map<std::string, std::string> fields_from_json(const json& obj, const std::string& where) {
  if (!obj.is_object()) throw DocumentParseError(where + " must be an object");
  std::map<std::string, std::string> out;
  for (const auto& [key, value] : obj.items()) {
    if (!valid_field_name(key))
      throw DocumentParseError("bad field name '" + key + "' in " + where);
    out[key] = value_to_string(value, where + "." + key);
  }
  return out;
}

}  // namespace

InternalDocument document_from_json(std::string_view json_bytes) {
  json j;
  try {
    j = json::parse(json_bytes);
  } catch (const json::exception& e) {
    throw DocumentParseError(std::string("document is not valid JSON: ") + e.what());
  }
  InternalDocument doc;
  try {
    doc.doc_type = j.at("docType").get<std::string>();
    if (j.contains("header")) doc.header = fields_from_json(j.at("header"), "header");
    if (j.contains("items")) {
      if (!j.at("items").is_array()) throw DocumentParseError("items must be an array");
      std::size_t i = 0;
      for (const json& item : j.at("items"))
        doc.items.push_back(fields_from_json(item, "items[" + std::to_string(i++) + "]"));
    }
  } catch (const json::exception& e) {
    throw DocumentParseError(std::string("document is missing required keys: ") + e.what());
  }
  return doc;
}

std::string document_to_json(const InternalDocument& doc) {
  json j;
  j["docType"] = doc.doc_type;
  j["header"] = json::object();
  for (const auto& [k, v] : doc.header) j["header"][k] = v;
  j["items"] = json::array();
  for (const auto& item : doc.items) {
    json ji = json::object();
    for (const auto& [k, v] : item) ji[k] = v;
    j["items"].push_back(std::move(ji));
  }
  return j.dump(2) + "\n";
}

}  // namespace edi::translator
