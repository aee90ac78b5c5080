#include "edi/interchange.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>

namespace edi::interchange {

namespace {

constexpr std::array<std::string_view, 6> kEnvelopeTags = {"ISA", "IEA", "GS",
                                                           "GE", "ST", "SE"};

// Body tags the toolkit ships maps or builders for. Anything else inside a
// transaction body is legal but flagged as a warning by validate().
const std::set<std::string> kKnownBodyTags = {"BEG", "IT1", "CTT", "ACK", "REF"};

bool is_envelope_tag(std::string_view tag) {
  return std::find(kEnvelopeTags.begin(), kEnvelopeTags.end(), tag) !=
         kEnvelopeTags.end();
}

bool valid_tag(std::string_view tag) {
  if (tag.size() < 2 || tag.size() > 3) return false;
  if (tag[0] < 'A' || tag[0] > 'Z') return false;
  for (char c : tag.substr(1))
    if (!((c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9'))) return false;
  return true;
}

bool valid_code(std::string_view code) {
  if (code.empty() || code.size() > 8) return false;
  if (code[0] < 'A' || code[0] > 'Z') return false;
  for (char c : code)
    if (!((c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9'))) return false;
  return true;
}

bool all_digits(std::string_view s) {
  return !s.empty() &&
         std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

bool digits_n(std::string_view s, std::size_t n) { return s.size() == n && all_digits(s); }

bool valid_element_byte(char c, const Delimiters& d) {
  unsigned char u = static_cast<unsigned char>(c);
  if (u < 0x20 || u > 0x7e) return false;  // ASCII printable only
  return c != d.element_sep && c != d.segment_term && c != d.subelement_sep;
}

bool valid_element(std::string_view e, const Delimiters& d) {
  return std::all_of(e.begin(), e.end(), [&](char c) { return valid_element_byte(c, d); });
}

std::uint64_t parse_count(std::string_view s, std::size_t idx) {
  if (!all_digits(s) || s.size() > 10)
    throw ParseError(ParseErrc::malformed_segment, idx,
                     "count element is not numeric: '" + std::string(s) + "'");
  std::uint64_t v = 0;
  for (char c : s) v = v * 10 + static_cast<std::uint64_t>(c - '0');
  return v;
}

struct RawSegment {
  std::string tag;
  std::vector<std::string> elements;
};

// Splits the byte stream into raw segments, enforcing the byte-level rules
// (tag shape, element charset). Structure is checked by the caller.
std::vector<RawSegment> lex(std::string_view bytes, const Delimiters& d) {
  std::vector<RawSegment> out;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    std::size_t term = bytes.find(d.segment_term, pos);
    if (term == std::string_view::npos) {
      // Only trailing line ends may follow the final terminator.
      std::string_view rest = bytes.substr(pos);
      if (rest.find_first_not_of("\r\n") == std::string_view::npos) break;
      if (out.empty())
        throw ParseError(ParseErrc::truncated, 0, "no segment terminator found");
      throw ParseError(ParseErrc::malformed_segment, out.size(),
                       "content after final segment terminator");
    }
    std::string_view raw = bytes.substr(pos, term - pos);
    pos = term + 1;

    RawSegment seg;
    std::size_t start = 0;
    std::vector<std::string_view> fields;
    while (true) {
      std::size_t sep = raw.find(d.element_sep, start);
      if (sep == std::string_view::npos) {
        fields.push_back(raw.substr(start));
        break;
      }
      fields.push_back(raw.substr(start, sep - start));
      start = sep + 1;
    }
    seg.tag = std::string(fields[0]);
    if (!valid_tag(seg.tag))
      throw ParseError(ParseErrc::malformed_segment, out.size(),
                       "bad segment tag: '" + seg.tag + "'");
    for (std::size_t i = 1; i < fields.size(); ++i) {
      if (!valid_element(fields[i], d))
        throw ParseError(ParseErrc::malformed_segment, out.size(),
                         seg.tag + " element " + std::to_string(i) +
                             " contains a delimiter, control or non-ASCII byte");
      seg.elements.emplace_back(fields[i]);
    }
    out.push_back(std::move(seg));
  }
  if (out.empty()) throw ParseError(ParseErrc::truncated, 0, "empty input");
  return out;
}

void require_elements(const RawSegment& s, std::size_t n, std::size_t idx) {
  if (s.elements.size() != n)
    throw ParseError(ParseErrc::malformed_segment, idx,
                     s.tag + " expects " + std::to_string(n) + " elements, got " +
                         std::to_string(s.elements.size()));
}

}  // namespace

Interchange parse_interchange(std::string_view bytes) {
  Delimiters d;  // v1: fixed defaults
  std::vector<RawSegment> segs = lex(bytes, d);

  std::size_t i = 0;
  const RawSegment& isa = segs[i];
  if (isa.tag != "ISA")
    throw ParseError(ParseErrc::malformed_segment, i, "first segment must be ISA");
  require_elements(isa, 6, i);

  Interchange doc;
  doc.delimiters = d;
  doc.sender_id = isa.elements[0];
  doc.receiver_id = isa.elements[1];
  doc.date = isa.elements[2];
  doc.time = isa.elements[3];
  doc.control_number = isa.elements[4];
  const std::string& ack = isa.elements[5];

  if (doc.sender_id.empty())
    throw ParseError(ParseErrc::malformed_segment, i, "ISA sender id is empty");
  if (doc.receiver_id.empty())
    throw ParseError(ParseErrc::malformed_segment, i, "ISA receiver id is empty");
  if (!digits_n(doc.date, 8))
    throw ParseError(ParseErrc::malformed_segment, i, "ISA date must be 8 digits");
  if (!digits_n(doc.time, 4))
    throw ParseError(ParseErrc::malformed_segment, i, "ISA time must be 4 digits");
  if (!digits_n(doc.control_number, 9))
    throw ParseError(ParseErrc::malformed_segment, i, "ISA control must be 9 digits");
  if (ack != "0" && ack != "1")
    throw ParseError(ParseErrc::malformed_segment, i, "ISA ack flag must be 0 or 1");
  doc.ack_requested = ack == "1";
  ++i;

  while (true) {
    if (i >= segs.size())
      throw ParseError(ParseErrc::truncated, i, "missing IEA trailer");
    if (segs[i].tag == "IEA") break;

    const RawSegment& gs = segs[i];
    if (gs.tag != "GS")
      throw ParseError(ParseErrc::malformed_segment, i,
                       "expected GS or IEA, got " + gs.tag);
    require_elements(gs, 2, i);
    FunctionalGroup group;
    group.doc_type = gs.elements[0];
    group.group_control = gs.elements[1];
    if (!valid_code(group.doc_type))
      throw ParseError(ParseErrc::malformed_segment, i,
                       "bad GS document type code: '" + group.doc_type + "'");
    if (!digits_n(group.group_control, 4))
      throw ParseError(ParseErrc::malformed_segment, i, "GS control must be 4 digits");
    ++i;

    while (true) {
      if (i >= segs.size())
        throw ParseError(ParseErrc::truncated, i, "missing GE trailer");
      if (segs[i].tag == "GE") break;

      const RawSegment& st = segs[i];
      if (st.tag != "ST")
        throw ParseError(ParseErrc::malformed_segment, i,
                         "expected ST or GE, got " + st.tag);
      require_elements(st, 2, i);
      TransactionSet txn;
      txn.txn_type = st.elements[0];
      txn.txn_control = st.elements[1];
      if (!valid_code(txn.txn_type))
        throw ParseError(ParseErrc::malformed_segment, i,
                         "bad ST transaction type code: '" + txn.txn_type + "'");
      if (!digits_n(txn.txn_control, 4))
        throw ParseError(ParseErrc::malformed_segment, i, "ST control must be 4 digits");
      std::size_t st_index = i;
      ++i;

      while (true) {
        if (i >= segs.size())
          throw ParseError(ParseErrc::truncated, i, "missing SE trailer");
        if (segs[i].tag == "SE") break;
        if (is_envelope_tag(segs[i].tag))
          throw ParseError(ParseErrc::malformed_segment, i,
                           "envelope tag " + segs[i].tag + " inside transaction body");
        txn.body.push_back(Segment{segs[i].tag, segs[i].elements});
        ++i;
      }

      const RawSegment& se = segs[i];
      require_elements(se, 2, i);
      std::uint64_t declared = parse_count(se.elements[0], i);
      std::uint64_t actual = i - st_index + 1;  // ST..SE inclusive
      if (declared != actual)
        throw ParseError(ParseErrc::envelope_mismatch, i,
                         "SE declares " + std::to_string(declared) + " segments, counted " +
                             std::to_string(actual));
      if (se.elements[1] != txn.txn_control)
        throw ParseError(ParseErrc::envelope_mismatch, i,
                         "SE control does not match ST control");
      ++i;
      group.transactions.push_back(std::move(txn));
    }

    const RawSegment& ge = segs[i];
    require_elements(ge, 2, i);
    std::uint64_t declared = parse_count(ge.elements[0], i);
    if (declared != group.transactions.size())
      throw ParseError(ParseErrc::envelope_mismatch, i,
                       "GE declares " + std::to_string(declared) + " transactions, counted " +
                           std::to_string(group.transactions.size()));
    if (ge.elements[1] != group.group_control)
      throw ParseError(ParseErrc::envelope_mismatch, i,
                       "GE control does not match GS control");
    ++i;
    doc.groups.push_back(std::move(group));
  }

  const RawSegment& iea = segs[i];
  require_elements(iea, 2, i);
  std::uint64_t declared = parse_count(iea.elements[0], i);
  if (declared != doc.groups.size())
    throw ParseError(ParseErrc::envelope_mismatch, i,
                     "IEA declares " + std::to_string(declared) + " groups, counted " +
                         std::to_string(doc.groups.size()));
  if (iea.elements[1] != doc.control_number)
    throw ParseError(ParseErrc::envelope_mismatch, i,
                     "IEA control does not match ISA control");
  if (i + 1 != segs.size())
    throw ParseError(ParseErrc::malformed_segment, i + 1, "content after IEA trailer");

  return doc;
}

namespace {

void check_element(const std::string& value, const Delimiters& d, const std::string& where) {
  if (!valid_element(value, d))
    throw InvariantViolation(where + " contains a delimiter, control or non-ASCII byte: '" +
                             value + "'");
}

void emit(std::string& out, const Delimiters& d, std::string_view tag,
          const std::vector<std::string>& elements) {
  out += tag;
  for (const std::string& e : elements) {
    out += d.element_sep;
    out += e;
  }
  out += d.segment_term;
}

}  // namespace

std::string serialize_interchange(const Interchange& doc) {
  const Delimiters& d = doc.delimiters;
  if (d.element_sep == d.segment_term || d.element_sep == d.subelement_sep ||
      d.segment_term == d.subelement_sep)
    throw InvariantViolation("delimiters must be pairwise distinct");
  if (doc.sender_id.empty()) throw InvariantViolation("sender id is empty");
  if (doc.receiver_id.empty()) throw InvariantViolation("receiver id is empty");
  check_element(doc.sender_id, d, "sender id");
  check_element(doc.receiver_id, d, "receiver id");
  if (!digits_n(doc.date, 8)) throw InvariantViolation("date must be 8 digits");
  if (!digits_n(doc.time, 4)) throw InvariantViolation("time must be 4 digits");
  if (!digits_n(doc.control_number, 9))
    throw InvariantViolation("interchange control must be 9 digits");

  std::string out;
  emit(out, d, "ISA",
       {doc.sender_id, doc.receiver_id, doc.date, doc.time, doc.control_number,
        doc.ack_requested ? "1" : "0"});

  for (const FunctionalGroup& g : doc.groups) {
    if (!valid_code(g.doc_type))
      throw InvariantViolation("bad group document type code: '" + g.doc_type + "'");
    if (!digits_n(g.group_control, 4))
      throw InvariantViolation("group control must be 4 digits");
    emit(out, d, "GS", {g.doc_type, g.group_control});
    for (const TransactionSet& t : g.transactions) {
      if (!valid_code(t.txn_type))
        throw InvariantViolation("bad transaction type code: '" + t.txn_type + "'");
      if (!digits_n(t.txn_control, 4))
        throw InvariantViolation("transaction control must be 4 digits");
      emit(out, d, "ST", {t.txn_type, t.txn_control});
      for (const Segment& s : t.body) {
        if (!valid_tag(s.tag)) throw InvariantViolation("bad segment tag: '" + s.tag + "'");
        if (is_envelope_tag(s.tag))
          throw InvariantViolation("reserved envelope tag " + s.tag + " in transaction body");
        for (const std::string& e : s.elements) check_element(e, d, s.tag + " element");
        emit(out, d, s.tag, s.elements);
      }
      // Trailer counts are always generated here, never taken from the caller.
      emit(out, d, "SE", {std::to_string(t.body.size() + 2), t.txn_control});
    }
    emit(out, d, "GE", {std::to_string(g.transactions.size()), g.group_control});
  }
  emit(out, d, "IEA", {std::to_string(doc.groups.size()), doc.control_number});
  return out;
}

ValidationReport validate(const Interchange& doc,
                          const std::set<std::string>& allowed_doc_types) {
  ValidationReport report;
  auto add = [&](Severity sev, std::size_t idx, std::string code, std::string msg) {
    if (sev == Severity::error) report.ok = false;
    report.findings.push_back({sev, idx, std::move(code), std::move(msg)});
  };

  std::size_t idx = 0;  // ISA
  if (doc.sender_id.empty()) add(Severity::error, idx, "EMPTY_SENDER", "sender id is empty");
  if (doc.receiver_id.empty())
    add(Severity::error, idx, "EMPTY_RECEIVER", "receiver id is empty");
  if (!digits_n(doc.control_number, 9))
    add(Severity::error, idx, "BAD_CONTROL_SHAPE", "interchange control must be 9 digits");
  if (!digits_n(doc.date, 8)) add(Severity::error, idx, "BAD_DATE_SHAPE", "date must be 8 digits");
  if (!digits_n(doc.time, 4)) add(Severity::error, idx, "BAD_TIME_SHAPE", "time must be 4 digits");

  std::set<std::string> group_controls;
  for (const FunctionalGroup& g : doc.groups) {
    ++idx;  // GS
    std::size_t gs_index = idx;
    if (!allowed_doc_types.contains(g.doc_type))
      add(Severity::error, gs_index, "DOC_TYPE_NOT_ALLOWED",
          "document type " + g.doc_type + " is not in the allowed set");
    if (!digits_n(g.group_control, 4))
      add(Severity::error, gs_index, "BAD_CONTROL_SHAPE", "group control must be 4 digits");
    else if (!group_controls.insert(g.group_control).second)
      add(Severity::error, gs_index, "DUPLICATE_GROUP_CONTROL",
          "group control " + g.group_control + " reused");

    std::set<std::string> txn_controls;
    for (const TransactionSet& t : g.transactions) {
      ++idx;  // ST
      std::size_t st_index = idx;
      if (t.txn_type != g.doc_type)
        add(Severity::error, st_index, "TXN_TYPE_MISMATCH",
            "transaction type " + t.txn_type + " differs from group type " + g.doc_type);
      if (!digits_n(t.txn_control, 4))
        add(Severity::error, st_index, "BAD_CONTROL_SHAPE", "transaction control must be 4 digits");
      else if (!txn_controls.insert(t.txn_control).second)
        add(Severity::error, st_index, "DUPLICATE_TXN_CONTROL",
            "transaction control " + t.txn_control + " reused in group");
      if (t.body.empty())
        add(Severity::error, st_index, "EMPTY_TXN", "transaction has no body segments");
      for (const Segment& s : t.body) {
        ++idx;
        if (is_envelope_tag(s.tag))
          add(Severity::error, idx, "RESERVED_TAG_IN_BODY",
              "envelope tag " + s.tag + " inside transaction body");
        else if (!kKnownBodyTags.contains(s.tag))
          add(Severity::warning, idx, "UNKNOWN_SEGMENT_TAG", "unknown segment tag " + s.tag);
        for (const std::string& e : s.elements)
          if (!valid_element(e, doc.delimiters))
            add(Severity::error, idx, "BAD_ELEMENT_CONTENT",
                s.tag + " element contains a delimiter, control or non-ASCII byte");
      }
      ++idx;  // SE
    }
    ++idx;  // GE
  }
  return report;
}

Interchange build_functional_ack(const Interchange& original,
                                 const std::vector<AckStatus>& statuses,
                                 const std::string& fa_control) {
  std::set<std::string> known;
  for (const FunctionalGroup& g : original.groups)
    for (const TransactionSet& t : g.transactions) known.insert(t.txn_control);
  for (const AckStatus& s : statuses)
    if (!known.contains(s.txn_control)) throw UnknownTxnControl(s.txn_control);

  Interchange fa;
  fa.sender_id = original.receiver_id;
  fa.receiver_id = original.sender_id;
  fa.date = original.date;
  fa.time = original.time;
  fa.control_number = fa_control.empty() ? original.control_number : fa_control;
  fa.ack_requested = false;  // acks are never themselves acked

  TransactionSet txn;
  txn.txn_type = "FA";
  txn.txn_control = "0001";
  txn.body.push_back(Segment{"REF", {original.control_number}});
  for (const AckStatus& s : statuses) {
    std::string reason = s.reason.empty() ? (s.accepted ? "OK" : "ERR") : s.reason;
    txn.body.push_back(Segment{"ACK", {s.txn_control, s.accepted ? "A" : "R", reason}});
  }
  fa.groups.push_back(FunctionalGroup{"FA", "0001", {std::move(txn)}});
  return fa;
}

std::string format_control(std::uint64_t n) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%09llu", static_cast<unsigned long long>(n));
  return buf;
}

std::string next_control_number(ControlCounter& counter) {
  if (counter.last_issued >= 999999999) throw CounterExhausted();
  ++counter.last_issued;
  return format_control(counter.last_issued);
}

}  // namespace edi::interchange
