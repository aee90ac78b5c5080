#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace edi::interchange {

/*
 * Wire grammar (full write-up in docs/interchange-grammar.md):
 *
 *   interchange = ISA segment, zero or more groups, IEA segment
 *   group       = GS*<docType>*<ctl4>~ ...transactions... GE*<count>*<ctl4>~
 *   transaction = ST*<type>*<ctl4>~ ...body segments... SE*<count>*<ctl4>~
 *   segment     = TAG { '*' element } '~'
 *
 * ISA carries exactly six elements: sender, receiver, date (YYYYMMDD),
 * time (HHMM), control (9 digits), ack flag (0|1). IEA repeats the group
 * count and control. SE counts segments ST through SE inclusive. Elements
 * are printable ASCII minus the three delimiter bytes; tags match
 * [A-Z][A-Z0-9]{1,2}. Encoding is ASCII throughout.
 */

struct Delimiters {
  char element_sep = '*';
  char segment_term = '~';
  char subelement_sep = ':';  // reserved for later, never emitted in v1
  bool operator==(const Delimiters&) const = default;
};

struct Segment {
  std::string tag;
  std::vector<std::string> elements;
  bool operator==(const Segment&) const = default;
};

struct TransactionSet {
  std::string txn_type;
  std::string txn_control;  // 4 digits
  std::vector<Segment> body;
  bool operator==(const TransactionSet&) const = default;
};

struct FunctionalGroup {
  std::string doc_type;
  std::string group_control;  // 4 digits
  std::vector<TransactionSet> transactions;
  bool operator==(const FunctionalGroup&) const = default;
};

struct Interchange {
  std::string sender_id;
  std::string receiver_id;
  std::string date;            // YYYYMMDD, shape-checked only
  std::string time;            // HHMM, shape-checked only
  std::string control_number;  // 9 digits, zero padded
  bool ack_requested = false;
  std::vector<FunctionalGroup> groups;
  Delimiters delimiters;
  bool operator==(const Interchange&) const = default;
};

enum class ParseErrc { malformed_segment, envelope_mismatch, truncated };

class ParseError : public std::runtime_error {
 public:
  ParseError(ParseErrc code, std::size_t segment_index, const std::string& what)
      : std::runtime_error(what), code_(code), segment_index_(segment_index) {}
  ParseErrc code() const { return code_; }
  std::size_t segment_index() const { return segment_index_; }

 private:
  ParseErrc code_;
  std::size_t segment_index_;
};

// Thrown by serialize_interchange when the tree violates a type invariant
// (delimiter byte in element content, reserved tag in a body, bad shapes).
class InvariantViolation : public std::runtime_error {
 public:
  explicit InvariantViolation(const std::string& what) : std::runtime_error(what) {}
};

class UnknownTxnControl : public std::runtime_error {
 public:
  explicit UnknownTxnControl(const std::string& ctl)
      : std::runtime_error("functional ack references unknown transaction control " + ctl) {}
};

class CounterExhausted : public std::runtime_error {
 public:
  CounterExhausted() : std::runtime_error("control counter exhausted at 999999999") {}
};

enum class Severity { error, warning };

struct Finding {
  Severity severity;
  std::size_t segment_index;  // position in the serialized segment stream
  std::string code;
  std::string message;
};

struct ValidationReport {
  bool ok = true;
  std::vector<Finding> findings;
};

Interchange parse_interchange(std::string_view bytes);
std::string serialize_interchange(const Interchange& doc);

// Structural checks that are data, not failures: doc-type allow list,
// control shape and uniqueness, empty transactions, unknown body tags.
ValidationReport validate(const Interchange& doc,
                          const std::set<std::string>& allowed_doc_types);

struct AckStatus {
  std::string txn_control;
  bool accepted = true;
  std::string reason;  // empty -> "OK" when accepted, "ERR" when rejected
};

// Builds the FA interchange answering `original`, addressed back to its
// sender. Body is one REF segment naming the original interchange control
// followed by one ACK segment per status. fa_control empty reuses the
// original's control number.
Interchange build_functional_ack(const Interchange& original,
                                 const std::vector<AckStatus>& statuses,
                                 const std::string& fa_control = {});

struct ControlCounter {
  std::uint64_t last_issued = 0;
};

std::string format_control(std::uint64_t n);
std::string next_control_number(ControlCounter& counter);

}  // namespace edi::interchange
