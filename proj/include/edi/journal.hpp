#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace edi::service {

class CorruptJournal : public std::runtime_error {
 public:
  explicit CorruptJournal(const std::string& what) : std::runtime_error(what) {}
};

/*
 * Append-only record log. Each record is
 *
 *   u32 LE payload length | u32 LE CRC-32 of payload | payload bytes
 *
 * Appends are a single write followed by fsync, so a record acknowledged to
 * a caller survives a crash. Replay discards a torn trailing record (the
 * write that died) with a warning flag; a checksum failure on a complete
 * record means real corruption and refuses to load.
 */
class JournalWriter {
 public:
  explicit JournalWriter(const std::filesystem::path& path);
  ~JournalWriter();
  JournalWriter(JournalWriter&& other) noexcept;
  JournalWriter& operator=(JournalWriter&&) = delete;
  JournalWriter(const JournalWriter&) = delete;

  void append(std::string_view payload);

 private:
  int fd_ = -1;
  std::filesystem::path path_;
};

struct ReplayResult {
  std::vector<std::string> records;
  bool torn_tail = false;  // a trailing partial record was discarded
};

// A missing file replays as empty.
ReplayResult replay_journal(const std::filesystem::path& path);

}  // namespace edi::service
