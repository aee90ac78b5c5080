#include "edi/journal.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <cstring>
#include <fstream>

namespace edi::service {

namespace {

constexpr std::size_t kMaxRecordLen = 64u << 20;

std::uint32_t crc_of(std::string_view payload) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size()));
  return static_cast<std::uint32_t>(crc);
}

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const char* p) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(p[0])) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(p[1])) << 8) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(p[2])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(p[3])) << 24);
}

}  // namespace

JournalWriter::JournalWriter(const std::filesystem::path& path) : path_(path) {
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd_ < 0)
    throw std::runtime_error("cannot open journal " + path.string() + ": " +
                             std::strerror(errno));
}

JournalWriter::~JournalWriter() {
  if (fd_ >= 0) ::close(fd_);
}

JournalWriter::JournalWriter(JournalWriter&& other) noexcept
    : fd_(other.fd_), path_(std::move(other.path_)) {
  other.fd_ = -1;
}

void JournalWriter::append(std::string_view payload) {
  if (payload.size() > kMaxRecordLen)
    throw std::runtime_error("journal record too large");
  std::string record;
  record.reserve(payload.size() + 8);
  put_u32(record, static_cast<std::uint32_t>(payload.size()));
  put_u32(record, crc_of(payload));
  record.append(payload);

  std::size_t off = 0;
  while (off < record.size()) {
    ssize_t n = ::write(fd_, record.data() + off, record.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error("journal write failed on " + path_.string() + ": " +
                               std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
  if (::fsync(fd_) != 0)
    throw std::runtime_error("journal fsync failed on " + path_.string());
}

ReplayResult replay_journal(const std::filesystem::path& path) {
  ReplayResult result;
  std::ifstream in(path, std::ios::binary);
  if (!in) return result;  // nothing journaled yet
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>{});

  std::size_t pos = 0;
  while (pos < data.size()) {
    if (data.size() - pos < 8) {
      result.torn_tail = true;  // the header itself was torn
      break;
    }
    std::uint32_t len = get_u32(data.data() + pos);
    std::uint32_t want_crc = get_u32(data.data() + pos + 4);
    if (len > kMaxRecordLen)
      throw CorruptJournal(path.string() + ": absurd record length at offset " +
                           std::to_string(pos));
    if (data.size() - pos - 8 < len) {
      result.torn_tail = true;  // payload was torn mid-write
      break;
    }
    std::string_view payload(data.data() + pos + 8, len);
    if (crc_of(payload) != want_crc)
      throw CorruptJournal(path.string() + ": checksum failure at offset " +
                           std::to_string(pos));
    result.records.emplace_back(payload);
    pos += 8 + len;
  }
  return result;
}

}  // namespace edi::service
