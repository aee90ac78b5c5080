#include "edi/multipart.hpp"

#include <sodium.h>

#include <stdexcept>

#include "edi/keystore.hpp"

namespace edi::service {

std::string make_boundary() {
  secenv::crypto_init();
  std::uint8_t raw[16];
  randombytes_buf(raw, sizeof raw);
  return "edi-" + secenv::to_hex({raw, sizeof raw});
}

std::string build_multipart(const std::vector<MultipartPart>& parts,
                            const std::string& boundary) {
  std::string out;
  for (const MultipartPart& part : parts) {
    out += "--" + boundary + "\r\n";
    for (const auto& [name, value] : part.headers) out += name + ": " + value + "\r\n";
    out += "\r\n";
    out += part.body;
    out += "\r\n";
  }
  out += "--" + boundary + "--\r\n";
  return out;
}

std::vector<MultipartPart> parse_multipart(std::string_view body,
                                           const std::string& boundary) {
  std::vector<MultipartPart> parts;
  const std::string open = "--" + boundary;
  std::size_t pos = body.find(open);
  if (pos == std::string_view::npos) throw std::runtime_error("multipart: no boundary");

  while (true) {
    pos += open.size();
    if (body.substr(pos, 2) == "--") return parts;  // closing marker
    if (body.substr(pos, 2) != "\r\n") throw std::runtime_error("multipart: bad boundary line");
    pos += 2;

    MultipartPart part;
    while (true) {
      std::size_t eol = body.find("\r\n", pos);
      if (eol == std::string_view::npos) throw std::runtime_error("multipart: truncated headers");
      if (eol == pos) {  // blank line ends headers
        pos += 2;
        break;
      }
      std::string_view line = body.substr(pos, eol - pos);
      std::size_t colon = line.find(':');
      if (colon == std::string_view::npos)
        throw std::runtime_error("multipart: malformed header line");
      std::string name(line.substr(0, colon));
      std::string_view value = line.substr(colon + 1);
      while (!value.empty() && value.front() == ' ') value.remove_prefix(1);
      part.headers[name] = std::string(value);
      pos = eol + 2;
    }

    std::size_t next = body.find("\r\n" + open, pos);
    if (next == std::string_view::npos) throw std::runtime_error("multipart: truncated part");
    part.body = std::string(body.substr(pos, next - pos));
    parts.push_back(std::move(part));
    pos = next + 2;
  }
}

std::optional<std::string> boundary_from_content_type(std::string_view content_type) {
  const std::string_view key = "boundary=";
  std::size_t pos = content_type.find(key);
  if (pos == std::string_view::npos) return std::nullopt;
  std::string_view rest = content_type.substr(pos + key.size());
  std::size_t end = rest.find(';');
  if (end != std::string_view::npos) rest = rest.substr(0, end);
  if (!rest.empty() && rest.front() == '"' && rest.back() == '"' && rest.size() >= 2)
    rest = rest.substr(1, rest.size() - 2);
  return std::string(rest);
}

}  // namespace edi::service
