#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace edi::service {

struct MultipartPart {
  std::map<std::string, std::string> headers;
  std::string body;
};

std::string make_boundary();
std::string build_multipart(const std::vector<MultipartPart>& parts,
                            const std::string& boundary);
std::vector<MultipartPart> parse_multipart(std::string_view body,
                                           const std::string& boundary);
std::optional<std::string> boundary_from_content_type(std::string_view content_type);

}  // namespace edi::service
