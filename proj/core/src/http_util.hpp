#pragma once

// Private to the core library: thin glue over cpp-httplib.

#include <memory>
#include <string>

#include <httplib.h>

namespace cshi::detail {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // always starts with '/'
};

ParsedUrl parse_url(const std::string& url);

// Client for `origin` with connection/read timeouts applied.
std::unique_ptr<httplib::Client> make_client(const std::string& origin, int timeout_ms);

}  // namespace cshi::detail
