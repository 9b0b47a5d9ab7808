#include "trace/caption.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cstdint>
#include <cstdlib>

#include "trace/image_io.hpp"

namespace trace {

namespace {

std::uint64_t fnv1a(const unsigned char* bytes, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

int env_int(const char* name, int fallback) {
  const char* raw = std::getenv(name);
  if (raw == nullptr || *raw == '\0') return fallback;
  return std::atoi(raw);
}

}  // namespace

std::optional<std::string> StubCaptionClient::caption(const std::vector<unsigned char>& image_bytes) {
  static const char* kSubjects[] = {"dog",    "boat", "car",  "bird",
                                    "person", "tree", "house", "bicycle"};
  static const char* kScenes[] = {"on a lawn",       "near the water",  "under a grey sky",
                                  "beside a wall",   "in the distance", "at the roadside"};
  const std::uint64_t h = fnv1a(image_bytes.data(), image_bytes.size());
  std::string out = "a ";
  out += kSubjects[h % 8u];
  out += ' ';
  out += kScenes[(h / 8u) % 6u];
  return out;
}

HttpCaptionClient::HttpCaptionClient(std::string endpoint, std::string token, int timeout_ms,
                                     int retries)
    : token_(std::move(token)), timeout_ms_(timeout_ms), retries_(retries) {
  const std::size_t scheme = endpoint.find("://");
  const std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
  const std::size_t slash = endpoint.find('/', host_start);
  if (slash == std::string::npos) {
    base_ = endpoint;
    path_ = "/";
  } else {
    base_ = endpoint.substr(0, slash);
    path_ = endpoint.substr(slash);
  }
}

std::optional<std::string> HttpCaptionClient::caption(const std::vector<unsigned char>& image_bytes) {
  for (int attempt = 0; attempt <= retries_; ++attempt) {
    httplib::Client cli(base_);
    cli.set_connection_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
    cli.set_read_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
    cli.set_write_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    auto res = cli.Post(path_, headers, reinterpret_cast<const char*>(image_bytes.data()),
                        image_bytes.size(), "application/octet-stream");
    if (!res || res->status != 200) continue;
    try {
      const auto body = nlohmann::json::parse(res->body);
      if (body.contains("caption") && body["caption"].is_string())
        return body["caption"].get<std::string>();
    } catch (const nlohmann::json::exception&) {
      // malformed body counts as a failed attempt
    }
  }
  return std::nullopt;
}

std::unique_ptr<CaptionClient> make_caption_client_from_env() {
  const char* endpoint = std::getenv("TRACE_CAPTION_ENDPOINT");
  if (endpoint == nullptr || *endpoint == '\0') return std::make_unique<StubCaptionClient>();
  const char* token = std::getenv("TRACE_CAPTION_TOKEN");
  return std::make_unique<HttpCaptionClient>(endpoint, token == nullptr ? "" : token,
                                             env_int("TRACE_CAPTION_TIMEOUT_MS", 2000),
                                             env_int("TRACE_CAPTION_RETRIES", 2));
}

std::optional<std::string> caption_tensor(CaptionClient& client, const Tensor& image) {
  return client.caption(encode_png(tensor_to_image(image)));
}

}  // namespace trace
