#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trace/tensor.hpp"

namespace trace {

// Produces a one-line caption for an encoded (PNG/JPEG) image. A failed query
// returns nullopt rather than throwing so ranking can continue with partial
// coverage.
class CaptionClient {
 public:
  virtual ~CaptionClient() = default;
  virtual std::optional<std::string> caption(const std::vector<unsigned char>& image_bytes) = 0;
};

// Deterministic offline stand-in: hashes the image bytes into a small bank of
// canned subject/scene phrases, so identical inputs always caption
// identically and distinct inputs usually differ.
class StubCaptionClient : public CaptionClient {
 public:
  std::optional<std::string> caption(const std::vector<unsigned char>& image_bytes) override;
};

// POSTs the image to an external captioning service:
//   request body  = raw image bytes (application/octet-stream)
//   response body = {"caption": "..."}
// Bounded by a per-request timeout and a retry count; exhausting both yields
// nullopt so the pipeline never blocks past its budget.
class HttpCaptionClient : public CaptionClient {
 public:
  HttpCaptionClient(std::string endpoint, std::string token, int timeout_ms, int retries);
  std::optional<std::string> caption(const std::vector<unsigned char>& image_bytes) override;

 private:
  std::string base_, path_, token_;
  int timeout_ms_ = 0, retries_ = 0;
};

// Builds a client from TRACE_CAPTION_ENDPOINT / TRACE_CAPTION_TOKEN /
// TRACE_CAPTION_TIMEOUT_MS / TRACE_CAPTION_RETRIES. Without an endpoint the
// deterministic stub is returned.
std::unique_ptr<CaptionClient> make_caption_client_from_env();

// Convenience: PNG-encode a (3, H, W) tensor in [0,1] and caption it.
std::optional<std::string> caption_tensor(CaptionClient& client, const Tensor& image);

}  // namespace trace
