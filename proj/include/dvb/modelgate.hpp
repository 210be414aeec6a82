#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dvb/error.hpp"

// Chat-style access to injector, detector and models under test, with a
// content-addressed response cache, retries and in-flight de-duplication.
namespace dvb::gate {

enum class Purpose { inject, detect, evaluate, caption };
std::string_view to_string(Purpose p);

struct ImageAttachment {
  std::vector<std::uint8_t> bytes;
  std::string media_type;
  bool operator==(const ImageAttachment&) const = default;
};

struct Sampling {
  double temperature = 0.0;
  int max_tokens = 4096;
  bool operator==(const Sampling&) const = default;
};

struct ModelRequest {
  std::string model;
  std::string system;
  std::string user;
  std::optional<ImageAttachment> image;
  Sampling sampling;
  Purpose purpose = Purpose::evaluate;
  bool operator==(const ModelRequest&) const = default;
};

struct ModelResponse {
  std::string text;
  std::string backend;
  std::chrono::duration<double, std::milli> latency{0};
  bool cache_hit = false;
  int attempts = 0;
};

/// Transport-level failure; `retryable` separates 429/5xx/connection errors
/// from auth and bad-request errors.
class BackendError : public Error {
 public:
  BackendError(const std::string& what, bool retryable, int status = 0)
      : Error(what), retryable_(retryable), status_(status) {}
  bool retryable() const noexcept { return retryable_; }
  int status() const noexcept { return status_; }

 private:
  bool retryable_;
  int status_;
};

class AttemptsExhausted : public Error {
 public:
  AttemptsExhausted(const std::string& what, int attempts) : Error(what), attempts_(attempts) {}
  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

/// Raised by the scripted backend when no rule answers a request.
class ScriptExhausted : public Error {
 public:
  ScriptExhausted(Purpose purpose, const std::string& what) : Error(what), purpose_(purpose) {}
  Purpose purpose() const noexcept { return purpose_; }

 private:
  Purpose purpose_;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string id() const = 0;
  /// Returns the verbatim completion text or throws BackendError.
  virtual std::string send(const ModelRequest& request) = 0;
};

/// Hex SHA-256 over a length-prefixed encoding of every request field.
std::string cache_key(const ModelRequest& request);

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
};

struct GateOptions {
  std::optional<std::filesystem::path> cache_dir;
  RetryPolicy retry;
  /// Replaceable for tests; defaults to std::this_thread::sleep_for.
  std::function<void(std::chrono::milliseconds)> sleep;
};

class ModelGate {
 public:
  explicit ModelGate(std::shared_ptr<Backend> backend, GateOptions options = {});

  /// Thread-safe. Identical concurrent requests share one backend call.
  ModelResponse complete(const ModelRequest& request);

  /// Cached text for a request, if any (memory first, then disk).
  std::optional<std::string> lookup(const ModelRequest& request);

  const Backend& backend() const { return *backend_; }
  std::size_t backend_calls() const;

 private:
  struct Outcome {
    std::string text;
    int attempts = 0;
  };

  Outcome call_with_retry(const ModelRequest& request);
  std::optional<std::string> read_disk(const std::string& key) const;
  void write_disk(const std::string& key, const std::string& text) const;

  std::shared_ptr<Backend> backend_;
  GateOptions options_;
  mutable std::mutex mutex_;
  std::map<std::string, std::string> memory_;
  std::map<std::string, std::shared_future<Outcome>> in_flight_;
  std::size_t backend_calls_ = 0;
};

// ---------------------------------------------------------------------------
// Scripted backend (deterministic, no network)

/// A rule answers requests of one purpose for which `handler` returns text.
struct ScriptRule {
  Purpose purpose;
  std::function<std::optional<std::string>(const ModelRequest&)> handler;
  std::string label;
};

enum class Exhaustion { error, repeat_last };

class ScriptedBackend : public Backend {
 public:
  explicit ScriptedBackend(std::string id = "scripted", Exhaustion policy = Exhaustion::error);

  std::string id() const override { return id_; }
  std::string send(const ModelRequest& request) override;

  /// Replies from `replies` in order to requests matching purpose (and
  /// `contains`, when non-empty, as a substring of the user text).
  ScriptedBackend& queue(Purpose purpose, std::vector<std::string> replies, std::string contains = {});
  ScriptedBackend& on(Purpose purpose,
                      std::function<std::optional<std::string>(const ModelRequest&)> handler,
                      std::string label = {});

  std::size_t calls() const;

 private:
  std::string id_;
  Exhaustion policy_;
  mutable std::mutex mutex_;
  std::vector<ScriptRule> rules_;
  std::map<Purpose, std::string> last_reply_;
  std::size_t calls_ = 0;
};

/// Text between the last "<caption>\n" and the following "\n</caption>" in
/// a prompt; prompt templates wrap the caption this way.
std::optional<std::string> extract_prompt_caption(std::string_view prompt);

/// Builds a scripted backend from a JSON script:
///   {"id": str, "exhaustion": "error"|"repeat_last",
///    "rules": [{"purpose": str, "model": str?, "contains": str?,
///               "replies": [str]} |
///              {"purpose": str, "model": str?, "handler": name, ...}]}
/// Handlers: echo_caption, tag_all, substitute {from,to,label},
/// quote_phrases {phrases}, no_issues.
std::shared_ptr<ScriptedBackend> scripted_from_json(std::string_view script);

// ---------------------------------------------------------------------------
// HTTP backend (OpenAI-compatible chat completions)

struct HttpReply {
  int status = 0;
  std::string body;
  std::string error;  // non-empty on connection failure
};

/// POST body to `path` on `base_url` with the given headers.
using Transport = std::function<HttpReply(const std::string& base_url, const std::string& path,
                                          const std::multimap<std::string, std::string>& headers,
                                          const std::string& body)>;

struct HttpConfig {
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  std::string api_key_env = "DVB_API_KEY";
  std::chrono::seconds timeout{120};
};

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpConfig config, Transport transport = {});

  std::string id() const override { return "http:" + config_.base_url; }
  std::string send(const ModelRequest& request) override;

  static std::string request_body(const ModelRequest& request);
  /// Extracts choices[0].message.content (string or list of text parts).
  static std::string response_text(const std::string& body);

 private:
  HttpConfig config_;
  Transport transport_;
};

Transport default_transport(std::chrono::seconds timeout);

}  // namespace dvb::gate
