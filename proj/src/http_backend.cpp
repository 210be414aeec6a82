#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "dvb/modelgate.hpp"

namespace dvb::gate {

namespace {

std::string base64(const std::vector<std::uint8_t>& bytes) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(kAlphabet[(v >> 6) & 63]);
    out.push_back(kAlphabet[v & 63]);
  }
  if (i < bytes.size()) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

HttpBackend::HttpBackend(HttpConfig config, Transport transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
  if (!transport_) transport_ = default_transport(config_.timeout);
}

std::string HttpBackend::request_body(const ModelRequest& request) {
  using nlohmann::json;
  json messages = json::array();
  if (!request.system.empty()) {
    messages.push_back({{"role", "system"}, {"content", request.system}});
  }
  json content = json::array();
  content.push_back({{"type", "text"}, {"text", request.user}});
  if (request.image) {
    content.push_back(
        {{"type", "image_url"},
         {"image_url",
          {{"url", "data:" + request.image->media_type + ";base64," + base64(request.image->bytes)}}}});
  }
  messages.push_back({{"role", "user"}, {"content", std::move(content)}});
  json body = {{"model", request.model},
               {"messages", std::move(messages)},
               {"temperature", request.sampling.temperature},
               {"max_tokens", request.sampling.max_tokens}};
  return body.dump();
}

std::string HttpBackend::response_text(const std::string& body) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw BackendError(std::string("unparseable response body: ") + e.what(), false);
  }
  try {
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
    std::string out;
    for (const auto& part : content) {
      if (part.value("type", "") == "text") out += part.value("text", "");
    }
    return out;
  } catch (const json::exception& e) {
    throw BackendError(std::string("response missing choices[0].message.content: ") + e.what(),
                       false);
  }
}

std::string HttpBackend::send(const ModelRequest& request) {
  std::multimap<std::string, std::string> headers{{"Content-Type", "application/json"}};
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  const auto reply = transport_(config_.base_url, config_.path, headers, request_body(request));
  if (!reply.error.empty()) {
    throw BackendError("backend unreachable at " + config_.base_url + ": " + reply.error, true);
  }
  if (reply.status < 200 || reply.status >= 300) {
    throw BackendError("HTTP " + std::to_string(reply.status) + " from " + config_.base_url + ": " +
                           reply.body.substr(0, 512),
                       retryable_status(reply.status), reply.status);
  }
  return response_text(reply.body);
}

Transport default_transport(std::chrono::seconds timeout) {
  return [timeout](const std::string& base_url, const std::string& path,
                   const std::multimap<std::string, std::string>& headers,
                   const std::string& body) -> HttpReply {
    httplib::Client client(base_url);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers h;
    std::string content_type = "application/json";
    for (const auto& [k, v] : headers) {
      if (k == "Content-Type") {
        content_type = v;
      } else {
        h.emplace(k, v);
      }
    }
    auto res = client.Post(path, h, body, content_type);
    if (!res) return HttpReply{0, {}, httplib::to_string(res.error())};
    return HttpReply{res->status, res->body, {}};
  };
}

}  // namespace dvb::gate
