#include "dvb/modelgate.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace dvb::gate {

std::string_view to_string(Purpose p) {
  switch (p) {
    case Purpose::inject:
      return "inject";
    case Purpose::detect:
      return "detect";
    case Purpose::evaluate:
      return "evaluate";
    case Purpose::caption:
      return "caption";
  }
  return "evaluate";
}

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      throw Error("sha256: OpenSSL initialisation failed");
    }
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }

  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (56 - 8 * i));
    update(b, sizeof b);
  }

  // Length-prefixed field so that concatenations cannot collide.
  void field(std::string_view tag, const void* data, std::size_t n) {
    u64(tag.size());
    update(tag.data(), tag.size());
    u64(n);
    update(data, n);
  }
  void field(std::string_view tag, std::string_view s) { field(tag, s.data(), s.size()); }

  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, digest, &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(kHex[digest[i] >> 4]);
      out.push_back(kHex[digest[i] & 0xf]);
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string cache_key(const ModelRequest& r) {
  Sha256 h;
  h.field("v", "dvb-cache/1");
  h.field("model", r.model);
  h.field("system", r.system);
  h.field("user", r.user);
  if (r.image) {
    h.field("image", r.image->bytes.data(), r.image->bytes.size());
    h.field("media_type", r.image->media_type);
  } else {
    h.field("image", "");
  }
  h.u64(std::bit_cast<std::uint64_t>(r.sampling.temperature));
  h.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(r.sampling.max_tokens)));
  h.field("purpose", to_string(r.purpose));
  return h.hex();
}

ModelGate::ModelGate(std::shared_ptr<Backend> backend, GateOptions options)
    : backend_(std::move(backend)), options_(std::move(options)) {
  if (!backend_) throw Error("ModelGate: backend not configured");
  if (!options_.sleep) {
    options_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }
  if (options_.retry.max_attempts < 1) options_.retry.max_attempts = 1;
  if (options_.cache_dir) std::filesystem::create_directories(*options_.cache_dir);
}

std::size_t ModelGate::backend_calls() const {
  std::lock_guard lock(mutex_);
  return backend_calls_;
}

ModelGate::Outcome ModelGate::call_with_retry(const ModelRequest& request) {
  auto backoff = options_.retry.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    {
      std::lock_guard lock(mutex_);
      ++backend_calls_;
    }
    try {
      return Outcome{backend_->send(request), attempt};
    } catch (const BackendError& e) {
      if (!e.retryable()) throw;
      if (attempt >= options_.retry.max_attempts) {
        throw AttemptsExhausted(std::string(to_string(request.purpose)) + " request to '" +
                                    request.model + "' failed after " + std::to_string(attempt) +
                                    " attempts: " + e.what(),
                                attempt);
      }
    }
    options_.sleep(backoff);
    backoff = std::chrono::milliseconds(
        static_cast<long long>(static_cast<double>(backoff.count()) * options_.retry.multiplier));
  }
}

std::optional<std::string> ModelGate::read_disk(const std::string& key) const {
  if (!options_.cache_dir) return std::nullopt;
  const auto path = *options_.cache_dir / key.substr(0, 2) / (key + ".json");
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    auto j = nlohmann::json::parse(buf.str());
    if (j.value("key", "") != key) return std::nullopt;
    return j.at("text").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;  // torn or foreign file: treat as a miss
  }
}

void ModelGate::write_disk(const std::string& key, const std::string& text) const {
  if (!options_.cache_dir) return;
  const auto dir = *options_.cache_dir / key.substr(0, 2);
  std::filesystem::create_directories(dir);
  const auto final_path = dir / (key + ".json");
  auto tmp = final_path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write cache file '" + tmp.string() + "'");
    out << nlohmann::json{{"key", key}, {"backend", backend_->id()}, {"text", text}}.dump();
  }
  std::filesystem::rename(tmp, final_path);
}

std::optional<std::string> ModelGate::lookup(const ModelRequest& request) {
  const auto key = cache_key(request);
  {
    std::lock_guard lock(mutex_);
    if (auto it = memory_.find(key); it != memory_.end()) return it->second;
  }
  return read_disk(key);
}

ModelResponse ModelGate::complete(const ModelRequest& request) {
  const auto started = std::chrono::steady_clock::now();
  const auto key = cache_key(request);
  auto finish = [&](std::string text, bool hit, int attempts) {
    ModelResponse r;
    r.text = std::move(text);
    r.backend = backend_->id();
    r.cache_hit = hit;
    r.attempts = attempts;
    r.latency = std::chrono::steady_clock::now() - started;
    return r;
  };

  std::promise<Outcome> promise;
  {
    std::unique_lock lock(mutex_);
    if (auto it = memory_.find(key); it != memory_.end()) return finish(it->second, true, 0);
    if (auto it = in_flight_.find(key); it != in_flight_.end()) {
      auto shared = it->second;
      lock.unlock();
      return finish(shared.get().text, true, 0);
    }
    in_flight_.emplace(key, promise.get_future().share());
  }

  Outcome outcome;
  bool hit = false;
  try {
    if (auto cached = read_disk(key)) {
      outcome.text = std::move(*cached);
      hit = true;
    } else {
      outcome = call_with_retry(request);
      write_disk(key, outcome.text);
    }
  } catch (...) {
    {
      std::lock_guard lock(mutex_);
      in_flight_.erase(key);
    }
    promise.set_exception(std::current_exception());
    throw;
  }
  {
    std::lock_guard lock(mutex_);
    memory_[key] = outcome.text;
    in_flight_.erase(key);
  }
  promise.set_value(outcome);
  return finish(outcome.text, hit, hit ? 0 : outcome.attempts);
}

}  // namespace dvb::gate
