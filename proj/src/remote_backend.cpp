#include <chrono>
#include <cstdlib>
#include <semaphore>
#include <thread>

#include <httplib.h>

#include "organsim/backends.hpp"
#include "organsim/errors.hpp"

namespace organsim {

namespace {

class RemoteBackend final : public AgentBackend {
 public:
  explicit RemoteBackend(RemoteConfig cfg)
      : cfg_(std::move(cfg)), slots_(cfg_.max_in_flight) {}

  std::string generate(std::string_view prompt) const override {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<1024>& s;
      ~Release() { s.release(); }
    } release{slots_};

    const nlohmann::json body{{"prompt", std::string(prompt)}};
    httplib::Headers headers;
    if (const char* tok = std::getenv(cfg_.token_env.c_str()); tok && *tok) {
      headers.emplace("Authorization", std::string("Bearer ") + tok);
    }
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt) std::this_thread::sleep_for(std::chrono::milliseconds(50 << std::min(attempt, 5)));
      httplib::Client cli(cfg_.url);
      const auto timeout = std::chrono::milliseconds(cfg_.timeout_ms);
      cli.set_connection_timeout(timeout);
      cli.set_read_timeout(timeout);
      cli.set_write_timeout(timeout);
      auto res = cli.Post(cfg_.path, headers, body.dump(), "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500 || res->status == 429) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw Error("remote backend returned HTTP " + std::to_string(res->status));
      }
      try {
        return nlohmann::json::parse(res->body).at("completion").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("remote backend sent a malformed body: ") + e.what());
      }
    }
    throw RetryableBackendError("remote backend unavailable after " +
                                std::to_string(cfg_.max_retries + 1) + " attempts: " + last_error);
  }

  std::string_view kind() const override { return "remote"; }

 private:
  RemoteConfig cfg_;
  mutable std::counting_semaphore<1024> slots_;
};

}  // namespace

RemoteConfig RemoteConfig::from_json(const nlohmann::json& j) {
  RemoteConfig c;
  try {
    c.url = j.at("url").get<std::string>();
    c.path = j.value("path", c.path);
    c.token_env = j.value("token_env", c.token_env);
    c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("remote backend config: ") + e.what());
  }
  if (c.timeout_ms <= 0 || c.max_retries < 0 || c.max_in_flight < 1 || c.max_in_flight > 1024) {
    throw ValidationError("remote backend config: out-of-range limits");
  }
  return c;
}

std::shared_ptr<const AgentBackend> make_remote_backend(const RemoteConfig& cfg) {
  return std::make_shared<RemoteBackend>(cfg);
}

}  // namespace organsim
