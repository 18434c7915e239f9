#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdlib>

#include "lagamc/descgen.hpp"
#include "lagamc/error.hpp"

namespace lagamc {

using nlohmann::json;

ChatCompletionsClient::ChatCompletionsClient(Options options) : options_(std::move(options)) {
  const auto& url = options_.endpoint;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ValidationError("endpoint must be an absolute http(s) URL: " + url);
  }
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw ValidationError("unsupported endpoint scheme: " + scheme);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

std::string ChatCompletionsClient::complete(const std::string& prompt, int max_tokens,
                                            double temperature) {
  httplib::Client cli(scheme_host_port_);
  cli.set_connection_timeout(options_.timeout);
  cli.set_read_timeout(options_.timeout);
  cli.set_write_timeout(options_.timeout);

  httplib::Headers headers;
  if (const char* key = std::getenv(options_.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  const json body{{"model", options_.model},
                  {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                  {"max_tokens", max_tokens},
                  {"temperature", temperature}};
  auto res = cli.Post(path_, headers, body.dump(), "application/json");
  if (!res) {
    throw std::runtime_error("request to " + options_.endpoint +
                             " failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw std::runtime_error("endpoint returned HTTP " + std::to_string(res->status));
  }
  const auto reply = json::parse(res->body, nullptr, false);
  if (reply.is_discarded()) throw std::runtime_error("endpoint returned invalid JSON");
  if (!reply.contains("choices") || !reply["choices"].is_array() || reply["choices"].empty()) {
    throw std::runtime_error("endpoint reply has no choices");
  }
  const auto& choice = reply["choices"][0];
  if (choice.contains("message") && choice["message"].contains("content") &&
      choice["message"]["content"].is_string()) {
    return choice["message"]["content"].get<std::string>();
  }
  if (choice.contains("text") && choice["text"].is_string()) return choice["text"].get<std::string>();
  throw std::runtime_error("endpoint reply has no message content");
}

}  // namespace lagamc
