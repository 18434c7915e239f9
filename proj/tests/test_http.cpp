#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <doctest.h>

#include <cstdlib>
#include <thread>

#include <json.hpp>

#include "lagamc/descgen.hpp"

using namespace lagamc;
using nlohmann::json;

namespace {

/// Loopback chat-completions server recording the last request.
struct FakeEndpoint {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  json last_body;
  std::string last_auth;
  int status = 200;
  std::string reply = R"({"choices":[{"message":{"role":"assistant","content":"  Refined text.  "}}]})";

  FakeEndpoint() {
    server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_body = json::parse(req.body);
      last_auth = req.get_header_value("Authorization");
      res.status = status;
      res.set_content(reply, "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeEndpoint() {
    server.stop();
    thread.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions"; }
};

}  // namespace

TEST_SUITE("descgen") {
  TEST_CASE("chat client request and reply over loopback") {
    FakeEndpoint fake;
    ::setenv("LAGAMC_TEST_KEY", "sk-test", 1);
    ChatCompletionsClient::Options o;
    o.endpoint = fake.url();
    o.model = "test-model";
    o.api_key_env = "LAGAMC_TEST_KEY";
    ChatCompletionsClient client(o);
    CHECK(client.complete("Label: joy", 64, 0.5) == "  Refined text.  ");
    CHECK(fake.last_auth == "Bearer sk-test");
    CHECK(fake.last_body["model"] == "test-model");
    CHECK(fake.last_body["max_tokens"] == 64);
    CHECK(fake.last_body["temperature"] == doctest::Approx(0.5));
    CHECK(fake.last_body["messages"][0]["content"] == "Label: joy");

    ::unsetenv("LAGAMC_TEST_KEY");
    client.complete("x", 1, 0.0);
    CHECK(fake.last_auth.empty());

    fake.reply = R"({"choices":[{"text":"legacy"}]})";
    CHECK(client.complete("x", 1, 0.0) == "legacy");

    fake.status = 500;
    CHECK_THROWS(client.complete("x", 1, 0.0));
    fake.status = 200;
    fake.reply = "not json";
    CHECK_THROWS(client.complete("x", 1, 0.0));
  }

  TEST_CASE("refinement through the chat client trims the reply") {
    FakeEndpoint fake;
    ChatCompletionsClient::Options o;
    o.endpoint = fake.url();
    ChatCompletionsClient client(o);
    LabelCatalog catalog({{"joy", "Joy.", "", DescriptionSource::seed}});
    DatasetSplit train{SplitKind::train, {{"1", "lovely", {"joy"}}}};
    RefineOptions opts;
    const auto out = refine_catalog(catalog, train, client, opts);
    CHECK(out.catalog.description(0).refined_text == "Refined text.");
    const std::string sent = fake.last_body["messages"][0]["content"];
    CHECK(sent.rfind("Label: joy\n", 0) == 0);
  }
}
