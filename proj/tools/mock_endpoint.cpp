// Standalone deterministic generation endpoint for exercising the harness
// over real HTTP.

#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "chembench/http.hpp"

namespace {
httplib::Server* g_server = nullptr;
void on_signal(int) {
  if (g_server) g_server->stop();
}
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mock /v1/generate endpoint"};
  std::string host = "127.0.0.1";
  int port = 8089;
  std::string mode = "random";
  std::string answers;
  uint64_t seed = 0;
  int fail_first = 0;
  app.add_option("--host", host)->capture_default_str();
  app.add_option("--port", port)->capture_default_str();
  app.add_option("--mode", mode, "echo, empty or random")->capture_default_str();
  app.add_option("--answers", answers, "JSONL of {prompt, text, choice?} for echo mode");
  app.add_option("--seed", seed)->capture_default_str();
  app.add_option("--fail-first", fail_first, "fail each prompt this many times before answering")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    chembench::harness::MockEndpoint mock(chembench::harness::MockEndpoint::parse_mode(mode), seed);
    if (!answers.empty()) mock.load_answers(answers);
    mock.set_failures_per_prompt(fail_first);
    httplib::Server server;
    chembench::http::install_mock_routes(server, mock);
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "listening on http://" << host << ":" << port << chembench::http::kGeneratePath << "\n";
    if (!server.listen(host, port)) {
      std::cerr << "error: cannot listen on " << host << ":" << port << "\n";
      return 2;
    }
  } catch (const chembench::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
