#include <unistd.h>

#include <csignal>
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "atomchip/service.hpp"

namespace {
volatile std::sig_atomic_t stop_requested = 0;
void on_signal(int) { stop_requested = 1; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Atom chip design service"};
  atomchip::ServiceOptions options;
  app.add_option("--host", options.host, "Address to bind");
  app.add_option("--port", options.port, "HTTP port (0 = any free port)");
  app.add_option("--stream-port", options.stream_port, "MOT stream port (0 = any free port)");
  app.add_option("--static-dir", options.static_dir, "Directory of UI assets served at /");
  app.add_option("--threads", options.threads, "Worker threads per request")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  try {
    atomchip::Service service(options);
    service.start();
    std::printf("http %s:%d\nstream %s:%d\n", options.host.c_str(), service.http_port(), options.host.c_str(),
                service.stream_port());
    std::fflush(stdout);
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!stop_requested) pause();
    service.stop();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
