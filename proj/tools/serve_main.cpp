#include "cli.hpp"
#include "service.hpp"

#include "httplib.h"

#include <cstdlib>
#include <iostream>

// Environment: MMIF_PORT (default 8080), MMIF_HOST (default 127.0.0.1), MMIF_CHECKPOINT (optional),
// MMIF_MAX_SIDE (default 4096).
int main() {
  mmif::cli::keep_freed_memory();
  auto env = [](const char* k, const char* def) {
    const char* v = std::getenv(k);
    return std::string(v && *v ? v : def);
  };
  try {
    mmif::serve::ServiceOptions opts;
    opts.max_side = std::stoi(env("MMIF_MAX_SIDE", "4096"));
    mmif::serve::InpaintService service(opts);
    const std::string ckpt = env("MMIF_CHECKPOINT", "");
    if (!ckpt.empty()) service.load(ckpt);
    httplib::Server server;
    server.set_payload_max_length(static_cast<size_t>(opts.max_side) * opts.max_side * 8);
    service.mount(server);
    const std::string host = env("MMIF_HOST", "127.0.0.1");
    const int port = std::stoi(env("MMIF_PORT", "8080"));
    std::cerr << "listening on " << host << ":" << port << (ckpt.empty() ? " (no checkpoint)" : "") << "\n";
    if (!server.listen(host, port)) {
      std::cerr << "error: cannot listen on " << host << ":" << port << "\n";
      return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
