#pragma once

#include "mmif/infer/inpainter.hpp"

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace mmif::serve {

struct Reply {
  int status = 200;
  std::string body;  // JSON
};

struct ServiceOptions {
  int max_side = 4096;  // larger images get 413
};

/// Owns the model and a single worker thread. Every request that touches the model runs on
/// that thread in arrival order, so concurrent callers see the same results as serial ones.
class InpaintService {
 public:
  explicit InpaintService(ServiceOptions opts = {});
  ~InpaintService();
  InpaintService(const InpaintService&) = delete;
  InpaintService& operator=(const InpaintService&) = delete;

  /// Loads (or replaces) the checkpoint on the worker thread.
  void load(const std::filesystem::path& dir);

  /// POST /v1/inpaint body -> reply.
  Reply inpaint(const std::string& body);
  /// GET /v1/health reply body.
  std::string health() const;
  /// Requests queued or running.
  int queue_depth() const { return depth_.load(); }

  /// Registers the routes on an httplib server.
  void mount(httplib::Server& server);

 private:
  template <typename F>
  auto submit(F&& f) -> decltype(f());
  void worker();

  ServiceOptions opts_;
  mutable std::mutex state_mu_;  // guards model_ and ckpt_
  std::unique_ptr<infer::Inpainter> model_;
  std::string ckpt_;

  std::mutex q_mu_;
  std::condition_variable q_cv_;
  std::deque<std::function<void()>> queue_;
  bool stop_ = false;
  std::atomic<int> depth_{0};
  std::thread thread_;
};

/// Strict base64 decode; throws std::invalid_argument on bad input.
std::string base64_decode(const std::string& in);
std::string base64_encode(const std::string& in);

}  // namespace mmif::serve
