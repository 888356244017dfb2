#include "service.hpp"

#include "httplib.h"
#include "json.hpp"

#include <chrono>
#include <future>

namespace mmif::serve {
namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

/// Request problems that map to a specific status code.
struct HttpError : std::runtime_error {
  int status;
  HttpError(int s, const std::string& msg) : std::runtime_error(msg), status(s) {}
};

std::string error_body(const std::string& msg) { return json{{"error", msg}}.dump(); }

double ms_since(Clock::time_point t) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t).count();
}

std::vector<std::uint8_t> field_bytes(const json& j, const char* name) {
  if (!j.at(name).is_string()) throw HttpError(400, std::string(name) + " must be a base64 string");
  try {
    const std::string raw = base64_decode(j.at(name).get<std::string>());
    return {raw.begin(), raw.end()};
  } catch (const std::invalid_argument& e) {
    throw HttpError(400, std::string(name) + ": " + e.what());
  }
}

/// Rejects oversize PNGs from their header, before any pixel memory is allocated.
void check_png_size(const std::vector<std::uint8_t>& b, int max_side, const char* name) {
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (b.size() < 24 || !std::equal(sig, sig + 8, b.begin())) return;
  auto be32 = [&](size_t o) {
    return (std::uint32_t{b[o]} << 24) | (std::uint32_t{b[o + 1]} << 16) | (std::uint32_t{b[o + 2]} << 8) | b[o + 3];
  };
  const std::uint32_t w = be32(16), h = be32(20);
  if (w > static_cast<std::uint32_t>(max_side) || h > static_cast<std::uint32_t>(max_side))
    throw HttpError(413, std::string(name) + " is " + std::to_string(w) + "x" + std::to_string(h) +
                             ", limit is " + std::to_string(max_side) + " per side");
}

template <typename F>
auto decoded(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw HttpError(400, std::string(name) + ": " + e.what());
  }
}

infer::Request parse_request(const std::string& body, int max_side) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw HttpError(400, std::string("body is not JSON: ") + e.what());
  }
  if (!j.is_object()) throw HttpError(400, "body must be a JSON object");
  for (const char* f : {"image", "mask"})
    if (!j.contains(f)) throw HttpError(400, std::string("missing field '") + f + "'");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "image" && it.key() != "mask" && it.key() != "edge_hint" && it.key() != "seg_hint" &&
        it.key() != "seed")
      throw HttpError(400, "unknown field '" + it.key() + "'");

  infer::Request r;
  const auto image = field_bytes(j, "image");
  check_png_size(image, max_side, "image");
  r.image = decoded("image", [&] { return data::decode_image(image, 3); });
  if (r.image.width > max_side || r.image.height > max_side)
    throw HttpError(413, "image exceeds " + std::to_string(max_side) + " pixels per side");
  const auto mask = field_bytes(j, "mask");
  check_png_size(mask, max_side, "mask");
  r.mask = decoded("mask", [&] { return masking::decode_mask(mask); });
  if (r.mask.dim(1) != r.image.height || r.mask.dim(2) != r.image.width)
    throw HttpError(400, "mask is " + std::to_string(r.mask.dim(2)) + "x" + std::to_string(r.mask.dim(1)) +
                             ", image is " + std::to_string(r.image.width) + "x" + std::to_string(r.image.height));
  if (j.contains("edge_hint") && !j["edge_hint"].is_null()) {
    const auto e = field_bytes(j, "edge_hint");
    check_png_size(e, max_side, "edge_hint");
    r.edge = decoded("edge_hint", [&] { return data::decode_image(e, 1); });
  }
  if (j.contains("seg_hint") && !j["seg_hint"].is_null()) {
    const auto s = field_bytes(j, "seg_hint");
    check_png_size(s, max_side, "seg_hint");
    r.seg = decoded("seg_hint", [&] { return data::decode_labels(s); });
  }
  if (j.contains("seed") && !j["seed"].is_null()) {
    if (!j["seed"].is_number_integer() || j["seed"].get<long long>() < 0)
      throw HttpError(400, "seed must be a non-negative integer");
    r.seed = j["seed"].get<std::uint64_t>();
  }
  return r;
}

std::string png_b64(const data::ImageU8& img) {
  const auto bytes = data::encode_png(img);
  return base64_encode(std::string(bytes.begin(), bytes.end()));
}

}  // namespace

std::string base64_encode(const std::string& in) { return httplib::detail::base64_encode(in); }

std::string base64_decode(const std::string& in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+' || c == '-') return 62;
    if (c == '/' || c == '_') return 63;
    return -1;
  };
  std::string clean;
  clean.reserve(in.size());
  for (char c : in)
    if (c != '\n' && c != '\r' && c != ' ') clean += c;
  while (!clean.empty() && clean.back() == '=') clean.pop_back();
  if (clean.size() % 4 == 1) throw std::invalid_argument("truncated base64");
  std::string out;
  out.reserve(clean.size() * 3 / 4);
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : clean) {
    const int v = value(c);
    if (v < 0) throw std::invalid_argument("invalid base64 character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += static_cast<char>((acc >> bits) & 0xff);
    }
  }
  return out;
}

InpaintService::InpaintService(ServiceOptions opts) : opts_(opts), thread_([this] { worker(); }) {}

InpaintService::~InpaintService() {
  {
    std::lock_guard lk(q_mu_);
    stop_ = true;
  }
  q_cv_.notify_all();
  thread_.join();
}

void InpaintService::worker() {
  for (;;) {
    std::function<void()> job;
    {
      std::unique_lock lk(q_mu_);
      q_cv_.wait(lk, [&] { return stop_ || !queue_.empty(); });
      if (queue_.empty()) return;
      job = std::move(queue_.front());
      queue_.pop_front();
    }
    job();
  }
}

template <typename F>
auto InpaintService::submit(F&& f) -> decltype(f()) {
  using R = decltype(f());
  auto task = std::make_shared<std::packaged_task<R()>>(std::forward<F>(f));
  std::future<R> fut = task->get_future();
  ++depth_;
  {
    std::lock_guard lk(q_mu_);
    queue_.emplace_back([task] { (*task)(); });
  }
  q_cv_.notify_one();
  struct Done {
    std::atomic<int>& d;
    ~Done() { --d; }
  } done{depth_};
  return fut.get();
}

void InpaintService::load(const std::filesystem::path& dir) {
  submit([&] {
    auto m = std::make_unique<infer::Inpainter>(infer::Inpainter::load(dir));
    std::lock_guard lk(state_mu_);
    model_ = std::move(m);
    ckpt_ = dir.string();
  });
}

Reply InpaintService::inpaint(const std::string& body) {
  const auto t0 = Clock::now();
  try {
    infer::Request req = parse_request(body, opts_.max_side);
    const double parse_ms = ms_since(t0);
    auto [res, queue_ms, infer_ms] = submit([&] {
      const double waited = ms_since(t0) - parse_ms;
      const auto t1 = Clock::now();
      // Only this thread replaces the model, so the pointer stays valid for the whole run.
      const infer::Inpainter* m = nullptr;
      {
        std::lock_guard lk(state_mu_);
        m = model_.get();
      }
      if (!m) throw HttpError(409, "no checkpoint loaded");
      try {
        infer::Result r = m->run(req);
        return std::make_tuple(std::move(r), waited, ms_since(t1));
      } catch (const infer::InferError& e) {
        throw HttpError(400, e.what());
      }
    });
    json out{{"result", png_b64(res.composite)},
             {"raw", png_b64(res.raw)},
             {"width", res.composite.width},
             {"height", res.composite.height},
             {"timings", {{"parse_ms", parse_ms}, {"queue_ms", queue_ms}, {"infer_ms", infer_ms},
                          {"total_ms", ms_since(t0)}}}};
    return {200, out.dump()};
  } catch (const HttpError& e) {
    return {e.status, error_body(e.what())};
  } catch (const std::exception& e) {
    return {500, error_body(e.what())};
  }
}

std::string InpaintService::health() const {
  std::lock_guard lk(state_mu_);
  json j{{"status", model_ ? "ready" : "unloaded"}, {"queue_depth", depth_.load()}};
  if (model_) {
    j["checkpoint"] = ckpt_;
    j["config_hash"] = model_->config_hash();
    j["resolution"] = model_->config().resolution;
    j["num_classes"] = model_->config().num_classes;
  }
  return j.dump();
}

void InpaintService::mount(httplib::Server& server) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(health(), "application/json");
  });
  server.Post("/v1/inpaint", [this](const httplib::Request& req, httplib::Response& res) {
    const Reply r = inpaint(req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });
}

}  // namespace mmif::serve
