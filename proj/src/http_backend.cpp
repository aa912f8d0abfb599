// Copyright (c) maskarbiter authors

#include <httplib.h>

#include <semaphore>

#include "maskarbiter/errors.hpp"
#include "maskarbiter/experts.hpp"

namespace maskarbiter {

using nlohmann::json;

struct HttpBackend::Impl {
  std::string url;
  std::string host;  // scheme://host:port
  std::string path;  // base path + "/expert"
  std::chrono::milliseconds timeout;
  std::counting_semaphore<> in_flight;

  Impl(std::string u, std::chrono::milliseconds t, std::size_t parallelism)
      : url(std::move(u)),
        timeout(t),
        in_flight(static_cast<std::ptrdiff_t>(parallelism)) {
    std::string rest = url;
    if (!rest.starts_with("http://")) {
      rest = "http://" + rest;
    }
    const std::size_t slash = rest.find('/', 7);
    host = rest.substr(0, slash);
    std::string base = slash == std::string::npos ? "" : rest.substr(slash);
    while (!base.empty() && base.back() == '/') {
      base.pop_back();
    }
    path = base + "/expert";
  }
};

HttpBackend::HttpBackend(std::string base_url, std::chrono::milliseconds timeout,
                         std::size_t parallelism)
    : impl_(std::make_unique<Impl>(std::move(base_url), timeout,
                                   std::max<std::size_t>(parallelism, 1))) {}

HttpBackend::~HttpBackend() = default;

ExpertResponse HttpBackend::query(const ExpertRequest& req) {
  Impl& s = *impl_;
  s.in_flight.acquire();
  struct Release {
    std::counting_semaphore<>& sem;
    ~Release() { sem.release(); }
  } release{s.in_flight};

  // httplib::Client is not safe for concurrent use; one per request.
  httplib::Client client(s.host);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(s.timeout);
  const auto usecs =
      std::chrono::duration_cast<std::chrono::microseconds>(s.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  const auto start = std::chrono::steady_clock::now();
  const auto res =
      client.Post(s.path, req.to_json().dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    const bool timed_out =
        err == httplib::Error::ConnectionTimeout ||
        (err == httplib::Error::Read &&
         std::chrono::steady_clock::now() - start >= s.timeout);
    if (timed_out) {
      throw Timeout("http backend " + s.url + " timed out on " + req.id);
    }
    throw BackendUnavailable("http backend " + s.url + ": " +
                             httplib::to_string(err));
  }
  json body;
  try {
    body = json::parse(res->body);
  } catch (const json::exception& e) {
    if (res->status != 200) {
      throw BackendUnavailable("http backend " + s.url + " returned status " +
                               std::to_string(res->status));
    }
    throw ProtocolViolation("http backend " + s.url +
                            ": response is not JSON: " + e.what());
  }
  ExpertResponse resp = ExpertResponse::from_json(body);
  if (res->status != 200 && !resp.error) {
    resp.error = "status " + std::to_string(res->status);
  }
  return resp;
}

std::string HttpBackend::describe() const { return impl_->url; }

}  // namespace maskarbiter
