// Copyright (c) maskarbiter authors

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <iostream>
#include <map>
#include <mutex>
#include <semaphore>
#include <set>
#include <thread>

#include "maskarbiter/errors.hpp"
#include "maskarbiter/experts.hpp"

extern char** environ;

namespace maskarbiter {

using nlohmann::json;

// The child's stdin and stdout are both bound to one end of a socketpair.
// Sockets let us write with MSG_NOSIGNAL, so a dead child surfaces as EPIPE
// instead of SIGPIPE.
struct ExecBackend::Impl {
  std::string command;
  std::chrono::milliseconds timeout;
  std::counting_semaphore<> in_flight;

  int fd = -1;
  pid_t pid = -1;

  std::mutex write_mu;

  std::mutex mu;
  std::condition_variable cv;
  std::map<std::string, json> ready;
  std::set<std::string> abandoned;
  bool dead = false;

  std::thread reader;

  Impl(std::string cmd, std::chrono::milliseconds t, std::size_t parallelism)
      : command(std::move(cmd)),
        timeout(t),
        in_flight(static_cast<std::ptrdiff_t>(parallelism)) {}

  void spawn() {
    int sv[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0) {
      throw BackendUnavailable(std::string("socketpair: ") + std::strerror(errno));
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, sv[1], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, sv[1], STDOUT_FILENO);
    const char* argv[] = {"sh", "-c", command.c_str(), nullptr};
    const int rc = ::posix_spawn(&pid, "/bin/sh", &actions, nullptr,
                                 const_cast<char* const*>(argv), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(sv[1]);
    if (rc != 0) {
      ::close(sv[0]);
      throw BackendUnavailable("cannot spawn '" + command +
                               "': " + std::strerror(rc));
    }
    fd = sv[0];
    reader = std::thread([this] { read_loop(); });
  }

  void read_loop() {
    std::string buffer;
    char chunk[65536];
    while (true) {
      const ssize_t n = ::read(fd, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) {
        continue;
      }
      if (n <= 0) {
        break;
      }
      buffer.append(chunk, static_cast<std::size_t>(n));
      std::size_t start = 0;
      for (std::size_t nl; (nl = buffer.find('\n', start)) != std::string::npos;
           start = nl + 1) {
        deliver(std::string_view(buffer).substr(start, nl - start));
      }
      buffer.erase(0, start);
    }
    std::lock_guard lock(mu);
    dead = true;
    cv.notify_all();
  }

  void deliver(std::string_view line) {
    if (!valid_text_prompt(line)) {
      return;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      std::cerr << "exec backend: discarding unparseable line from '" << command
                << "'\n";
      return;
    }
    const auto id = j.is_object() ? j.find("id") : j.end();
    if (!j.is_object() || id == j.end() || !id->is_string()) {
      std::cerr << "exec backend: discarding response without id: "
                << j.dump().substr(0, 200) << "\n";
      return;
    }
    const std::string key = id->get<std::string>();
    std::lock_guard lock(mu);
    if (abandoned.erase(key) == 0) {
      ready[key] = std::move(j);
      cv.notify_all();
    }
  }

  void send_line(const std::string& line) {
    std::lock_guard lock(write_mu);
    std::size_t off = 0;
    while (off < line.size()) {
      const ssize_t n =
          ::send(fd, line.data() + off, line.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) {
          continue;
        }
        throw BackendUnavailable("exec backend '" + command +
                                 "' is not accepting requests: " +
                                 std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  void shutdown_child() {
    if (fd >= 0) {
      ::shutdown(fd, SHUT_WR);
    }
    if (pid > 0) {
      // Give the child a moment to exit on EOF before terminating it.
      int status = 0;
      bool exited = false;
      for (int i = 0; i < 50 && !exited; ++i) {
        exited = ::waitpid(pid, &status, WNOHANG) == pid;
        if (!exited) {
          std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
      }
      if (!exited) {
        ::kill(pid, SIGTERM);
        ::waitpid(pid, &status, 0);
      }
    }
    if (fd >= 0) {
      ::shutdown(fd, SHUT_RDWR);
    }
    if (reader.joinable()) {
      reader.join();
    }
    if (fd >= 0) {
      ::close(fd);
    }
  }
};

ExecBackend::ExecBackend(std::string command, std::chrono::milliseconds timeout,
                         std::size_t parallelism)
    : impl_(std::make_unique<Impl>(std::move(command), timeout,
                                   std::max<std::size_t>(parallelism, 1))) {
  impl_->spawn();
}

ExecBackend::~ExecBackend() { impl_->shutdown_child(); }

ExpertResponse ExecBackend::query(const ExpertRequest& req) {
  Impl& s = *impl_;
  s.in_flight.acquire();
  struct Release {
    std::counting_semaphore<>& sem;
    ~Release() { sem.release(); }
  } release{s.in_flight};

  {
    std::lock_guard lock(s.mu);
    if (s.dead) {
      throw BackendUnavailable("exec backend '" + s.command + "' has exited");
    }
  }
  s.send_line(req.to_json().dump() + "\n");

  std::unique_lock lock(s.mu);
  const bool done = s.cv.wait_for(lock, s.timeout, [&] {
    return s.ready.contains(req.id) || s.dead;
  });
  const auto it = s.ready.find(req.id);
  if (it != s.ready.end()) {
    json j = std::move(it->second);
    s.ready.erase(it);
    lock.unlock();
    return ExpertResponse::from_json(j);
  }
  if (!done) {
    s.abandoned.insert(req.id);
    throw Timeout("exec backend '" + s.command + "' did not answer " + req.id +
                  " within " + std::to_string(s.timeout.count()) + " ms");
  }
  throw BackendUnavailable("exec backend '" + s.command +
                           "' exited before answering " + req.id);
}

std::string ExecBackend::describe() const { return "exec:" + impl_->command; }

}  // namespace maskarbiter
