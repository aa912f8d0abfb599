// Copyright (c) maskarbiter authors
//
// Expert backends. A point expert answers a single click with k candidate
// masks; a text expert answers a referring expression with one guide mask.
// Three transports speak the same JSON wire protocol:
//
//   file   recorded responses listed in an experts file (no model, no I/O
//          beyond the local filesystem)
//   exec   a child process, one JSON object per line on stdin/stdout
//   http   one POST per request to <base>/expert
//
// Request:  {"id", "image", "kind": "point"|"text", "point": [x, y],
//            "text", "k"}  (absent fields omitted)
// Response: {"id", "masks": [<rle-json>...], "confidences": [...]}
//           or {"id", "error": "<message>"}

#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "maskarbiter/arbiter.hpp"
#include "maskarbiter/rle.hpp"

namespace maskarbiter {

struct PointPrompt {
  std::int64_t x = 0;
  std::int64_t y = 0;

  bool inside(std::uint32_t width, std::uint32_t height) const noexcept {
    return x >= 0 && y >= 0 && x < static_cast<std::int64_t>(width) &&
           y < static_cast<std::int64_t>(height);
  }
  friend bool operator==(const PointPrompt&, const PointPrompt&) = default;
};

/// True when the text has a non-whitespace character.
bool valid_text_prompt(std::string_view text) noexcept;

enum class RequestKind { point, text };

struct ExpertRequest {
  std::string id;
  std::string image;
  RequestKind kind = RequestKind::point;
  std::optional<PointPrompt> point;
  std::optional<std::string> text;
  std::size_t k = kDefaultCandidateCount;

  static ExpertRequest for_point(std::string id, std::string image,
                                 PointPrompt p,
                                 std::size_t k = kDefaultCandidateCount);
  static ExpertRequest for_text(std::string id, std::string image,
                                std::string text);

  /// Throws ProtocolViolation when kind and payload disagree.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static ExpertRequest from_json(const nlohmann::json& j);
};

struct ExpertResponse {
  std::string id;
  std::vector<RleMask> masks;
  std::vector<double> confidences;
  std::optional<std::string> error;

  nlohmann::ordered_json to_json() const;
  /// Missing "confidences" (or null entries) default to 1.0.
  static ExpertResponse from_json(const nlohmann::json& j);
};

class ExpertBackend {
 public:
  virtual ~ExpertBackend() = default;

  /// Raw transport call. Implementations must be safe to call concurrently.
  virtual ExpertResponse query(const ExpertRequest& req) = 0;
  virtual std::string describe() const = 0;
};

struct BackendSpec {
  enum class Kind { file, exec, http };

  Kind kind = Kind::file;
  // file: experts file path; exec: shell command; http: base URL.
  std::string target;
  std::chrono::milliseconds timeout{120'000};
  std::size_t parallelism = 4;

  /// "file:<path>", "file" (target filled by the caller), "exec:<command>",
  /// "http://host:port[/base]".
  static BackendSpec parse(std::string_view s);
  std::string to_string() const;
};

std::shared_ptr<ExpertBackend> make_backend(const BackendSpec& spec);

/// Recorded responses keyed by (image, kind, prompt). Experts file:
///   {"schema": 1, "responses": [{"image", "kind", "point" | "text",
///     "masks": [<rle-json> | {"path": "<pbm>"}], "confidences": [...]}]}
/// Relative mask paths resolve against the experts file's directory.
class FileBackend final : public ExpertBackend {
 public:
  explicit FileBackend(const std::filesystem::path& experts_file);

  ExpertResponse query(const ExpertRequest& req) override;
  std::string describe() const override;

  std::size_t size() const noexcept;

 private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

/// Spawns `/bin/sh -c command` and exchanges JSON lines over its standard
/// streams. Writes are serialised; responses are matched by id.
class ExecBackend final : public ExpertBackend {
 public:
  ExecBackend(std::string command, std::chrono::milliseconds timeout,
              std::size_t parallelism);
  ~ExecBackend() override;
  ExecBackend(const ExecBackend&) = delete;
  ExecBackend& operator=(const ExecBackend&) = delete;

  ExpertResponse query(const ExpertRequest& req) override;
  std::string describe() const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

class HttpBackend final : public ExpertBackend {
 public:
  HttpBackend(std::string base_url, std::chrono::milliseconds timeout,
              std::size_t parallelism);
  ~HttpBackend() override;

  ExpertResponse query(const ExpertRequest& req) override;
  std::string describe() const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Validated expert calls. Anything that fails the contract (wrong count,
// shape disagreement, bad RLE, id mismatch) raises ProtocolViolation before
// it can reach the arbiter; error responses raise BackendUnavailable.
CandidateSet query_point_expert(ExpertBackend& backend,
                                const ExpertRequest& req);
Guide query_text_expert(ExpertBackend& backend, const ExpertRequest& req);

CandidateSet query_point_expert(const BackendSpec& spec,
                                const ExpertRequest& req);
Guide query_text_expert(const BackendSpec& spec, const ExpertRequest& req);

CandidateSet to_candidate_set(const ExpertRequest& req,
                              const ExpertResponse& resp);
Guide to_guide(const ExpertRequest& req, const ExpertResponse& resp);

/// Answers one wire request line with one wire response line (no trailing
/// newline). Malformed requests yield {"id": null, "error": ...}.
std::string handle_wire_request(ExpertBackend& backend, std::string_view line);

/// Line-oriented server loop used by `maskarbiter serve`.
void serve_jsonl(ExpertBackend& backend, std::istream& in, std::ostream& out);

}  // namespace maskarbiter
