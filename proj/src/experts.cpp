// Copyright (c) maskarbiter authors

#include "maskarbiter/experts.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <ostream>

#include "maskarbiter/errors.hpp"
#include "maskarbiter/mask_io.hpp"

namespace maskarbiter {

using nlohmann::json;
using nlohmann::ordered_json;

bool valid_text_prompt(std::string_view text) noexcept {
  return std::any_of(text.begin(), text.end(), [](char c) {
    return !std::isspace(static_cast<unsigned char>(c));
  });
}

ExpertRequest ExpertRequest::for_point(std::string id, std::string image,
                                       PointPrompt p, std::size_t k) {
  ExpertRequest r;
  r.id = std::move(id);
  r.image = std::move(image);
  r.kind = RequestKind::point;
  r.point = p;
  r.k = k;
  return r;
}

ExpertRequest ExpertRequest::for_text(std::string id, std::string image,
                                      std::string text) {
  ExpertRequest r;
  r.id = std::move(id);
  r.image = std::move(image);
  r.kind = RequestKind::text;
  r.text = std::move(text);
  r.k = 1;
  return r;
}

void ExpertRequest::validate() const {
  if (kind == RequestKind::point) {
    if (!point || text) {
      throw ProtocolViolation("request " + id +
                              ": point requests carry a point and no text");
    }
    if (k == 0) {
      throw ProtocolViolation("request " + id + ": k must be positive");
    }
  } else {
    if (!text || point) {
      throw ProtocolViolation("request " + id +
                              ": text requests carry text and no point");
    }
    if (!valid_text_prompt(*text)) {
      throw ProtocolViolation("request " + id + ": text prompt is blank");
    }
  }
}

ordered_json ExpertRequest::to_json() const {
  ordered_json j;
  j["id"] = id;
  j["image"] = image;
  j["kind"] = kind == RequestKind::point ? "point" : "text";
  if (point) {
    j["point"] = {point->x, point->y};
  }
  if (text) {
    j["text"] = *text;
  }
  if (kind == RequestKind::point) {
    j["k"] = k;
  }
  return j;
}

ExpertRequest ExpertRequest::from_json(const json& j) {
  if (!j.is_object()) {
    throw ProtocolViolation("request must be a JSON object");
  }
  ExpertRequest r;
  const auto id = j.find("id");
  if (id == j.end() || !id->is_string()) {
    throw ProtocolViolation("request: \"id\" must be a string");
  }
  r.id = id->get<std::string>();
  const auto image = j.find("image");
  if (image == j.end() || !image->is_string()) {
    throw ProtocolViolation("request " + r.id + ": \"image\" must be a string");
  }
  r.image = image->get<std::string>();
  const auto kind = j.find("kind");
  if (kind == j.end() || !kind->is_string() ||
      (*kind != "point" && *kind != "text")) {
    throw ProtocolViolation("request " + r.id +
                            ": \"kind\" must be \"point\" or \"text\"");
  }
  r.kind = *kind == "point" ? RequestKind::point : RequestKind::text;
  if (const auto p = j.find("point"); p != j.end()) {
    if (!p->is_array() || p->size() != 2 || !(*p)[0].is_number_integer() ||
        !(*p)[1].is_number_integer()) {
      throw ProtocolViolation("request " + r.id +
                              ": \"point\" must be [x, y] integers");
    }
    r.point = PointPrompt{(*p)[0].get<std::int64_t>(),
                          (*p)[1].get<std::int64_t>()};
  }
  if (const auto t = j.find("text"); t != j.end()) {
    if (!t->is_string()) {
      throw ProtocolViolation("request " + r.id + ": \"text\" must be a string");
    }
    r.text = t->get<std::string>();
  }
  if (r.kind == RequestKind::point) {
    if (const auto k = j.find("k"); k != j.end()) {
      if (!k->is_number_unsigned()) {
        throw ProtocolViolation("request " + r.id +
                                ": \"k\" must be a positive integer");
      }
      r.k = k->get<std::size_t>();
    }
  } else {
    r.k = 1;
  }
  r.validate();
  return r;
}

ordered_json ExpertResponse::to_json() const {
  ordered_json j;
  j["id"] = id;
  if (error) {
    j["error"] = *error;
    return j;
  }
  ordered_json masks_json = ordered_json::array();
  for (const RleMask& m : masks) {
    masks_json.push_back(ordered_json{{"size", {m.height, m.width}},
                                      {"counts", m.counts}});
  }
  j["masks"] = std::move(masks_json);
  j["confidences"] = confidences;
  return j;
}

ExpertResponse ExpertResponse::from_json(const json& j) {
  if (!j.is_object()) {
    throw ProtocolViolation("response must be a JSON object");
  }
  ExpertResponse r;
  const auto id = j.find("id");
  if (id != j.end() && id->is_string()) {
    r.id = id->get<std::string>();
  } else if (id == j.end() || !id->is_null()) {
    throw ProtocolViolation("response: \"id\" must be a string");
  }
  if (const auto err = j.find("error"); err != j.end()) {
    r.error = err->is_string() ? err->get<std::string>() : err->dump();
    return r;
  }
  const auto masks = j.find("masks");
  if (masks == j.end() || !masks->is_array()) {
    throw ProtocolViolation("response " + r.id + ": \"masks\" must be an array");
  }
  for (const auto& m : *masks) {
    try {
      r.masks.push_back(rle_from_json(m));
    } catch (const MalformedRle& e) {
      throw ProtocolViolation("response " + r.id + ": " + e.what());
    }
  }
  const auto conf = j.find("confidences");
  if (conf == j.end() || conf->is_null()) {
    r.confidences.assign(r.masks.size(), 1.0);
    return r;
  }
  if (!conf->is_array()) {
    throw ProtocolViolation("response " + r.id +
                            ": \"confidences\" must be an array");
  }
  for (const auto& c : *conf) {
    if (c.is_null()) {
      r.confidences.push_back(1.0);
    } else if (c.is_number()) {
      r.confidences.push_back(c.get<double>());
    } else {
      throw ProtocolViolation("response " + r.id +
                              ": confidences must be numbers");
    }
  }
  return r;
}

namespace {

std::vector<Mask> decode_response_masks(const ExpertRequest& req,
                                        const ExpertResponse& resp,
                                        std::size_t expected) {
  if (resp.error) {
    throw BackendUnavailable("expert error for " + req.id + ": " + *resp.error);
  }
  if (resp.id != req.id) {
    throw ProtocolViolation("response id '" + resp.id +
                            "' does not match request '" + req.id + "'");
  }
  if (resp.masks.size() != expected) {
    throw ProtocolViolation("request " + req.id + ": expected " +
                            std::to_string(expected) + " mask(s), got " +
                            std::to_string(resp.masks.size()));
  }
  if (resp.confidences.size() != resp.masks.size()) {
    throw ProtocolViolation("request " + req.id + ": " +
                            std::to_string(resp.masks.size()) + " masks but " +
                            std::to_string(resp.confidences.size()) +
                            " confidences");
  }
  for (const double c : resp.confidences) {
    if (!(c >= 0.0 && c <= 1.0)) {
      throw ProtocolViolation("request " + req.id +
                              ": confidence outside [0, 1]");
    }
  }
  std::vector<Mask> out;
  out.reserve(expected);
  for (const RleMask& r : resp.masks) {
    try {
      out.push_back(decode_rle(r));
    } catch (const MalformedRle& e) {
      throw ProtocolViolation("request " + req.id + ": " + e.what());
    }
    if (!out.back().same_shape(out.front())) {
      throw ProtocolViolation("request " + req.id +
                              ": masks disagree on shape");
    }
  }
  return out;
}

}  // namespace

CandidateSet to_candidate_set(const ExpertRequest& req,
                              const ExpertResponse& resp) {
  if (req.kind != RequestKind::point) {
    throw ProtocolViolation("request " + req.id + " is not a point request");
  }
  std::vector<Mask> masks = decode_response_masks(req, resp, req.k);
  if (req.point && !req.point->inside(masks[0].width(), masks[0].height())) {
    throw ProtocolViolation("request " + req.id +
                            ": point lies outside the returned mask shape");
  }
  return CandidateSet(std::move(masks), resp.confidences);
}

Guide to_guide(const ExpertRequest& req, const ExpertResponse& resp) {
  if (req.kind != RequestKind::text) {
    throw ProtocolViolation("request " + req.id + " is not a text request");
  }
  std::vector<Mask> masks = decode_response_masks(req, resp, 1);
  return Guide{std::move(masks[0]), resp.confidences[0]};
}

CandidateSet query_point_expert(ExpertBackend& backend,
                                const ExpertRequest& req) {
  req.validate();
  if (req.kind != RequestKind::point) {
    throw ProtocolViolation("request " + req.id + " is not a point request");
  }
  return to_candidate_set(req, backend.query(req));
}

Guide query_text_expert(ExpertBackend& backend, const ExpertRequest& req) {
  req.validate();
  if (req.kind != RequestKind::text) {
    throw ProtocolViolation("request " + req.id + " is not a text request");
  }
  return to_guide(req, backend.query(req));
}

CandidateSet query_point_expert(const BackendSpec& spec,
                                const ExpertRequest& req) {
  return query_point_expert(*make_backend(spec), req);
}

Guide query_text_expert(const BackendSpec& spec, const ExpertRequest& req) {
  return query_text_expert(*make_backend(spec), req);
}

BackendSpec BackendSpec::parse(std::string_view s) {
  BackendSpec spec;
  if (s == "file") {
    spec.kind = Kind::file;
  } else if (s.starts_with("file:")) {
    spec.kind = Kind::file;
    spec.target = std::string(s.substr(5));
  } else if (s.starts_with("exec:")) {
    spec.kind = Kind::exec;
    spec.target = std::string(s.substr(5));
  } else if (s.starts_with("http://")) {
    spec.kind = Kind::http;
    spec.target = std::string(s);
  } else if (s.starts_with("http:")) {
    spec.kind = Kind::http;
    spec.target = std::string(s.substr(5));
  } else {
    throw InvalidConfig("unknown backend '" + std::string(s) +
                        "' (expected file[:path], exec:<command> or "
                        "http://host:port)");
  }
  if (spec.kind != Kind::file && spec.target.empty()) {
    throw InvalidConfig("backend '" + std::string(s) + "' needs a target");
  }
  return spec;
}

std::string BackendSpec::to_string() const {
  switch (kind) {
    case Kind::file:
      return "file:" + target;
    case Kind::exec:
      return "exec:" + target;
    case Kind::http:
      return target;
  }
  return target;
}

std::shared_ptr<ExpertBackend> make_backend(const BackendSpec& spec) {
  if (spec.parallelism == 0) {
    throw InvalidConfig("backend parallelism must be positive");
  }
  switch (spec.kind) {
    case BackendSpec::Kind::file:
      if (spec.target.empty()) {
        throw InvalidConfig("file backend needs an experts file");
      }
      return std::make_shared<FileBackend>(spec.target);
    case BackendSpec::Kind::exec:
      return std::make_shared<ExecBackend>(spec.target, spec.timeout,
                                           spec.parallelism);
    case BackendSpec::Kind::http:
      return std::make_shared<HttpBackend>(spec.target, spec.timeout,
                                           spec.parallelism);
  }
  throw InvalidConfig("unknown backend kind");
}

std::string handle_wire_request(ExpertBackend& backend, std::string_view line) {
  json parsed;
  try {
    parsed = json::parse(line);
  } catch (const json::exception& e) {
    return ordered_json{{"id", nullptr},
                        {"error", std::string("malformed request: ") + e.what()}}
        .dump();
  }
  ordered_json id = nullptr;
  if (parsed.is_object()) {
    if (const auto it = parsed.find("id"); it != parsed.end() && it->is_string()) {
      id = it->get<std::string>();
    }
  }
  try {
    const ExpertRequest req = ExpertRequest::from_json(parsed);
    ExpertResponse resp = backend.query(req);
    resp.id = req.id;
    return resp.to_json().dump();
  } catch (const std::exception& e) {
    return ordered_json{{"id", id}, {"error", e.what()}}.dump();
  }
}

void serve_jsonl(ExpertBackend& backend, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (!valid_text_prompt(line)) {
      continue;
    }
    out << handle_wire_request(backend, line) << '\n';
    out.flush();
  }
}

}  // namespace maskarbiter
