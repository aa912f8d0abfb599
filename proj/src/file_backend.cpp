// Copyright (c) maskarbiter authors

#include <map>
#include <string>

#include "maskarbiter/errors.hpp"
#include "maskarbiter/experts.hpp"
#include "maskarbiter/mask_io.hpp"

namespace maskarbiter {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string point_key(const std::string& image, PointPrompt p) {
  return "point\x1f" + image + "\x1f" + std::to_string(p.x) + "," +
         std::to_string(p.y);
}

std::string text_key(const std::string& image, const std::string& text) {
  return "text\x1f" + image + "\x1f" + text;
}

}  // namespace

struct FileBackend::Impl {
  std::string source;
  std::map<std::string, ExpertResponse> responses;
};

FileBackend::FileBackend(const fs::path& experts_file) {
  auto impl = std::make_shared<Impl>();
  impl->source = experts_file.string();
  const fs::path base = experts_file.parent_path();

  json doc;
  try {
    doc = json::parse(read_file(experts_file));
  } catch (const json::exception& e) {
    throw MalformedFile(experts_file.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw BackendUnavailable(e.what());
  }
  const auto list = doc.find("responses");
  if (!doc.is_object() || list == doc.end() || !list->is_array()) {
    throw MalformedFile(experts_file.string() +
                        ": expected {\"responses\": [...]}");
  }

  for (std::size_t i = 0; i < list->size(); ++i) {
    const json& entry = (*list)[i];
    const std::string where =
        experts_file.string() + ": responses[" + std::to_string(i) + "]";
    try {
      if (!entry.is_object()) {
        throw MalformedFile(where + ": expected an object");
      }
      // Reuse the wire parser for image/kind/point/text.
      json as_request = entry;
      as_request["id"] = "";
      as_request.erase("masks");
      as_request.erase("confidences");
      const ExpertRequest req = ExpertRequest::from_json(as_request);

      ExpertResponse resp;
      const auto masks = entry.find("masks");
      if (masks == entry.end() || !masks->is_array()) {
        throw MalformedFile(where + ": \"masks\" must be an array");
      }
      for (const json& m : *masks) {
        if (m.is_object() && m.contains("path")) {
          const fs::path p = m.at("path").get<std::string>();
          resp.masks.push_back(encode_rle(load_mask(base / p)));
        } else {
          resp.masks.push_back(canonicalize(rle_from_json(m)));
        }
      }
      const auto confs = entry.find("confidences");
      if (confs == entry.end() || confs->is_null()) {
        resp.confidences.assign(resp.masks.size(), 1.0);
      } else if (confs->is_array()) {
        for (const json& c : *confs) {
          resp.confidences.push_back(c.is_null() ? 1.0 : c.get<double>());
        }
      } else {
        throw MalformedFile(where + ": \"confidences\" must be an array");
      }

      const std::string key = req.kind == RequestKind::point
                                  ? point_key(req.image, *req.point)
                                  : text_key(req.image, *req.text);
      if (!impl->responses.emplace(key, std::move(resp)).second) {
        throw MalformedFile(where + ": duplicate entry");
      }
    } catch (const MalformedFile&) {
      throw;
    } catch (const std::exception& e) {
      throw MalformedFile(where + ": " + e.what());
    }
  }
  impl_ = std::move(impl);
}

ExpertResponse FileBackend::query(const ExpertRequest& req) {
  req.validate();
  const std::string key = req.kind == RequestKind::point
                              ? point_key(req.image, *req.point)
                              : text_key(req.image, *req.text);
  const auto it = impl_->responses.find(key);
  if (it == impl_->responses.end()) {
    ExpertResponse miss;
    miss.id = req.id;
    miss.error = "no recorded " +
                 std::string(req.kind == RequestKind::point ? "point" : "text") +
                 " response for image '" + req.image + "' in " + impl_->source;
    return miss;
  }
  ExpertResponse out = it->second;
  out.id = req.id;
  return out;
}

std::string FileBackend::describe() const { return "file:" + impl_->source; }

std::size_t FileBackend::size() const noexcept {
  return impl_->responses.size();
}

}  // namespace maskarbiter
