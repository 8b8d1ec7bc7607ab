#pragma once

#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "lcms/dmp.hpp"
#include "lcms/model.hpp"
#include "lcms/pipeline.hpp"
#include "lcms/scene.hpp"

namespace httplib {
class Server;
}

namespace lcms::interface {

/// Thread-safe LRU map from scene id to scene.
class SceneStore {
 public:
  explicit SceneStore(std::size_t capacity = 1024);

  std::string put(sim::Scene scene);
  std::optional<sim::Scene> get(const std::string& id);
  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }

 private:
  using Entry = std::pair<std::string, sim::Scene>;
  mutable std::mutex mutex_;
  std::size_t capacity_;
  std::uint64_t next_id_ = 1;
  std::list<Entry> order_;  // most recent first
  std::unordered_map<std::string, std::list<Entry>::iterator> index_;
};

/// JSON body shared by `infer` and POST /command.
nlohmann::json command_response(const pipeline::EndToEndResult& result);

struct ServiceOptions {
  std::size_t store_capacity = 1024;
  std::string cors_origin = "*";
  int max_mc_passes = 1000;
  int default_image_size = 256;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Inference service. The model is read-only; only the scene store mutates.
class Service {
 public:
  Service(std::shared_ptr<const model::Model> model, dmp::DmpConfig dmp, ServiceOptions options = {});

  /// Transport-independent request handling; `query` holds decoded URL parameters.
  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body,
                      const std::unordered_map<std::string, std::string>& query = {});

  /// Registers every route (and CORS preflight) on an httplib server.
  void bind(httplib::Server& server);

  SceneStore& store() { return store_; }
  const ServiceOptions& options() const { return options_; }

 private:
  HttpResponse create_scene(const std::string& body);
  HttpResponse scene_image(const std::string& id, const std::unordered_map<std::string, std::string>& query);
  HttpResponse command(const std::string& body);
  HttpResponse health() const;

  std::shared_ptr<const model::Model> model_;
  dmp::DmpConfig dmp_;
  ServiceOptions options_;
  SceneStore store_;
};

}  // namespace lcms::interface
