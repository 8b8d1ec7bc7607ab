#include "lcms/interface/service.hpp"

#include <httplib.h>

#include <random>

#include "lcms/image.hpp"
#include "lcms/language.hpp"

namespace lcms::interface {

using nlohmann::json;

SceneStore::SceneStore(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw InvalidArgument("scene store capacity must be positive");
}

std::string SceneStore::put(sim::Scene scene) {
  std::lock_guard lock(mutex_);
  char id[32];
  std::snprintf(id, sizeof id, "s%06llu", static_cast<unsigned long long>(next_id_++));
  order_.emplace_front(id, std::move(scene));
  index_[id] = order_.begin();
  if (order_.size() > capacity_) {
    index_.erase(order_.back().first);
    order_.pop_back();
  }
  return id;
}

std::optional<sim::Scene> SceneStore::get(const std::string& id) {
  std::lock_guard lock(mutex_);
  const auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  order_.splice(order_.begin(), order_, it->second);
  return it->second->second;
}

std::size_t SceneStore::size() const {
  std::lock_guard lock(mutex_);
  return order_.size();
}

namespace {

json rows_json(const Eigen::Ref<const dmp::RowMatrix>& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(std::move(row));
  }
  return out;
}

HttpResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

HttpResponse error(int status, const std::string& message) { return json_response(status, {{"error", message}}); }

json parse_object(const std::string& body) {
  if (body.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("request body must be a JSON object");
  return j;
}

std::uint64_t entropy_seed() {
  std::random_device device;
  return (static_cast<std::uint64_t>(device()) << 32) ^ device();
}

/// Reads an optional field, turning type errors into InvalidArgument.
template <typename T>
std::optional<T> field(const json& j, const char* name) {
  const auto it = j.find(name);
  if (it == j.end() || it->is_null()) return std::nullopt;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw InvalidArgument(std::string("field '") + name + "' has the wrong type");
  }
}

}  // namespace

json command_response(const pipeline::EndToEndResult& r) {
  json out = {{"trajectory", rows_json(r.joints)},
              {"ee_path", rows_json(r.ee_path)},
              {"landing", {r.landing.x(), r.landing.y()}},
              {"release_frame", r.release_frame},
              {"success", r.success},
              {"goal", std::vector<double>(r.params.goal.data(), r.params.goal.data() + r.params.goal.size())}};
  if (r.goal_samples) {
    out["goal_samples"] = rows_json(r.goal_samples->task_points);
    out["dispersion"] = r.goal_samples->dispersion;
  }
  return out;
}

Service::Service(std::shared_ptr<const model::Model> model, dmp::DmpConfig dmp, ServiceOptions options)
    : model_(std::move(model)), dmp_(dmp), options_(options), store_(options.store_capacity) {
  if (!model_) throw InvalidArgument("service needs a model");
  dmp_.validate();
  const auto& c = model_->params.config();
  if (c.n_dims != dmp_.n_dims || c.n_basis != dmp_.n_basis)
    throw InvalidArgument("model and DMP configuration disagree on o or b");
}

HttpResponse Service::handle(const std::string& method, const std::string& path, const std::string& body,
                             const std::unordered_map<std::string, std::string>& query) {
  try {
    if (method == "OPTIONS") return {204, "text/plain", ""};
    if (path == "/health") return method == "GET" ? health() : error(405, "use GET");
    if (path == "/scenes") return method == "POST" ? create_scene(body) : error(405, "use POST");
    if (path == "/command") return method == "POST" ? command(body) : error(405, "use POST");
    const std::string prefix = "/scenes/";
    const std::string suffix = "/image";
    if (path.size() > prefix.size() + suffix.size() && path.starts_with(prefix) && path.ends_with(suffix)) {
      const std::string id = path.substr(prefix.size(), path.size() - prefix.size() - suffix.size());
      if (id.find('/') == std::string::npos)
        return method == "GET" ? scene_image(id, query) : error(405, "use GET");
    }
    return error(404, "no route for " + path);
  } catch (const InvalidArgument& e) {
    return error(400, e.what());
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

HttpResponse Service::health() const {
  return json_response(200, {{"status", "ok"},
                             {"model_version", model::kCheckpointVersion},
                             {"config", model::to_json(model_->params.config())}});
}

HttpResponse Service::create_scene(const std::string& body) {
  const json j = parse_object(body);
  const std::uint64_t seed = field<std::uint64_t>(j, "seed").value_or(entropy_seed());
  sim::SceneRequest request;
  request.n_objects = field<int>(j, "n_objects").value_or(3);
  if (request.n_objects < 3 || request.n_objects > 5) return error(400, "n_objects must be in 3..5");
  if (const auto it = j.find("required_attrs"); it != j.end() && !it->is_null()) {
    sim::AttributeSet attrs;
    if (it->is_string()) {
      attrs = sim::AttributeSet::parse(it->get<std::string>());
    } else if (it->is_array()) {
      for (const auto& a : *it) {
        if (!a.is_string()) return error(400, "required_attrs entries must be strings");
        attrs = sim::AttributeSet(attrs.bits() | sim::AttributeSet::parse(a.get<std::string>()).bits());
      }
    } else {
      return error(400, "required_attrs must be a string or an array of strings");
    }
    if (attrs.empty()) return error(400, "required_attrs must name at least one attribute");
    request.required = attrs;
  }
  sim::Scene scene;
  try {
    scene = sim::sample_scene(seed, request);
  } catch (const sim::SamplingExhausted& e) {
    return error(422, e.what());
  }
  json scene_json = sim::to_json(scene);
  const std::string id = store_.put(std::move(scene));
  return json_response(200, {{"scene_id", id}, {"scene", std::move(scene_json)}});
}

HttpResponse Service::scene_image(const std::string& id, const std::unordered_map<std::string, std::string>& query) {
  const auto scene = store_.get(id);
  if (!scene) return error(404, "unknown scene " + id);
  int size = options_.default_image_size;
  if (const auto it = query.find("size"); it != query.end()) {
    try {
      std::size_t used = 0;
      size = std::stoi(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      return error(400, "size must be an integer");
    }
    if (size < 16 || size > 1024) return error(400, "size must be in 16..1024");
  }
  const auto png = sim::encode_png(sim::render(*scene, size, size));
  return {200, "image/png", std::string(png.begin(), png.end())};
}

HttpResponse Service::command(const std::string& body) {
  const json j = parse_object(body);
  const auto id = field<std::string>(j, "scene_id");
  if (!id) return error(400, "scene_id is required");
  const auto sentence = field<std::string>(j, "sentence");
  if (!sentence || sentence->find_first_not_of(" \t\r\n") == std::string::npos)
    return error(400, "sentence must be a nonempty string");
  const int mc = field<int>(j, "mc_passes").value_or(0);
  if (mc < 0 || mc == 1 || mc > options_.max_mc_passes)
    return error(400, "mc_passes must be 0 or in 2.." + std::to_string(options_.max_mc_passes));
  const std::uint64_t seed = field<std::uint64_t>(j, "seed").value_or(entropy_seed());
  const auto scene = store_.get(*id);
  if (!scene) return error(404, "unknown scene " + *id);
  const int tokens = static_cast<int>(lang::tokenize(*sentence).size());
  const int limit = model_->params.config().sentence_length;
  if (tokens > limit)
    return error(422, "sentence has " + std::to_string(tokens) + " tokens; the model reads at most " +
                          std::to_string(limit));
  const auto result =
      pipeline::end_to_end(*model_, *sentence, *scene, dmp_, mc > 0 ? std::optional<int>(mc) : std::nullopt, seed);
  json out = command_response(result);
  out["scene_id"] = *id;
  return json_response(200, out);
}

void Service::bind(httplib::Server& server) {
  const auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    std::unordered_map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query.emplace(k, v);
    const HttpResponse r = handle(req.method, req.path, req.body, query);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.Get("/health", forward);
  server.Post("/scenes", forward);
  server.Get(R"(/scenes/[^/]+/image)", forward);
  server.Post("/command", forward);
  server.Options(R"(.*)", forward);
  const std::string origin = options_.cors_origin;
  server.set_post_routing_handler([origin](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", origin);
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  });
}

}  // namespace lcms::interface
