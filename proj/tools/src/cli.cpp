#include "lcms/interface/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "lcms/interface/service.hpp"
#include "lcms/pipeline.hpp"

// after Eigen: resolv.h defines a _res macro
#include <httplib.h>

namespace lcms::interface {

namespace {

using nlohmann::json;

int default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
}

dmp::DmpConfig dmp_config_of(const json& meta) {
  return meta.contains("dmp") ? dmp::dmp_config_from_json(meta.at("dmp")) : dmp::DmpConfig{};
}

struct Loaded {
  std::shared_ptr<const model::Model> model;
  dmp::DmpConfig dmp;
};

Loaded load(const std::string& path) {
  json meta;
  auto model = std::make_shared<model::Model>(model::load_checkpoint(path, &meta));
  return {std::move(model), dmp_config_of(meta)};
}

int gen_data(int n, std::uint64_t seed, const std::string& out_dir, int threads, std::ostream& out) {
  pipeline::GenerateOptions options;
  options.n = n;
  options.root_seed = seed;
  options.threads = threads;
  const auto manifest = pipeline::generate_dataset(out_dir, options);
  out << "wrote " << manifest.samples.size() << " samples to " << out_dir << " (train "
      << manifest.count(pipeline::Split::Train) << ", val " << manifest.count(pipeline::Split::Val) << ", test "
      << manifest.count(pipeline::Split::Test) << ")\n";
  return 0;
}

int train(const std::string& data, const std::string& config_path, const std::string& out_dir, int epochs,
          const std::string& embeddings, std::ostream& out) {
  pipeline::TrainOptions options;
  if (!config_path.empty()) {
    const json j = read_json_file(config_path);
    if (j.contains("model")) options.config = model::model_config_from_json(j.at("model"));
    options.epochs = j.value("epochs", options.epochs);
    options.batch_size = j.value("batch_size", options.batch_size);
    options.adam.learning_rate = j.value("learning_rate", options.adam.learning_rate);
    options.seed = j.value("seed", options.seed);
    options.time_budget_seconds = j.value("time_budget_seconds", options.time_budget_seconds);
  }
  if (epochs >= 0) options.epochs = epochs;
  options.embeddings_path = embeddings;
  options.out_dir = out_dir;
  options.on_epoch = [&out](const pipeline::EpochLog& e) {
    out << "epoch " << e.epoch << "  train " << e.train_loss << "  val " << e.val_loss << "  (" << e.seconds
        << " s)" << std::endl;
  };
  const auto result = pipeline::train(data, options);
  out << "best epoch " << result.best_epoch << "; checkpoint " << (std::filesystem::path(out_dir) / "model.ckpt").string()
      << '\n';
  return 0;
}

int eval(const std::string& ckpt, bool oracle, int n, std::uint64_t seed, int mc, const std::string& json_path,
         int threads, std::ostream& out) {
  pipeline::EvalOptions options;
  options.n_per_feature = n;
  options.seed = seed;
  options.mc_passes = mc;
  options.threads = threads;
  pipeline::EvalReport report;
  if (oracle) {
    report = pipeline::evaluate(pipeline::OraclePolicy(), options);
  } else {
    if (ckpt.empty()) throw InvalidArgument("--ckpt is required unless --oracle is given");
    const Loaded loaded = load(ckpt);
    options.dmp = loaded.dmp;
    options.config = loaded.model->params.config();
    report = pipeline::evaluate(pipeline::ModelPolicy(loaded.model), options);
  }
  out << report.table();
  if (!json_path.empty()) {
    std::ofstream file(json_path);
    file << report.to_json().dump(2) << '\n';
    if (!file) throw IoError("cannot write " + json_path);
  }
  return 0;
}

int infer(const std::string& ckpt, const std::string& scene_path, const std::string& sentence, int mc,
          std::uint64_t seed, std::ostream& out) {
  const sim::Scene scene = sim::load_scene(scene_path);
  if (mc == 1 || mc < 0) throw InvalidArgument("--mc must be 0 or at least 2");
  const Loaded loaded = load(ckpt);
  const auto result = pipeline::end_to_end(*loaded.model, sentence, scene, loaded.dmp,
                                           mc > 0 ? std::optional<int>(mc) : std::nullopt, seed);
  out << command_response(result).dump(2) << '\n';
  return 0;
}

int fit_dmp(const std::string& csv, std::ostream& out) {
  const auto trajectory = dmp::load_trajectory_csv(csv);
  dmp::DmpConfig config;
  config.n_dims = trajectory.n_dims();
  const auto params = dmp::fit(trajectory, config, dmp::build_basis(config));
  out << dmp::to_json(params).dump(2) << '\n';
  return 0;
}

int rollout(const std::string& params_path, std::ostream& out) {
  const auto params = dmp::dmp_params_from_json(read_json_file(params_path));
  dmp::DmpConfig config;
  config.n_dims = params.n_dims();
  config.n_basis = static_cast<int>(params.weights.cols());
  params.check(config);
  dmp::write_trajectory_csv(out, dmp::rollout(params, config, dmp::build_basis(config)));
  return 0;
}

int serve(std::string ckpt, const std::string& host, int port, std::ostream& out) {
  if (ckpt.empty()) {
    if (const char* env = std::getenv("LCMS_CHECKPOINT")) ckpt = env;
  }
  if (ckpt.empty()) throw InvalidArgument("no checkpoint: pass --ckpt or set LCMS_CHECKPOINT");
  const Loaded loaded = load(ckpt);
  Service service(loaded.model, loaded.dmp);
  httplib::Server server;
  service.bind(server);
  out << "serving " << ckpt << " on http://" << host << ':' << port << std::endl;
  if (!server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

int plot_weights(const std::string& ckpt, const std::string& near, const std::string& far,
                 const std::string& sentence, const std::string& prefix, std::ostream& out) {
  const Loaded loaded = load(ckpt);
  const auto series =
      pipeline::weight_series(*loaded.model, sentence, sim::load_scene(near), sim::load_scene(far));
  for (const auto& [ext, text] : {std::pair{".csv", pipeline::weight_series_csv(series)},
                                  std::pair{".svg", pipeline::weight_series_svg(series)}}) {
    std::ofstream file(prefix + ext);
    file << text;
    if (!file) throw IoError("cannot write " + prefix + ext);
  }
  out << "max |near - far| = " << (series.near - series.far).cwiseAbs().maxCoeff() << "; wrote " << prefix
      << ".csv and " << prefix << ".svg\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Language-conditioned motor skill workbench"};
  app.require_subcommand(1);

  int n = 2000;
  std::uint64_t seed = 0;
  std::string out_dir;
  int threads = default_threads();
  auto* gen = app.add_subcommand("gen-data", "Generate a demonstration dataset");
  gen->add_option("--n", n, "Number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "Root seed");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  std::string data;
  std::string config;
  std::string embeddings;
  int epochs = -1;
  auto* tr = app.add_subcommand("train", "Train a policy network on a dataset");
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--config", config, "JSON with `model`, `epochs`, `batch_size`, `learning_rate`, `seed`");
  tr->add_option("--out", out_dir, "Output directory for model.ckpt and train_log.csv")->required();
  tr->add_option("--epochs", epochs, "Override the epoch count");
  tr->add_option("--embeddings", embeddings, "Word vectors in GloVe text format");

  std::string ckpt;
  int per_feature = 100;
  int mc = 0;
  std::string json_path;
  bool oracle = false;
  auto* ev = app.add_subcommand("eval", "Evaluate success per distinguishing feature");
  ev->add_option("--ckpt", ckpt, "Checkpoint");
  ev->add_flag("--oracle", oracle, "Evaluate ground-truth labels instead of a checkpoint");
  ev->add_option("--n-per-feature", per_feature, "Scenarios per feature")->check(CLI::PositiveNumber);
  ev->add_option("--seed", seed, "Evaluation seed");
  ev->add_option("--mc", mc, "MC dropout passes for dispersion columns");
  ev->add_option("--json", json_path, "Also write the report as JSON");
  ev->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  std::string scene;
  std::string sentence;
  auto* inf = app.add_subcommand("infer", "Run one command on a scene file");
  inf->add_option("--ckpt", ckpt, "Checkpoint")->required();
  inf->add_option("--scene", scene, "Scene JSON file")->required();
  inf->add_option("--sentence", sentence, "Command")->required();
  inf->add_option("--mc", mc, "MC dropout passes");
  inf->add_option("--seed", seed, "Seed for dropout masks");

  std::string traj;
  auto* fit = app.add_subcommand("fit-dmp", "Fit primitive parameters to a trajectory CSV");
  fit->add_option("--traj-csv", traj, "Trajectory CSV")->required();

  std::string params;
  auto* roll = app.add_subcommand("rollout", "Integrate primitive parameters to a trajectory CSV");
  roll->add_option("--params-json", params, "Parameter JSON")->required();

  std::string host = "0.0.0.0";
  int port = 8080;
  auto* srv = app.add_subcommand("serve", "HTTP inference service");
  srv->add_option("--ckpt", ckpt, "Checkpoint (default: $LCMS_CHECKPOINT)");
  srv->add_option("--port", port, "Port")->check(CLI::Range(1, 65535));
  srv->add_option("--host", host, "Bind address");

  std::string near;
  std::string far;
  std::string prefix = "weights";
  auto* plot = app.add_subcommand("plot-weights", "Basis weights for a near and a far target");
  plot->add_option("--ckpt", ckpt, "Checkpoint")->required();
  plot->add_option("--near", near, "Scene with a near target")->required();
  plot->add_option("--far", far, "Scene with a far target")->required();
  plot->add_option("--sentence", sentence, "Command")->required();
  plot->add_option("--out", prefix, "Output prefix for .csv and .svg");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen) return gen_data(n, seed, out_dir, threads, out);
    if (*tr) return train(data, config, out_dir, epochs, embeddings, out);
    if (*ev) return eval(ckpt, oracle, per_feature, seed, mc, json_path, threads, out);
    if (*inf) return infer(ckpt, scene, sentence, mc, seed, out);
    if (*fit) return fit_dmp(traj, out);
    if (*roll) return rollout(params, out);
    if (*srv) return serve(ckpt, host, port, out);
    if (*plot) return plot_weights(ckpt, near, far, sentence, prefix, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace lcms::interface
