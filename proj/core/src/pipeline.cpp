#include "lcms/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace lcms::pipeline {

namespace fs = std::filesystem;
using sim::Attribute;

std::uint64_t training_scene_seed(std::uint64_t root_seed, int index, int attempt) {
  return split_seed(split_seed(root_seed, static_cast<std::uint64_t>(index)), static_cast<std::uint64_t>(attempt)) &
         ~kEvaluationSeedBit;
}

std::uint64_t evaluation_scene_seed(std::uint64_t seed, Attribute feature, int index, int attempt) {
  const std::uint64_t stream = split_seed(seed, static_cast<std::uint64_t>(feature));
  return split_seed(split_seed(stream, static_cast<std::uint64_t>(index)), static_cast<std::uint64_t>(attempt)) |
         kEvaluationSeedBit;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw InvalidArgument("unknown split '" + std::string(name) + "'");
}

Split split_of(std::uint64_t root_seed, int index) {
  const std::uint64_t bucket = split_seed(root_seed ^ 0x73706c6974ULL, static_cast<std::uint64_t>(index)) % 100;
  if (bucket < 90) return Split::Train;
  if (bucket < 95) return Split::Val;
  return Split::Test;
}

// ---------------------------------------------------------------------------
// Manifest

int DatasetManifest::count(Split split) const {
  return static_cast<int>(std::count_if(samples.begin(), samples.end(),
                                        [&](const SampleRecord& r) { return r.split == split; }));
}

std::vector<const SampleRecord*> DatasetManifest::select(Split split) const {
  std::vector<const SampleRecord*> out;
  for (const auto& r : samples)
    if (r.split == split) out.push_back(&r);
  return out;
}

void DatasetManifest::validate() const {
  dmp.validate();
  model.validate();
  if (model.n_dims != dmp.n_dims || model.n_basis != dmp.n_basis)
    throw InvalidArgument("manifest: model and DMP configurations disagree on o or b");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& r = samples[i];
    if (r.index != static_cast<int>(i)) throw InvalidArgument("manifest: sample indices are not consecutive");
    r.label.check(dmp);
    if (r.sentence.empty()) throw InvalidArgument("manifest: sample " + std::to_string(i) + " has no sentence");
  }
}

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& r : m.samples) {
    samples.push_back({{"index", r.index},
                       {"scene_seed", r.scene_seed},
                       {"n_objects", r.n_objects},
                       {"required", r.required.name()},
                       {"sentence", r.sentence},
                       {"scene", r.scene_path},
                       {"image", r.image_path},
                       {"trajectory", r.trajectory_path},
                       {"split", to_string(r.split)},
                       {"label", dmp::to_json(r.label)}});
  }
  return {{"version", DatasetManifest::kVersion},
          {"root_seed", m.root_seed},
          {"count", m.samples.size()},
          {"split_counts",
           {{"train", m.count(Split::Train)}, {"val", m.count(Split::Val)}, {"test", m.count(Split::Test)}}},
          {"dmp", dmp::to_json(m.dmp)},
          {"model", model::to_json(m.model)},
          {"lexicon_hash", m.lexicon_hash},
          {"samples", samples}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version") != DatasetManifest::kVersion) throw InvalidArgument("manifest: unsupported version");
    DatasetManifest m;
    m.root_seed = j.at("root_seed").get<std::uint64_t>();
    m.dmp = dmp::dmp_config_from_json(j.at("dmp"));
    m.model = model::model_config_from_json(j.at("model"));
    m.lexicon_hash = j.at("lexicon_hash").get<std::uint64_t>();
    for (const auto& s : j.at("samples")) {
      SampleRecord r;
      r.index = s.at("index");
      r.scene_seed = s.at("scene_seed").get<std::uint64_t>();
      r.n_objects = s.at("n_objects");
      r.required = sim::AttributeSet::parse(s.at("required").get<std::string>());
      r.sentence = s.at("sentence");
      r.scene_path = s.at("scene");
      r.image_path = s.at("image");
      r.trajectory_path = s.at("trajectory");
      r.split = parse_split(s.at("split").get<std::string>());
      r.label = dmp::dmp_params_from_json(s.at("label"));
      m.samples.push_back(std::move(r));
    }
    if (j.at("count").get<std::size_t>() != m.samples.size())
      throw InvalidArgument("manifest: count does not match the sample list");
    const auto& counts = j.at("split_counts");
    if (counts.at("train") != m.count(Split::Train) || counts.at("val") != m.count(Split::Val) ||
        counts.at("test") != m.count(Split::Test))
      throw InvalidArgument("manifest: split counts do not match the sample list");
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("manifest: ") + e.what());
  }
}

DatasetManifest load_manifest(const std::string& dataset_dir) {
  const fs::path path = fs::path(dataset_dir) / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Generation

namespace {

std::string numbered(const char* dir, int index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s/%06d.%s", dir, index, ext);
  return buf;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the first error.
template <typename Fn>
void parallel_for(int n, int threads, Fn fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (int t = 0; t < threads; ++t) {
    workers.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

GeneratedSample generate_sample(int index, const GenerateOptions& options) {
  const auto arm = sim::ArmModel::standard();
  const auto basis = dmp::build_basis(options.dmp);
  const sim::AttributeSet required = sim::AttributeSet::nonempty_subsets()[index % 7];
  for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
    const std::uint64_t seed = training_scene_seed(options.root_seed, index, attempt);
    Rng rng(split_seed(seed, 0));
    const int n_objects = required.size() == 3 ? 4 + static_cast<int>(rng.below(2)) : 3 + static_cast<int>(rng.below(3));
    sim::Scene scene;
    try {
      scene = sim::sample_scene(seed, {n_objects, required});
    } catch (const sim::SamplingExhausted& e) {
      throw sim::SamplingExhausted("sample " + std::to_string(index) + ": " + e.what());
    }
    sim::Demonstration demo;
    try {
      demo = sim::plan_demonstration(scene, arm, options.dmp);
    } catch (const sim::PlanningFailed&) {
      continue;
    }
    GeneratedSample out;
    std::ostringstream csv;
    dmp::write_trajectory_csv(csv, demo.joints);
    out.trajectory_csv = csv.str();
    std::istringstream parsed(out.trajectory_csv);
    out.trajectory = dmp::read_trajectory_csv(parsed);
    const dmp::DmpParams label = dmp::fit(out.trajectory, options.dmp, basis);
    const auto executed = sim::execute(dmp::rollout(label, options.dmp, basis), scene, arm);
    if (!sim::check_success(scene, executed.cube)) continue;

    auto& r = out.record;
    r.index = index;
    r.scene_seed = seed;
    r.n_objects = n_objects;
    r.required = required;
    r.sentence = lang::generate_sentence(scene, split_seed(seed, 1), options.lexicon).text;
    r.scene_path = numbered("scenes", index, "json");
    r.image_path = numbered("images", index, "png");
    r.trajectory_path = numbered("trajectories", index, "csv");
    r.label = label;
    r.split = split_of(options.root_seed, index);
    out.image = sim::render(scene, options.model.image_height, options.model.image_width);
    out.scene = std::move(scene);
    return out;
  }
  throw sim::PlanningFailed("sample " + std::to_string(index) + ": no usable demonstration after " +
                            std::to_string(options.max_attempts) + " scenes");
}

DatasetManifest generate_dataset(const std::string& outdir, const GenerateOptions& options) {
  if (options.n < 1) throw InvalidArgument("generate_dataset: n must be >= 1");
  options.dmp.validate();
  options.model.validate();
  options.lexicon.validate();
  const fs::path root(outdir);
  for (const char* sub : {"scenes", "images", "trajectories"}) fs::create_directories(root / sub);

  DatasetManifest manifest;
  manifest.root_seed = options.root_seed;
  manifest.dmp = options.dmp;
  manifest.model = options.model;
  manifest.lexicon_hash = options.lexicon.hash();
  manifest.samples.resize(static_cast<std::size_t>(options.n));
  parallel_for(options.n, options.threads, [&](int i) {
    GeneratedSample s = generate_sample(i, options);
    sim::save_scene((root / s.record.scene_path).string(), s.scene);
    sim::save_png((root / s.record.image_path).string(), s.image);
    std::ofstream csv(root / s.record.trajectory_path, std::ios::binary);
    csv << s.trajectory_csv;
    if (!csv) throw IoError("cannot write " + (root / s.record.trajectory_path).string());
    manifest.samples[static_cast<std::size_t>(i)] = std::move(s.record);
  });
  std::ofstream out(root / "manifest.json", std::ios::binary);
  out << to_json(manifest).dump(1) << '\n';
  if (!out) throw IoError("cannot write manifest in " + outdir);
  return manifest;
}

std::vector<model::Example> load_examples(const std::string& dataset_dir, const DatasetManifest& manifest,
                                          Split split, const lang::EmbeddingTable& embeddings,
                                          int sentence_length) {
  std::vector<model::Example> out;
  for (const SampleRecord* r : manifest.select(split)) {
    model::Example ex;
    ex.image = sim::load_png((fs::path(dataset_dir) / r->image_path).string());
    ex.sentence = lang::embed_sentence(lang::tokenize(r->sentence), embeddings, sentence_length);
    ex.label.theta = r->label.weights;
    ex.label.goal = r->label.goal;
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

lang::EmbeddingTable make_embeddings(const lang::Lexicon& lexicon, int dim, const std::string& path) {
  if (path.empty()) return lang::EmbeddingTable::clustered(lexicon, dim);
  return lang::load_embeddings(path, lexicon.vocabulary(), dim);
}

model::Model untrained_model(const model::ModelConfig& config, std::uint64_t seed,
                             const lang::EmbeddingTable& embeddings) {
  if (embeddings.dim() != config.word_dim) throw InvalidArgument("embedding width differs from l_w");
  model::Model m;
  m.params = model::ModelParams::initialize(config, seed);
  m.embeddings = embeddings;
  m.start = sim::home_normalized(sim::ArmModel::standard());
  return m;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> label_statistics(const std::vector<model::Example>& examples) {
  if (examples.empty()) throw InvalidArgument("label_statistics: no examples");
  const auto flat = [](const model::Example& e) {
    Eigen::VectorXd v(e.label.theta.size() + e.label.goal.size());
    v << Eigen::Map<const Eigen::VectorXd>(e.label.theta.data(), e.label.theta.size()), e.label.goal;
    return v;
  };
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(flat(examples.front()).size());
  for (const auto& e : examples) mean += flat(e);
  mean /= static_cast<double>(examples.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(mean.size());
  for (const auto& e : examples) var += (flat(e) - mean).cwiseAbs2();
  var /= static_cast<double>(examples.size());
  return {mean, var.cwiseSqrt()};
}

double mean_loss(const std::vector<model::Example>& examples, const model::ModelParams& params) {
  if (examples.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& e : examples) sum += model::loss(model::predict(e.sentence, e.image, params, {}), e.label);
  return sum / static_cast<double>(examples.size());
}

void write_train_log(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "epoch,train_loss,val_loss,seconds\n";
  char line[160];
  for (const auto& e : log) {
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.3f\n", e.epoch, e.train_loss, e.val_loss, e.seconds);
    out << line;
  }
}

TrainResult train(const std::string& dataset_dir, const TrainOptions& options) {
  using clock = std::chrono::steady_clock;
  const auto started = clock::now();
  const DatasetManifest manifest = load_manifest(dataset_dir);
  const auto& config = options.config;
  config.validate();
  if (config.image_height != manifest.model.image_height || config.image_width != manifest.model.image_width)
    throw InvalidArgument("train: dataset images are " + std::to_string(manifest.model.image_height) + "x" +
                          std::to_string(manifest.model.image_width) + ", model expects " +
                          std::to_string(config.image_height) + "x" + std::to_string(config.image_width));
  if (config.n_dims != manifest.dmp.n_dims || config.n_basis != manifest.dmp.n_basis)
    throw InvalidArgument("train: model and dataset disagree on DMP shape");
  if (options.batch_size < 1 || options.epochs < 0) throw InvalidArgument("train: bad batch size or epoch count");

  const auto embeddings = make_embeddings(lang::Lexicon::standard(), config.word_dim, options.embeddings_path);
  const auto train_set = load_examples(dataset_dir, manifest, Split::Train, embeddings, config.sentence_length);
  const auto val_set = load_examples(dataset_dir, manifest, Split::Val, embeddings, config.sentence_length);
  if (train_set.empty()) throw InvalidArgument("train: training split is empty");

  model::Model current = untrained_model(config, options.seed, embeddings);
  current.start = manifest.samples.front().label.start;
  const auto [shift, scale] = label_statistics(train_set);
  current.params.set_output_normalization(shift, scale);

  const nlohmann::json meta_base = {{"dataset_root_seed", manifest.root_seed},
                                    {"dmp", dmp::to_json(manifest.dmp)}};
  const auto seconds = [&] { return std::chrono::duration<double>(clock::now() - started).count(); };
  const auto save = [&](const TrainResult& r) {
    if (options.out_dir.empty()) return;
    fs::create_directories(options.out_dir);
    nlohmann::json meta = meta_base;
    meta["epoch"] = r.best_epoch;
    meta["val_loss"] = r.log.empty() ? 0.0 : r.log[static_cast<std::size_t>(r.best_epoch)].val_loss;
    model::save_checkpoint((fs::path(options.out_dir) / "model.ckpt").string(), r.best, meta);
    write_train_log((fs::path(options.out_dir) / "train_log.csv").string(), r.log);
  };

  TrainResult result;
  result.best = current;
  const double initial_train = mean_loss(train_set, current.params);
  const double initial_val = val_set.empty() ? initial_train : mean_loss(val_set, current.params);
  result.log.push_back({0, initial_train, initial_val, seconds()});
  double best_val = initial_val;
  if (options.on_epoch) options.on_epoch(result.log.back());

  Rng rng(split_seed(options.seed, 0x747261696eULL));
  model::AdamState adam = model::AdamState::zeros(current.params);
  std::vector<const model::Example*> order;
  for (const auto& e : train_set) order.push_back(&e);
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    shuffle(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(options.batch_size));
      const std::span<const model::Example* const> batch(order.data() + begin, end - begin);
      try {
        const auto metrics = model::train_step(batch, current.params, adam, options.adam, rng);
        epoch_loss += metrics.loss * static_cast<double>(batch.size());
      } catch (const model::NonFiniteGradient& e) {
        throw model::NonFiniteGradient(e.tensor() + " (epoch " + std::to_string(epoch) + ", step " +
                                       std::to_string(adam.step + 1) + ")");
      }
    }
    epoch_loss /= static_cast<double>(order.size());
    const double val = val_set.empty() ? epoch_loss : mean_loss(val_set, current.params);
    result.log.push_back({epoch, epoch_loss, val, seconds()});
    if (val < best_val) {
      best_val = val;
      result.best = current;
      result.best_epoch = epoch;
      save(result);
    }
    if (options.on_epoch) options.on_epoch(result.log.back());
    if (options.time_budget_seconds > 0.0 && seconds() > options.time_budget_seconds) break;
  }
  save(result);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalCase make_eval_case(std::uint64_t seed, Attribute feature, int index, const dmp::DmpConfig& dmp_config,
                        const model::ModelConfig& config, const lang::Lexicon& lexicon) {
  const auto arm = sim::ArmModel::standard();
  for (int attempt = 0; attempt < 100; ++attempt) {
    const std::uint64_t scene_seed = evaluation_scene_seed(seed, feature, index, attempt);
    Rng rng(split_seed(scene_seed, 0));
    const int n_objects = 3 + static_cast<int>(rng.below(3));
    EvalCase c;
    c.scene = sim::sample_scene(scene_seed, {n_objects, sim::AttributeSet{feature}});
    try {
      const auto demo = sim::plan_demonstration(c.scene, arm, dmp_config);
      c.label = dmp::fit(demo.joints, dmp_config, dmp::build_basis(dmp_config));
    } catch (const sim::PlanningFailed&) {
      continue;
    }
    c.sentence = lang::generate_sentence(c.scene, split_seed(scene_seed, 1), lexicon).text;
    c.image = sim::render(c.scene, config.image_height, config.image_width);
    return c;
  }
  throw sim::PlanningFailed("evaluation case " + std::to_string(index) + ": no reachable scene");
}

dmp::DmpParams ModelPolicy::act(const EvalCase& c) const {
  Rng unused(0);
  return model_->forward(c.sentence, c.image, false, unused);
}

const CategoryReport& EvalReport::category(Attribute feature) const {
  for (const auto& c : categories)
    if (c.feature == feature) return c;
  throw InvalidArgument("report has no such feature");
}

namespace {

std::string feature_name(Attribute a) { return sim::AttributeSet{a}.name(); }

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& c : categories) {
    nlohmann::json j = {{"feature", feature_name(c.feature)},
                        {"n_scenarios", c.n_scenarios},
                        {"successes", c.successes},
                        {"success_rate", c.success_rate},
                        {"mean_goal_error_m", c.mean_goal_error}};
    if (mc_passes > 0) {
      j["mean_dispersion_valid_m"] = c.mean_dispersion_valid;
      j["mean_dispersion_invalid_m"] = c.mean_dispersion_invalid;
    }
    cats.push_back(j);
  }
  return {{"policy", policy}, {"seed", seed}, {"mc_passes", mc_passes}, {"categories", cats}};
}

std::string EvalReport::table() const {
  std::ostringstream out;
  out << std::left << std::setw(9) << "feature" << std::right << std::setw(6) << "n" << std::setw(10) << "success"
      << std::setw(14) << "goal_err_cm";
  if (mc_passes > 0) out << std::setw(14) << "disp_ok_cm" << std::setw(14) << "disp_bad_cm";
  out << '\n' << std::fixed;
  for (const auto& c : categories) {
    out << std::left << std::setw(9) << feature_name(c.feature) << std::right << std::setw(6) << c.n_scenarios
        << std::setw(9) << std::setprecision(1) << 100.0 * c.success_rate << '%' << std::setw(14)
        << std::setprecision(2) << 100.0 * c.mean_goal_error;
    if (mc_passes > 0)
      out << std::setw(14) << 100.0 * c.mean_dispersion_valid << std::setw(14) << 100.0 * c.mean_dispersion_invalid;
    out << '\n';
  }
  return out.str();
}

EvalReport evaluate(const Policy& policy, const EvalOptions& options) {
  if (options.n_per_feature < 1) throw InvalidArgument("evaluate: n_per_feature must be >= 1");
  const auto arm = sim::ArmModel::standard();
  const auto* model_policy = dynamic_cast<const ModelPolicy*>(&policy);
  const int mc = model_policy != nullptr ? options.mc_passes : 0;
  EvalReport report;
  report.policy = policy.name();
  report.seed = options.seed;
  report.mc_passes = mc;
  for (Attribute feature : {Attribute::Color, Attribute::Shape, Attribute::Size}) {
    struct Outcome {
      bool success = false;
      double error = 0.0;
      double disp_valid = 0.0;
      double disp_invalid = -1.0;
    };
    std::vector<Outcome> outcomes(static_cast<std::size_t>(options.n_per_feature));
    parallel_for(options.n_per_feature, options.threads, [&](int i) {
      const EvalCase c = make_eval_case(options.seed, feature, i, options.dmp, options.config);
      const auto result = execute_params(policy.act(c), c.scene, options.dmp);
      Outcome& o = outcomes[static_cast<std::size_t>(i)];
      o.success = result.success;
      o.error = (result.landing - c.scene.target().position).norm();
      if (mc > 0) {
        const std::uint64_t mc_seed = split_seed(evaluation_scene_seed(options.seed, feature, i, 0), 2);
        Rng rng(mc_seed);
        o.disp_valid = model::mc_dropout_goals(model_policy->model(), c.sentence, c.image, mc, rng, arm).dispersion;
        if (const auto invalid = lang::generate_absent_color_sentence(c.scene, mc_seed)) {
          o.disp_invalid =
              model::mc_dropout_goals(model_policy->model(), invalid->text, c.image, mc, rng, arm).dispersion;
        }
      }
    });
    CategoryReport cat;
    cat.feature = feature;
    cat.n_scenarios = options.n_per_feature;
    double error_sum = 0.0;
    double valid_sum = 0.0;
    double invalid_sum = 0.0;
    int invalid_count = 0;
    for (const auto& o : outcomes) {
      if (o.success) {
        ++cat.successes;
        error_sum += o.error;
      }
      valid_sum += o.disp_valid;
      if (o.disp_invalid >= 0.0) {
        invalid_sum += o.disp_invalid;
        ++invalid_count;
      }
    }
    cat.success_rate = static_cast<double>(cat.successes) / cat.n_scenarios;
    cat.mean_goal_error = cat.successes > 0 ? error_sum / cat.successes : 0.0;
    cat.mean_dispersion_valid = valid_sum / cat.n_scenarios;
    cat.mean_dispersion_invalid = invalid_count > 0 ? invalid_sum / invalid_count : 0.0;
    report.categories.push_back(cat);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Inference

EndToEndResult execute_params(const dmp::DmpParams& params, const sim::Scene& scene,
                              const dmp::DmpConfig& dmp_config) {
  scene.validate();
  const auto arm = sim::ArmModel::standard();
  params.check(dmp_config);
  EndToEndResult r;
  r.params = params;
  r.trajectory = dmp::rollout(params, dmp_config, dmp::build_basis(dmp_config));
  r.joints.resize(r.trajectory.length(), r.trajectory.n_dims());
  for (int k = 0; k < r.trajectory.length(); ++k)
    r.joints.row(k) = sim::denormalize(arm, r.trajectory.frames.row(k).transpose()).transpose();
  r.ee_path = sim::ee_path(r.trajectory, arm);
  const auto executed = sim::execute(r.trajectory, scene, arm);
  r.landing = executed.cube;
  r.release_frame = executed.release_frame;
  r.success = sim::check_success(scene, r.landing);
  return r;
}

EndToEndResult end_to_end(const model::Model& model, std::string_view sentence, const sim::Scene& scene,
                          const dmp::DmpConfig& dmp_config, std::optional<int> mc_passes, std::uint64_t mc_seed) {
  scene.validate();
  const auto& config = model.params.config();
  const sim::Image image = sim::render(scene, config.image_height, config.image_width);
  Rng rng(mc_seed);
  EndToEndResult r = execute_params(model.forward(sentence, image, false, rng), scene, dmp_config);
  r.truncated = static_cast<int>(lang::tokenize(sentence).size()) > config.sentence_length;
  if (mc_passes) {
    r.goal_samples = model::mc_dropout_goals(model, sentence, image, *mc_passes, rng, sim::ArmModel::standard());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Weight plots

WeightSeries weight_series(const model::Model& model, std::string_view sentence, const sim::Scene& near,
                           const sim::Scene& far, const std::vector<int>& joints) {
  const auto& config = model.params.config();
  for (int j : joints)
    if (j < 0 || j >= config.n_dims) throw InvalidArgument("weight_series: joint index out of range");
  Rng unused(0);
  const auto weights = [&](const sim::Scene& scene) {
    scene.validate();
    const auto image = sim::render(scene, config.image_height, config.image_width);
    const auto params = model.forward(sentence, image, false, unused);
    dmp::RowMatrix rows(static_cast<Eigen::Index>(joints.size()), config.n_basis);
    for (std::size_t k = 0; k < joints.size(); ++k)
      rows.row(static_cast<Eigen::Index>(k)) = params.weights.row(joints[k]);
    return rows;
  };
  return {joints, weights(near), weights(far)};
}

std::string weight_series_csv(const WeightSeries& s) {
  std::ostringstream out;
  out << "joint,basis,near,far\n";
  char line[128];
  for (std::size_t k = 0; k < s.joints.size(); ++k) {
    for (Eigen::Index i = 0; i < s.near.cols(); ++i) {
      std::snprintf(line, sizeof line, "%d,%ld,%.9g,%.9g\n", s.joints[k], static_cast<long>(i),
                    s.near(static_cast<Eigen::Index>(k), i), s.far(static_cast<Eigen::Index>(k), i));
      out << line;
    }
  }
  return out.str();
}

std::string weight_series_svg(const WeightSeries& s) {
  const int panel_w = 320;
  const int panel_h = 160;
  const int margin = 30;
  const int panels = static_cast<int>(s.joints.size());
  const int width = panels * (panel_w + margin) + margin;
  const int height = panel_h + 2 * margin + 20;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  char buf[64];
  for (int k = 0; k < panels; ++k) {
    const int x0 = margin + k * (panel_w + margin);
    const int y0 = margin;
    const double lo = std::min(s.near.row(k).minCoeff(), s.far.row(k).minCoeff());
    const double hi = std::max(s.near.row(k).maxCoeff(), s.far.row(k).maxCoeff());
    const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
    const Eigen::Index n = s.near.cols();
    const auto polyline = [&](const dmp::RowMatrix& m, const char* color) {
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (Eigen::Index i = 0; i < n; ++i) {
        const double x = x0 + (n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5) * panel_w;
        const double y = y0 + panel_h - (m(k, i) - lo) / span * panel_h;
        std::snprintf(buf, sizeof buf, "%.1f,%.1f ", x, y);
        out << buf;
      }
      out << "\"/>\n";
    };
    out << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << panel_w << "\" height=\"" << panel_h
        << "\" fill=\"none\" stroke=\"#999\"/>\n";
    out << "<text x=\"" << x0 << "\" y=\"" << y0 - 8 << "\">joint " << s.joints[static_cast<std::size_t>(k)]
        << "</text>\n";
    std::snprintf(buf, sizeof buf, "%.3g", hi);
    out << "<text x=\"" << x0 + 4 << "\" y=\"" << y0 + 12 << "\" fill=\"#666\">" << buf << "</text>\n";
    std::snprintf(buf, sizeof buf, "%.3g", lo);
    out << "<text x=\"" << x0 + 4 << "\" y=\"" << y0 + panel_h - 4 << "\" fill=\"#666\">" << buf << "</text>\n";
    polyline(s.near, "#1f77b4");
    polyline(s.far, "#d62728");
  }
  out << "<text x=\"" << margin << "\" y=\"" << height - 8
      << "\"><tspan fill=\"#1f77b4\">near</tspan> / <tspan fill=\"#d62728\">far</tspan> target, weight per basis"
      << "</text>\n</svg>\n";
  return out.str();
}

}  // namespace lcms::pipeline
