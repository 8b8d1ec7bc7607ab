#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcms/dmp.hpp"
#include "lcms/image.hpp"
#include "lcms/language.hpp"
#include "lcms/model.hpp"
#include "lcms/scene.hpp"
#include "lcms/simulator.hpp"

namespace lcms::pipeline {

// ---------------------------------------------------------------------------
// Seeds

/// Scene seeds used for training data have the top bit clear; evaluation
/// seeds have it set, so the two sets never overlap.
inline constexpr std::uint64_t kEvaluationSeedBit = 1ULL << 63;

std::uint64_t training_scene_seed(std::uint64_t root_seed, int index, int attempt);
std::uint64_t evaluation_scene_seed(std::uint64_t seed, sim::Attribute feature, int index, int attempt);

// ---------------------------------------------------------------------------
// Dataset

enum class Split { Train, Val, Test };
std::string to_string(Split split);
Split parse_split(std::string_view name);

/// 90/5/5 assignment from a hash of (root seed, sample index).
Split split_of(std::uint64_t root_seed, int index);

struct SampleRecord {
  int index = 0;
  std::uint64_t scene_seed = 0;
  int n_objects = 0;
  sim::AttributeSet required;
  std::string sentence;
  std::string scene_path;       // relative to the dataset root
  std::string image_path;
  std::string trajectory_path;
  dmp::DmpParams label;
  Split split = Split::Train;
};

struct DatasetManifest {
  static constexpr const char* kVersion = "lcms-dataset-v1";
  std::uint64_t root_seed = 0;
  dmp::DmpConfig dmp;
  model::ModelConfig model;
  std::uint64_t lexicon_hash = 0;
  std::vector<SampleRecord> samples;

  int count(Split split) const;
  std::vector<const SampleRecord*> select(Split split) const;
  /// Throws InvalidArgument when counts or records are inconsistent.
  void validate() const;
};

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);
DatasetManifest load_manifest(const std::string& dataset_dir);

struct GenerateOptions {
  int n = 2000;
  std::uint64_t root_seed = 0;
  dmp::DmpConfig dmp;
  model::ModelConfig model;  // image size
  lang::Lexicon lexicon = lang::Lexicon::standard();
  int threads = 1;
  int max_attempts = 50;  // per sample, for planning failures
};

/// One training sample without touching the file system.
struct GeneratedSample {
  SampleRecord record;
  sim::Scene scene;
  sim::Image image;
  dmp::Trajectory trajectory;
  std::string trajectory_csv;
};

/// Requirement cycles over the 7 nonempty attribute subsets; bowl count is 3..5
/// (4..5 when all three attributes are required). Plans that fail or whose
/// fitted label does not land in the target are resampled.
GeneratedSample generate_sample(int index, const GenerateOptions& options);

/// Writes manifest.json, scenes/, images/ and trajectories/ under `outdir`.
DatasetManifest generate_dataset(const std::string& outdir, const GenerateOptions& options);

/// Examples (sentence matrix, image, label) for one split.
std::vector<model::Example> load_examples(const std::string& dataset_dir, const DatasetManifest& manifest,
                                          Split split, const lang::EmbeddingTable& embeddings,
                                          int sentence_length);

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  int epoch = 0;  // 0 is the untrained model
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainOptions {
  model::ModelConfig config;
  int epochs = 60;
  int batch_size = 64;
  model::AdamOptions adam;
  std::uint64_t seed = 1;
  std::string embeddings_path;  // GloVe text file; empty uses seeded fallback vectors
  std::string out_dir;          // checkpoint and train_log.csv; empty writes nothing
  double time_budget_seconds = 0.0;  // stop after the epoch that exceeds it; 0 = unlimited
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  model::Model best;
  int best_epoch = 0;
  std::vector<EpochLog> log;
};

/// Output normalization from label statistics: per-entry mean and standard deviation.
std::pair<Eigen::VectorXd, Eigen::VectorXd> label_statistics(const std::vector<model::Example>& examples);

/// Mean loss with dropout off.
double mean_loss(const std::vector<model::Example>& examples, const model::ModelParams& params);

TrainResult train(const std::string& dataset_dir, const TrainOptions& options);

void write_train_log(const std::string& path, const std::vector<EpochLog>& log);

/// Word embeddings for the lexicon vocabulary: from a GloVe file when `path` is set.
lang::EmbeddingTable make_embeddings(const lang::Lexicon& lexicon, int dim, const std::string& path = {});

/// Untrained model with the given configuration.
model::Model untrained_model(const model::ModelConfig& config, std::uint64_t seed,
                             const lang::EmbeddingTable& embeddings);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalCase {
  sim::Scene scene;
  std::string sentence;
  sim::Image image;
  dmp::DmpParams label;  // fitted from the planned demonstration
};

/// Evaluation scenes where `feature` alone singles out the target.
EvalCase make_eval_case(std::uint64_t seed, sim::Attribute feature, int index, const dmp::DmpConfig& dmp,
                        const model::ModelConfig& config, const lang::Lexicon& lexicon = lang::Lexicon::standard());

class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  virtual dmp::DmpParams act(const EvalCase& c) const = 0;
};

/// Returns the ground-truth label as its prediction.
class OraclePolicy : public Policy {
 public:
  std::string name() const override { return "oracle"; }
  dmp::DmpParams act(const EvalCase& c) const override { return c.label; }
};

/// The network with dropout off.
class ModelPolicy : public Policy {
 public:
  explicit ModelPolicy(std::shared_ptr<const model::Model> model, std::string name = "mpn")
      : model_(std::move(model)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  dmp::DmpParams act(const EvalCase& c) const override;
  const model::Model& model() const { return *model_; }

 private:
  std::shared_ptr<const model::Model> model_;
  std::string name_;
};

struct CategoryReport {
  sim::Attribute feature = sim::Attribute::Color;
  int n_scenarios = 0;
  int successes = 0;
  double success_rate = 0.0;
  double mean_goal_error = 0.0;  // m, over successes
  double mean_dispersion_valid = 0.0;    // m, only with MC passes
  double mean_dispersion_invalid = 0.0;  // m, only with MC passes
};

struct EvalReport {
  std::string policy;
  std::uint64_t seed = 0;
  int mc_passes = 0;
  std::vector<CategoryReport> categories;  // color, shape, size

  const CategoryReport& category(sim::Attribute feature) const;
  nlohmann::json to_json() const;
  /// Fixed-width table, one row per feature.
  std::string table() const;
};

struct EvalOptions {
  int n_per_feature = 100;
  std::uint64_t seed = 0;
  int mc_passes = 0;  // > 0 adds dispersion on valid and absent-color commands (model policies only)
  int threads = 1;
  dmp::DmpConfig dmp;
  model::ModelConfig config;  // image size for rendering
};

EvalReport evaluate(const Policy& policy, const EvalOptions& options);

// ---------------------------------------------------------------------------
// Inference

struct EndToEndResult {
  dmp::DmpParams params;
  dmp::Trajectory trajectory;  // normalized
  dmp::RowMatrix joints;       // T x 7 raw joint units and gripper
  dmp::RowMatrix ee_path;      // T x 3, m
  Eigen::Vector2d landing = Eigen::Vector2d::Zero();
  int release_frame = -1;
  bool success = false;
  std::optional<model::GoalSamples> goal_samples;
  bool truncated = false;  // sentence exceeded l_s tokens
};

EndToEndResult end_to_end(const model::Model& model, std::string_view sentence, const sim::Scene& scene,
                          const dmp::DmpConfig& dmp, std::optional<int> mc_passes = std::nullopt,
                          std::uint64_t mc_seed = 0);

/// Executes an already computed DmpParams on a scene.
EndToEndResult execute_params(const dmp::DmpParams& params, const sim::Scene& scene, const dmp::DmpConfig& dmp);

// ---------------------------------------------------------------------------
// Weight plots

struct WeightSeries {
  std::vector<int> joints;
  dmp::RowMatrix near;  // joints x b
  dmp::RowMatrix far;
};

/// Joint channels plotted by default: the four that move during a transfer.
inline const std::vector<int> kPlottedJoints{0, 1, 2, 4};

WeightSeries weight_series(const model::Model& model, std::string_view sentence, const sim::Scene& near,
                           const sim::Scene& far, const std::vector<int>& joints = kPlottedJoints);

/// Columns: joint,basis,near,far.
std::string weight_series_csv(const WeightSeries& series);
/// One panel per joint with both series as polylines.
std::string weight_series_svg(const WeightSeries& series);

}  // namespace lcms::pipeline
