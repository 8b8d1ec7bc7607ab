#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcms/arm.hpp"
#include "lcms/common.hpp"
#include "lcms/dmp.hpp"
#include "lcms/image.hpp"
#include "lcms/language.hpp"

namespace lcms::model {

struct ModelConfig {
  int sentence_length = 15;  // l_s
  int word_dim = 50;         // l_w
  std::vector<int> ngram_sizes{1, 2, 3};
  int ngram_filters = 64;
  int sentence_dim = 64;  // d_s
  int image_height = 64;
  int image_width = 64;
  std::vector<int> block_channels{16, 32, 64};
  int embedding_dim = 256;   // d_e
  int translation_dim = 128;  // d_g
  int head_hidden = 128;      // hidden width of both output MLPs
  double dropout = 0.1;
  int n_dims = 7;    // o
  int n_basis = 20;  // b
  int mc_passes = 50;

  /// Small widths used by gradient checks: l_s = 6, 16 x 16 images, b = 4.
  static ModelConfig tiny();

  void validate() const;
  /// Spatial size after the last block.
  int final_height() const;
  int final_width() const;
  int theta_size() const { return n_dims * n_basis; }

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Tensor {
  std::string name;
  Eigen::MatrixXd value;  // vectors are stored as n x 1
  bool trainable = true;
};

/// Named parameter tensors. Besides the trainable weights it holds two fixed
/// buffers, `output.shift` and `output.scale`, that map the raw head outputs to
/// (vec(Theta), g) as shift + scale * raw. They are set from label statistics
/// before training so every head output starts at unit scale.
class ModelParams {
 public:
  ModelParams() = default;

  /// He-normal weights, zero biases, identity output buffers.
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  /// Index of a named tensor; throws InvalidArgument if absent.
  int index(std::string_view name) const;
  Tensor& at(std::string_view name) { return tensors_[index(name)]; }
  const Tensor& at(std::string_view name) const { return tensors_[index(name)]; }
  const Eigen::MatrixXd& operator[](int i) const { return tensors_[i].value; }

  std::size_t parameter_count() const;
  bool all_finite() const;

  /// `shift`/`scale` have length o*b + o (row-major Theta followed by g).
  /// Scale entries below 1e-6 are replaced by 1.
  void set_output_normalization(const Eigen::VectorXd& shift, const Eigen::VectorXd& scale);

 private:
  ModelConfig config_;
  std::vector<Tensor> tensors_;
  friend ModelParams assemble(ModelConfig, std::vector<Tensor>);
};

/// Builds a parameter set from explicit tensors, checking names and shapes.
ModelParams assemble(ModelConfig config, std::vector<Tensor> tensors);

/// One gradient matrix per tensor (zero-sized for buffers).
using Gradients = std::vector<Eigen::MatrixXd>;
Gradients zero_gradients(const ModelParams& params);

/// Inverted-dropout keep masks (entries 0 or 1/(1-p)); empty vectors mean no dropout.
struct DropoutMasks {
  Eigen::VectorXd embedding;    // d_e
  Eigen::VectorXd translation;  // d_g

  static DropoutMasks sample(const ModelConfig& config, Rng& rng);
};

struct Translation {
  dmp::RowMatrix theta;  // o x b
  Eigen::VectorXd goal;  // o
};

Eigen::VectorXd encode_sentence(const lang::SentenceMatrix& sentence, const ModelParams& params);

/// Image-language fusion encoder. Dropout on the task embedding when `dropout_on`.
Eigen::VectorXd encode_scene(const sim::Image& image, const Eigen::VectorXd& sentence_embedding,
                             const ModelParams& params, bool dropout_on, Rng& rng);

/// Shared layer followed by the two output heads.
Translation translate(const Eigen::VectorXd& embedding, const ModelParams& params, bool dropout_on,
                      Rng& rng);

/// Full pass with explicit masks (used by training and gradient checks).
Translation predict(const lang::SentenceMatrix& sentence, const sim::Image& image,
                    const ModelParams& params, const DropoutMasks& masks);

inline constexpr double kGoalWeight = 10.0;

/// (1/(o b)) |Theta - Theta*|^2 + lambda_g (1/o) |g - g*|^2.
double loss(const Translation& prediction, const Translation& label, double goal_weight = kGoalWeight);

struct Example {
  lang::SentenceMatrix sentence;
  sim::Image image;
  Translation label;
};

/// Loss of one example under fixed masks; adds its gradient (times `scale`) into `grads`.
double loss_and_gradient(const Example& example, const ModelParams& params,
                         const DropoutMasks& masks, Gradients& grads, double scale = 1.0,
                         double goal_weight = kGoalWeight);

/// Hash of every rectifier on/off state and every max-pool winner. Two
/// parameter sets with equal signatures lie on the same linear piece of the
/// network, which is what finite-difference checks need.
std::uint64_t activation_signature(const Example& example, const ModelParams& params,
                                   const DropoutMasks& masks);

class NonFiniteGradient : public Error {
 public:
  explicit NonFiniteGradient(std::string tensor)
      : Error("non-finite gradient in tensor " + tensor), tensor_(std::move(tensor)) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double goal_weight = kGoalWeight;
  bool dropout = true;
};

struct AdamState {
  Gradients m;
  Gradients v;
  long step = 0;

  static AdamState zeros(const ModelParams& params);
};

struct StepMetrics {
  double loss = 0.0;  // batch mean before the update
  double gradient_norm = 0.0;
};

/// Mean loss gradient over the batch followed by one Adam update. Masks are
/// drawn from `rng` per example. Throws NonFiniteGradient before touching params.
StepMetrics train_step(std::span<const Example* const> batch, ModelParams& params, AdamState& state,
                       const AdamOptions& options, Rng& rng);

/// Trained network together with its word embeddings.
struct Model {
  ModelParams params;
  lang::EmbeddingTable embeddings;
  sim::Vector7d start;  // canonical home configuration, normalized

  lang::SentenceMatrix embed(std::string_view sentence) const;
  dmp::DmpParams to_dmp(const Translation& t) const;
  dmp::DmpParams forward(std::string_view sentence, const sim::Image& image, bool dropout_on,
                         Rng& rng) const;
};

struct GoalSamples {
  Eigen::MatrixXd joint_goals;  // N x o, raw joint units and gripper
  Eigen::MatrixXd task_points;  // N x 2, m
  double dispersion = 0.0;      // mean pairwise distance of task_points
};

/// Mean pairwise Euclidean distance between rows.
double mean_pairwise_distance(const Eigen::MatrixXd& points);

/// N stochastic passes with independent masks. The scene encoder runs once;
/// only the dropout layers and the layers after them are repeated.
GoalSamples mc_dropout_goals(const Model& model, std::string_view sentence, const sim::Image& image,
                             int n, Rng& rng, const sim::ArmModel& arm);

// Checkpoint: u64 little-endian header length, JSON header
// {"version": "mpn-v1", "config", "meta", "vocabulary", "tensors": [{name, shape, offset, trainable}]},
// then float32 little-endian payloads (row-major) at the listed offsets from the payload start.
inline constexpr const char* kCheckpointVersion = "mpn-v1";

void save_checkpoint(const std::string& path, const Model& model, const nlohmann::json& meta = {});
Model load_checkpoint(const std::string& path, nlohmann::json* meta = nullptr);

/// Rounds every tensor and embedding through float32, as a checkpoint round trip does.
void quantize_to_float(Model& model);

}  // namespace lcms::model
