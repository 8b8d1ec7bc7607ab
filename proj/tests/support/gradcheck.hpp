#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "lcms/model.hpp"

namespace lcms::testing {

struct TensorError {
  std::string name;
  double relative = 0.0;  // |fd - g| / (|fd| + |g|)
};

struct GradCheckResult {
  int attempts = 0;  // draws until a point with no kink inside +-h
  std::vector<TensorError> tensors;
  double worst() const {
    double w = 0.0;
    for (const auto& t : tensors) w = std::max(w, t.relative);
    return w;
  }
};

/// Random parameters, biases, output buffers, input and label on `config`.
inline model::Example random_point(const model::ModelConfig& c, Rng& rng, model::ModelParams& params,
                                   model::DropoutMasks& masks) {
  params = model::ModelParams::initialize(c, rng.next());
  // nonzero biases keep pre-activations away from exact zeros
  for (auto& t : params.tensors())
    if (t.trainable && t.value.cols() == 1 && t.name.ends_with(".b"))
      for (Eigen::Index k = 0; k < t.value.size(); ++k) t.value(k) = 0.1 * rng.normal();
  Eigen::VectorXd shift(c.theta_size() + c.n_dims), scale(shift.size());
  for (Eigen::Index k = 0; k < shift.size(); ++k) {
    shift[k] = rng.normal();
    scale[k] = 0.5 + rng.uniform();
  }
  params.set_output_normalization(shift, scale);

  model::Example ex;
  ex.sentence.rows.setZero(c.sentence_length, c.word_dim);
  const int words = std::min(4, c.sentence_length);
  for (int i = 0; i < words; ++i)
    for (int j = 0; j < c.word_dim; ++j) ex.sentence.rows(i, j) = rng.normal();
  ex.sentence.valid_token_count = words;
  ex.image = sim::Image(c.image_width, c.image_height);
  for (auto& v : ex.image.data) v = static_cast<float>(rng.uniform());
  ex.label.theta.resize(c.n_dims, c.n_basis);
  for (Eigen::Index k = 0; k < ex.label.theta.size(); ++k) ex.label.theta.data()[k] = rng.normal();
  ex.label.goal.resize(c.n_dims);
  for (int k = 0; k < c.n_dims; ++k) ex.label.goal[k] = rng.normal();
  masks = model::DropoutMasks::sample(c, rng);
  return ex;
}

/// Central differences for every trainable tensor at a point where no
/// rectifier or max-pool changes state within +-h. Points that straddle a
/// kink are redrawn.
inline GradCheckResult gradient_check(const model::ModelConfig& c, std::uint64_t seed, double h = 1e-4,
                                      int max_attempts = 50) {
  GradCheckResult result;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    result.attempts = attempt + 1;
    result.tensors.clear();
    Rng rng(split_seed(seed, static_cast<std::uint64_t>(attempt)));
    model::ModelParams p;
    model::DropoutMasks masks;
    const model::Example ex = random_point(c, rng, p, masks);
    const auto signature = model::activation_signature(ex, p, masks);
    model::Gradients g = model::zero_gradients(p);
    model::loss_and_gradient(ex, p, masks, g);
    const auto eval = [&] { return model::loss(model::predict(ex.sentence, ex.image, p, masks), ex.label); };

    bool smooth = true;
    for (std::size_t i = 0; i < p.tensors().size() && smooth; ++i) {
      if (!p.tensors()[i].trainable) continue;
      Eigen::MatrixXd fd(g[i].rows(), g[i].cols());
      for (Eigen::Index k = 0; k < fd.size() && smooth; ++k) {
        double& v = p.tensors()[i].value.data()[k];
        const double original = v;
        v = original + h;
        const double plus = eval();
        smooth = model::activation_signature(ex, p, masks) == signature;
        v = original - h;
        const double minus = eval();
        smooth = smooth && model::activation_signature(ex, p, masks) == signature;
        v = original;
        fd.data()[k] = (plus - minus) / (2.0 * h);
      }
      if (!smooth) break;
      const double denom = fd.norm() + g[i].norm();
      result.tensors.push_back({p.tensors()[i].name, denom > 0.0 ? (fd - g[i]).norm() / denom : 0.0});
    }
    if (smooth) return result;
  }
  result.tensors.clear();
  return result;
}

}  // namespace lcms::testing
