#include "lcms/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "lcms/nn.hpp"
#include "lcms/simulator.hpp"

namespace lcms::model {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Configuration

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.sentence_length = 6;
  c.word_dim = 8;
  c.ngram_filters = 4;
  c.sentence_dim = 6;
  c.image_height = 16;
  c.image_width = 16;
  c.block_channels = {3, 4, 5};
  c.embedding_dim = 12;
  c.translation_dim = 8;
  c.head_hidden = 6;
  c.n_basis = 4;
  c.mc_passes = 8;
  return c;
}

void ModelConfig::validate() const {
  const auto positive = [](int v, const char* name) {
    if (v < 1) throw InvalidArgument(std::string("ModelConfig: ") + name + " must be >= 1");
  };
  positive(sentence_length, "sentence_length");
  positive(word_dim, "word_dim");
  positive(ngram_filters, "ngram_filters");
  positive(sentence_dim, "sentence_dim");
  positive(image_height, "image_height");
  positive(image_width, "image_width");
  positive(embedding_dim, "embedding_dim");
  positive(translation_dim, "translation_dim");
  positive(head_hidden, "head_hidden");
  positive(n_dims, "n_dims");
  positive(n_basis, "n_basis");
  positive(mc_passes, "mc_passes");
  if (ngram_sizes.empty()) throw InvalidArgument("ModelConfig: no n-gram sizes");
  for (int n : ngram_sizes) {
    if (n < 1 || n > sentence_length)
      throw InvalidArgument("ModelConfig: n-gram size " + std::to_string(n) + " outside [1, l_s]");
  }
  if (block_channels.empty()) throw InvalidArgument("ModelConfig: no conv blocks");
  for (int c : block_channels) positive(c, "block channel count");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("ModelConfig: dropout must be in [0, 1)");
}

namespace {

int halve(int size, int blocks) {
  for (int i = 0; i < blocks; ++i) size = (size - 1) / 2 + 1;
  return size;
}

}  // namespace

int ModelConfig::final_height() const {
  return halve(image_height, static_cast<int>(block_channels.size()));
}
int ModelConfig::final_width() const {
  return halve(image_width, static_cast<int>(block_channels.size()));
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"sentence_length", c.sentence_length}, {"word_dim", c.word_dim},
          {"ngram_sizes", c.ngram_sizes},         {"ngram_filters", c.ngram_filters},
          {"sentence_dim", c.sentence_dim},       {"image_height", c.image_height},
          {"image_width", c.image_width},         {"block_channels", c.block_channels},
          {"embedding_dim", c.embedding_dim},     {"translation_dim", c.translation_dim},
          {"head_hidden", c.head_hidden},         {"dropout", c.dropout},
          {"n_dims", c.n_dims},                   {"n_basis", c.n_basis},
          {"mc_passes", c.mc_passes}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.sentence_length = j.value("sentence_length", c.sentence_length);
    c.word_dim = j.value("word_dim", c.word_dim);
    c.ngram_sizes = j.value("ngram_sizes", c.ngram_sizes);
    c.ngram_filters = j.value("ngram_filters", c.ngram_filters);
    c.sentence_dim = j.value("sentence_dim", c.sentence_dim);
    c.image_height = j.value("image_height", c.image_height);
    c.image_width = j.value("image_width", c.image_width);
    c.block_channels = j.value("block_channels", c.block_channels);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.translation_dim = j.value("translation_dim", c.translation_dim);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.dropout = j.value("dropout", c.dropout);
    c.n_dims = j.value("n_dims", c.n_dims);
    c.n_basis = j.value("n_basis", c.n_basis);
    c.mc_passes = j.value("mc_passes", c.mc_passes);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameter layout

namespace {

struct TensorSpec {
  std::string name;
  int rows;
  int cols;
  bool trainable = true;
  double init_std = 0.0;  // 0 for biases and buffers
};

struct BlockIndex {
  int w1, b1, w2, b2, wr, br;
};

struct Layout {
  std::vector<int> conv_w, conv_b;
  int merge_w, merge_b, plane_w, plane_b;
  std::vector<BlockIndex> blocks;
  int embed_w, embed_b, shared_w, shared_b;
  int theta_w1, theta_b1, theta_w2, theta_b2;
  int goal_w1, goal_b1, goal_w2, goal_b2;
  int shift, scale;
};

std::vector<TensorSpec> tensor_specs(const ModelConfig& c, Layout* layout = nullptr) {
  std::vector<TensorSpec> specs;
  Layout l;
  const auto he = [](int fan_in) { return std::sqrt(2.0 / fan_in); };
  const auto linear = [](int fan_in) { return std::sqrt(1.0 / fan_in); };
  const auto add = [&](std::string name, int rows, int cols, double init_std) {
    specs.push_back({std::move(name), rows, cols, true, init_std});
    return static_cast<int>(specs.size()) - 1;
  };
  for (int n : c.ngram_sizes) {
    const std::string p = "text.conv" + std::to_string(n);
    l.conv_w.push_back(add(p + ".w", c.ngram_filters, n * c.word_dim, linear(n * c.word_dim)));
    l.conv_b.push_back(add(p + ".b", c.ngram_filters, 1, 0.0));
  }
  const int pooled = c.ngram_filters * static_cast<int>(c.ngram_sizes.size());
  l.merge_w = add("text.merge.w", c.sentence_dim, pooled, he(pooled));
  l.merge_b = add("text.merge.b", c.sentence_dim, 1, 0.0);
  const int plane = c.image_height * c.image_width;
  l.plane_w = add("fusion.plane.w", plane, c.sentence_dim, linear(c.sentence_dim));
  l.plane_b = add("fusion.plane.b", plane, 1, 0.0);
  int in = 4;
  for (std::size_t k = 0; k < c.block_channels.size(); ++k) {
    const int ch = c.block_channels[k];
    const std::string p = "block" + std::to_string(k + 1);
    BlockIndex b;
    b.w1 = add(p + ".conv1.w", ch, 9 * in, he(9 * in));
    b.b1 = add(p + ".conv1.b", ch, 1, 0.0);
    b.w2 = add(p + ".conv2.w", ch, 9 * ch, he(9 * ch));
    b.b2 = add(p + ".conv2.b", ch, 1, 0.0);
    b.wr = add(p + ".residual.w", ch, 9 * ch, linear(9 * ch));
    b.br = add(p + ".residual.b", ch, 1, 0.0);
    l.blocks.push_back(b);
    in = ch;
  }
  const int flat = in * c.final_height() * c.final_width();
  l.embed_w = add("embed.w", c.embedding_dim, flat, he(flat));
  l.embed_b = add("embed.b", c.embedding_dim, 1, 0.0);
  l.shared_w = add("shared.w", c.translation_dim, c.embedding_dim, he(c.embedding_dim));
  l.shared_b = add("shared.b", c.translation_dim, 1, 0.0);
  l.theta_w1 = add("theta.hidden.w", c.head_hidden, c.translation_dim, he(c.translation_dim));
  l.theta_b1 = add("theta.hidden.b", c.head_hidden, 1, 0.0);
  l.theta_w2 = add("theta.out.w", c.theta_size(), c.head_hidden, linear(c.head_hidden));
  l.theta_b2 = add("theta.out.b", c.theta_size(), 1, 0.0);
  l.goal_w1 = add("goal.hidden.w", c.head_hidden, c.translation_dim, he(c.translation_dim));
  l.goal_b1 = add("goal.hidden.b", c.head_hidden, 1, 0.0);
  l.goal_w2 = add("goal.out.w", c.n_dims, c.head_hidden, linear(c.head_hidden));
  l.goal_b2 = add("goal.out.b", c.n_dims, 1, 0.0);
  const int outputs = c.theta_size() + c.n_dims;
  specs.push_back({"output.shift", outputs, 1, false, 0.0});
  l.shift = static_cast<int>(specs.size()) - 1;
  specs.push_back({"output.scale", outputs, 1, false, 0.0});
  l.scale = static_cast<int>(specs.size()) - 1;
  if (layout != nullptr) *layout = l;
  return specs;
}

Layout layout_of(const ModelConfig& c) {
  Layout l;
  tensor_specs(c, &l);
  return l;
}

}  // namespace

ModelParams ModelParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  std::vector<Tensor> tensors;
  for (const auto& spec : tensor_specs(config)) {
    Tensor t{spec.name, MatrixXd::Zero(spec.rows, spec.cols), spec.trainable};
    if (spec.init_std > 0.0) {
      for (Eigen::Index j = 0; j < t.value.cols(); ++j)
        for (Eigen::Index i = 0; i < t.value.rows(); ++i) t.value(i, j) = spec.init_std * rng.normal();
    }
    if (spec.name == "output.scale") t.value.setOnes();
    tensors.push_back(std::move(t));
  }
  return assemble(config, std::move(tensors));
}

ModelParams assemble(ModelConfig config, std::vector<Tensor> tensors) {
  config.validate();
  const auto specs = tensor_specs(config);
  if (tensors.size() != specs.size())
    throw InvalidArgument("model parameters: expected " + std::to_string(specs.size()) +
                          " tensors, got " + std::to_string(tensors.size()));
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    auto& t = tensors[i];
    if (t.name != s.name) throw InvalidArgument("model parameters: expected tensor " + s.name + ", got " + t.name);
    if (t.value.rows() != s.rows || t.value.cols() != s.cols)
      throw InvalidArgument("model parameters: tensor " + s.name + " has wrong shape");
    t.trainable = s.trainable;
  }
  ModelParams p;
  p.config_ = std::move(config);
  p.tensors_ = std::move(tensors);
  return p;
}

int ModelParams::index(std::string_view name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == name) return static_cast<int>(i);
  throw InvalidArgument("no tensor named " + std::string(name));
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_)
    if (t.trainable) n += static_cast<std::size_t>(t.value.size());
  return n;
}

bool ModelParams::all_finite() const {
  for (const auto& t : tensors_)
    if (!t.value.allFinite()) return false;
  return true;
}

void ModelParams::set_output_normalization(const VectorXd& shift, const VectorXd& scale) {
  const Eigen::Index n = config_.theta_size() + config_.n_dims;
  if (shift.size() != n || scale.size() != n)
    throw InvalidArgument("output normalization: expected length " + std::to_string(n));
  if (!shift.allFinite() || !scale.allFinite()) throw InvalidArgument("output normalization: non-finite value");
  at("output.shift").value = shift;
  at("output.scale").value = (scale.array() < 1e-6).select(1.0, scale);
}

Gradients zero_gradients(const ModelParams& params) {
  Gradients g;
  g.reserve(params.tensors().size());
  for (const auto& t : params.tensors())
    g.push_back(t.trainable ? MatrixXd::Zero(t.value.rows(), t.value.cols()) : MatrixXd());
  return g;
}

// ---------------------------------------------------------------------------
// Forward and backward passes

namespace {

struct TextCache {
  std::vector<MatrixXd> windows;
  std::vector<std::vector<int>> argmax;
  VectorXd pooled, pre, out;
};

struct BlockCache {
  nn::ConvShape s1, s2, sr;
  MatrixXd cols1, pre1, cols2, pre2, colsr, pre_sum;
};

struct SceneCache {
  std::vector<BlockCache> blocks;
  VectorXd flat, pre, act;
};

struct HeadCache {
  VectorXd embedding;  // after dropout
  VectorXd shared_pre, shared_out;
  VectorXd theta_pre, theta_hidden, goal_pre, goal_hidden;
};

void check_sentence(const lang::SentenceMatrix& s, const ModelConfig& c) {
  if (s.rows.rows() != c.sentence_length || s.rows.cols() != c.word_dim)
    throw InvalidArgument("sentence matrix must be " + std::to_string(c.sentence_length) + " x " +
                          std::to_string(c.word_dim));
}

void text_forward(const lang::SentenceMatrix& s, const ModelParams& p, const Layout& l, TextCache& cache) {
  const auto& c = p.config();
  check_sentence(s, c);
  const int filters = c.ngram_filters;
  const int groups = static_cast<int>(c.ngram_sizes.size());
  cache.windows.resize(groups);
  cache.argmax.assign(groups, std::vector<int>(filters, 0));
  cache.pooled.resize(filters * groups);
  for (int k = 0; k < groups; ++k) {
    const int n = c.ngram_sizes[k];
    const int positions = c.sentence_length - n + 1;
    MatrixXd& win = cache.windows[k];
    win.resize(n * c.word_dim, positions);
    for (int pos = 0; pos < positions; ++pos)
      win.col(pos) = Eigen::Map<const VectorXd>(s.rows.data() + pos * c.word_dim, n * c.word_dim);
    const MatrixXd response = p[l.conv_w[k]] * win;
    for (int f = 0; f < filters; ++f) {
      Eigen::Index best = 0;
      double value = response(f, 0);
      for (Eigen::Index pos = 1; pos < positions; ++pos) {
        if (response(f, pos) > value) {
          value = response(f, pos);
          best = pos;
        }
      }
      cache.argmax[k][f] = static_cast<int>(best);
      cache.pooled(k * filters + f) = value + p[l.conv_b[k]](f, 0);
    }
  }
  cache.pre = p[l.merge_w] * cache.pooled + p[l.merge_b];
  cache.out = nn::relu(cache.pre);
}

void text_backward(const VectorXd& d_out, const ModelParams& p, const Layout& l, const TextCache& cache,
                   Gradients& g) {
  const auto& c = p.config();
  VectorXd d_pre = d_out;
  nn::relu_backward(d_pre, cache.pre);
  g[l.merge_w].noalias() += d_pre * cache.pooled.transpose();
  g[l.merge_b] += d_pre;
  const VectorXd d_pooled = p[l.merge_w].transpose() * d_pre;
  const int filters = c.ngram_filters;
  for (std::size_t k = 0; k < c.ngram_sizes.size(); ++k) {
    for (int f = 0; f < filters; ++f) {
      const double d = d_pooled(static_cast<Eigen::Index>(k) * filters + f);
      g[l.conv_w[k]].row(f) += d * cache.windows[k].col(cache.argmax[k][f]).transpose();
      g[l.conv_b[k]](f, 0) += d;
    }
  }
}

MatrixXd fusion_input(const sim::Image& image, const VectorXd& sentence_embedding, const ModelParams& p,
                      const Layout& l) {
  const auto& c = p.config();
  if (image.height != c.image_height || image.width != c.image_width)
    throw InvalidArgument("image must be " + std::to_string(c.image_height) + " x " +
                          std::to_string(c.image_width));
  if (sentence_embedding.size() != c.sentence_dim) throw InvalidArgument("sentence embedding has wrong length");
  const int pixels = c.image_height * c.image_width;
  MatrixXd x(4, pixels);
  x.topRows(3) = Eigen::Map<const Eigen::MatrixXf>(image.data.data(), 3, pixels).cast<double>();
  x.row(3) = (p[l.plane_w] * sentence_embedding + p[l.plane_b]).transpose();
  return x;
}

/// Runs the conv blocks and the embedding layer up to (but excluding) dropout.
void scene_forward(const MatrixXd& input, const ModelParams& p, const Layout& l, SceneCache& cache) {
  const auto& c = p.config();
  cache.blocks.resize(c.block_channels.size());
  MatrixXd x = input;
  int h = c.image_height;
  int w = c.image_width;
  int in = 4;
  for (std::size_t k = 0; k < c.block_channels.size(); ++k) {
    const int ch = c.block_channels[k];
    const BlockIndex& b = l.blocks[k];
    BlockCache& bc = cache.blocks[k];
    bc.s1 = {in, ch, h, w, 3, 1, 1};
    nn::conv_forward(x, bc.s1, p[b.w1], p[b.b1], bc.cols1, bc.pre1);
    const MatrixXd a1 = nn::relu(bc.pre1);
    bc.s2 = {ch, ch, h, w, 3, 2, 1};
    nn::conv_forward(a1, bc.s2, p[b.w2], p[b.b2], bc.cols2, bc.pre2);
    const MatrixXd a2 = nn::relu(bc.pre2);
    h = bc.s2.out_height();
    w = bc.s2.out_width();
    bc.sr = {ch, ch, h, w, 3, 1, 1};
    MatrixXd r;
    nn::conv_forward(a2, bc.sr, p[b.wr], p[b.br], bc.colsr, r);
    bc.pre_sum = a2 + r;
    x = nn::relu(bc.pre_sum);
    in = ch;
  }
  cache.flat = Eigen::Map<const VectorXd>(x.data(), x.size());
  cache.pre = p[l.embed_w] * cache.flat + p[l.embed_b];
  cache.act = nn::relu(cache.pre);
}


/// Returns the gradient with respect to the fusion input (all four channels).
MatrixXd scene_backward(const VectorXd& d_act, const ModelParams& p, const Layout& l, const SceneCache& cache,
                        Gradients& g) {
  VectorXd d_pre = d_act;
  nn::relu_backward(d_pre, cache.pre);
  g[l.embed_w].noalias() += d_pre * cache.flat.transpose();
  g[l.embed_b] += d_pre;
  const VectorXd d_flat = p[l.embed_w].transpose() * d_pre;
  const auto& last = cache.blocks.back().sr;
  MatrixXd d_x = Eigen::Map<const MatrixXd>(d_flat.data(), last.out_channels, last.height * last.width);
  for (int k = static_cast<int>(cache.blocks.size()) - 1; k >= 0; --k) {
    const BlockIndex& b = l.blocks[k];
    const BlockCache& bc = cache.blocks[k];
    MatrixXd d_sum = d_x;
    nn::relu_backward(d_sum, bc.pre_sum);
    MatrixXd d_a2;
    nn::conv_backward(d_sum, bc.sr, p[b.wr], bc.colsr, g[b.wr], g[b.br], &d_a2);
    d_a2 += d_sum;
    nn::relu_backward(d_a2, bc.pre2);
    MatrixXd d_a1;
    nn::conv_backward(d_a2, bc.s2, p[b.w2], bc.cols2, g[b.w2], g[b.b2], &d_a1);
    nn::relu_backward(d_a1, bc.pre1);
    nn::conv_backward(d_a1, bc.s1, p[b.w1], bc.cols1, g[b.w1], g[b.b1], &d_x);
  }
  return d_x;
}

Translation head_forward(const VectorXd& embedding, const VectorXd& mask, const ModelParams& p, const Layout& l,
                         HeadCache& cache) {
  const auto& c = p.config();
  if (embedding.size() != c.embedding_dim) throw InvalidArgument("task embedding has wrong length");
  cache.embedding = embedding;
  cache.shared_pre = p[l.shared_w] * embedding + p[l.shared_b];
  cache.shared_out = nn::relu(cache.shared_pre);
  if (mask.size() > 0) cache.shared_out.array() *= mask.array();
  cache.theta_pre = p[l.theta_w1] * cache.shared_out + p[l.theta_b1];
  cache.theta_hidden = nn::relu(cache.theta_pre);
  cache.goal_pre = p[l.goal_w1] * cache.shared_out + p[l.goal_b1];
  cache.goal_hidden = nn::relu(cache.goal_pre);
  const VectorXd raw_theta = p[l.theta_w2] * cache.theta_hidden + p[l.theta_b2];
  const VectorXd raw_goal = p[l.goal_w2] * cache.goal_hidden + p[l.goal_b2];
  const int nt = c.theta_size();
  const auto& shift = p[l.shift];
  const auto& scale = p[l.scale];
  Translation t;
  const VectorXd theta = shift.col(0).head(nt) + scale.col(0).head(nt).cwiseProduct(raw_theta);
  t.theta = Eigen::Map<const dmp::RowMatrix>(theta.data(), c.n_dims, c.n_basis);
  t.goal = shift.col(0).tail(c.n_dims) + scale.col(0).tail(c.n_dims).cwiseProduct(raw_goal);
  return t;
}

/// Returns the gradient with respect to the task embedding (after its dropout).
VectorXd head_backward(const dmp::RowMatrix& d_theta, const VectorXd& d_goal, const VectorXd& mask,
                       const ModelParams& p, const Layout& l, const HeadCache& cache, Gradients& g) {
  const auto& c = p.config();
  const int nt = c.theta_size();
  const VectorXd d_raw_theta =
      Eigen::Map<const VectorXd>(d_theta.data(), nt).cwiseProduct(p[l.scale].col(0).head(nt));
  const VectorXd d_raw_goal = d_goal.cwiseProduct(p[l.scale].col(0).tail(c.n_dims));

  g[l.theta_w2].noalias() += d_raw_theta * cache.theta_hidden.transpose();
  g[l.theta_b2] += d_raw_theta;
  VectorXd d_theta_pre = p[l.theta_w2].transpose() * d_raw_theta;
  nn::relu_backward(d_theta_pre, cache.theta_pre);
  g[l.theta_w1].noalias() += d_theta_pre * cache.shared_out.transpose();
  g[l.theta_b1] += d_theta_pre;

  g[l.goal_w2].noalias() += d_raw_goal * cache.goal_hidden.transpose();
  g[l.goal_b2] += d_raw_goal;
  VectorXd d_goal_pre = p[l.goal_w2].transpose() * d_raw_goal;
  nn::relu_backward(d_goal_pre, cache.goal_pre);
  g[l.goal_w1].noalias() += d_goal_pre * cache.shared_out.transpose();
  g[l.goal_b1] += d_goal_pre;

  VectorXd d_shared = p[l.theta_w1].transpose() * d_theta_pre + p[l.goal_w1].transpose() * d_goal_pre;
  if (mask.size() > 0) d_shared.array() *= mask.array();
  nn::relu_backward(d_shared, cache.shared_pre);
  g[l.shared_w].noalias() += d_shared * cache.embedding.transpose();
  g[l.shared_b] += d_shared;
  return p[l.shared_w].transpose() * d_shared;
}

VectorXd apply_mask(VectorXd v, const VectorXd& mask) {
  if (mask.size() > 0) v.array() *= mask.array();
  return v;
}

VectorXd draw_mask(int n, double rate, Rng& rng) {
  if (rate <= 0.0) return {};
  VectorXd v(n);
  const double keep = 1.0 / (1.0 - rate);
  for (int i = 0; i < n; ++i) v(i) = rng.uniform() < rate ? 0.0 : keep;
  return v;
}

}  // namespace

DropoutMasks DropoutMasks::sample(const ModelConfig& config, Rng& rng) {
  DropoutMasks m;
  m.embedding = draw_mask(config.embedding_dim, config.dropout, rng);
  m.translation = draw_mask(config.translation_dim, config.dropout, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Public passes

VectorXd encode_sentence(const lang::SentenceMatrix& sentence, const ModelParams& params) {
  TextCache cache;
  text_forward(sentence, params, layout_of(params.config()), cache);
  return cache.out;
}

VectorXd encode_scene(const sim::Image& image, const VectorXd& sentence_embedding, const ModelParams& params,
                      bool dropout_on, Rng& rng) {
  const Layout l = layout_of(params.config());
  SceneCache cache;
  scene_forward(fusion_input(image, sentence_embedding, params, l), params, l, cache);
  if (!dropout_on) return cache.act;
  return apply_mask(cache.act, draw_mask(params.config().embedding_dim, params.config().dropout, rng));
}

Translation translate(const VectorXd& embedding, const ModelParams& params, bool dropout_on, Rng& rng) {
  const auto& c = params.config();
  const VectorXd mask = dropout_on ? draw_mask(c.translation_dim, c.dropout, rng) : VectorXd();
  HeadCache cache;
  return head_forward(embedding, mask, params, layout_of(c), cache);
}

Translation predict(const lang::SentenceMatrix& sentence, const sim::Image& image, const ModelParams& params,
                    const DropoutMasks& masks) {
  const Layout l = layout_of(params.config());
  TextCache text;
  text_forward(sentence, params, l, text);
  SceneCache scene;
  scene_forward(fusion_input(image, text.out, params, l), params, l, scene);
  HeadCache head;
  return head_forward(apply_mask(scene.act, masks.embedding), masks.translation, params, l, head);
}

double loss(const Translation& prediction, const Translation& label, double goal_weight) {
  if (prediction.theta.rows() != label.theta.rows() || prediction.theta.cols() != label.theta.cols() ||
      prediction.goal.size() != label.goal.size())
    throw InvalidArgument("loss: prediction and label shapes differ");
  const double nt = static_cast<double>(label.theta.size());
  const double o = static_cast<double>(label.goal.size());
  return (prediction.theta - label.theta).squaredNorm() / nt +
         goal_weight * (prediction.goal - label.goal).squaredNorm() / o;
}

double loss_and_gradient(const Example& example, const ModelParams& params, const DropoutMasks& masks,
                         Gradients& grads, double scale, double goal_weight) {
  const auto& c = params.config();
  const Layout l = layout_of(c);
  TextCache text;
  text_forward(example.sentence, params, l, text);
  SceneCache scene;
  scene_forward(fusion_input(example.image, text.out, params, l), params, l, scene);
  HeadCache head;
  const Translation pred = head_forward(apply_mask(scene.act, masks.embedding), masks.translation, params, l, head);
  const double value = loss(pred, example.label, goal_weight);

  const dmp::RowMatrix d_theta = (2.0 * scale / static_cast<double>(c.theta_size())) * (pred.theta - example.label.theta);
  const VectorXd d_goal = (2.0 * scale * goal_weight / c.n_dims) * (pred.goal - example.label.goal);
  const VectorXd d_embedding = head_backward(d_theta, d_goal, masks.translation, params, l, head, grads);
  const MatrixXd d_input = scene_backward(apply_mask(d_embedding, masks.embedding), params, l, scene, grads);
  const VectorXd d_plane = d_input.row(3).transpose();
  grads[l.plane_w].noalias() += d_plane * text.out.transpose();
  grads[l.plane_b] += d_plane;
  text_backward(params[l.plane_w].transpose() * d_plane, params, l, text, grads);
  return value;
}

namespace {

struct SignatureHasher {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void add(std::uint64_t v) { h = mix64(h ^ v); }
  template <typename Derived>
  void add_positive(const Eigen::MatrixBase<Derived>& m) {
    std::uint64_t word = 0;
    int bits = 0;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        word = (word << 1) | (m(i, j) > 0.0 ? 1u : 0u);
        if (++bits == 64) {
          add(word);
          word = 0;
          bits = 0;
        }
      }
    }
    add(word ^ (static_cast<std::uint64_t>(bits) << 58));
  }
};

}  // namespace

std::uint64_t activation_signature(const Example& example, const ModelParams& params,
                                   const DropoutMasks& masks) {
  const Layout l = layout_of(params.config());
  TextCache text;
  text_forward(example.sentence, params, l, text);
  SceneCache scene;
  scene_forward(fusion_input(example.image, text.out, params, l), params, l, scene);
  HeadCache head;
  head_forward(apply_mask(scene.act, masks.embedding), masks.translation, params, l, head);
  SignatureHasher hash;
  for (const auto& group : text.argmax)
    for (int a : group) hash.add(static_cast<std::uint64_t>(a));
  hash.add_positive(text.pre);
  for (const auto& b : scene.blocks) {
    hash.add_positive(b.pre1);
    hash.add_positive(b.pre2);
    hash.add_positive(b.pre_sum);
  }
  hash.add_positive(scene.pre);
  hash.add_positive(head.shared_pre);
  hash.add_positive(head.theta_pre);
  hash.add_positive(head.goal_pre);
  return hash.h;
}

AdamState AdamState::zeros(const ModelParams& params) {
  return {zero_gradients(params), zero_gradients(params), 0};
}

StepMetrics train_step(std::span<const Example* const> batch, ModelParams& params, AdamState& state,
                       const AdamOptions& options, Rng& rng) {
  if (batch.empty()) throw InvalidArgument("train_step: empty batch");
  if (state.m.size() != params.tensors().size()) state = AdamState::zeros(params);
  Gradients grads = zero_gradients(params);
  StepMetrics metrics;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const Example* example : batch) {
    const DropoutMasks masks = options.dropout ? DropoutMasks::sample(params.config(), rng) : DropoutMasks{};
    metrics.loss += scale * loss_and_gradient(*example, params, masks, grads, scale, options.goal_weight);
  }
  auto& tensors = params.tensors();
  double norm2 = 0.0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (!tensors[i].trainable) continue;
    if (!grads[i].allFinite()) throw NonFiniteGradient(tensors[i].name);
    norm2 += grads[i].squaredNorm();
  }
  metrics.gradient_norm = std::sqrt(norm2);

  ++state.step;
  const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (!tensors[i].trainable) continue;
    state.m[i] = options.beta1 * state.m[i] + (1.0 - options.beta1) * grads[i];
    state.v[i] = options.beta2 * state.v[i] + (1.0 - options.beta2) * grads[i].cwiseAbs2();
    if (options.learning_rate == 0.0) continue;
    tensors[i].value.array() -= options.learning_rate * (state.m[i].array() / c1) /
                                ((state.v[i].array() / c2).sqrt() + options.epsilon);
  }
  return metrics;
}

// ---------------------------------------------------------------------------
// Model

lang::SentenceMatrix Model::embed(std::string_view sentence) const {
  return lang::embed_sentence(lang::tokenize(sentence), embeddings, params.config().sentence_length);
}

dmp::DmpParams Model::to_dmp(const Translation& t) const {
  dmp::DmpParams out;
  out.weights = t.theta;
  out.goal = t.goal;
  out.start = start;
  return out;
}

dmp::DmpParams Model::forward(std::string_view sentence, const sim::Image& image, bool dropout_on,
                              Rng& rng) const {
  const VectorXd e_s = encode_sentence(embed(sentence), params);
  const VectorXd e = encode_scene(image, e_s, params, dropout_on, rng);
  return to_dmp(translate(e, params, dropout_on, rng));
}

double mean_pairwise_distance(const MatrixXd& points) {
  const Eigen::Index n = points.rows();
  if (n < 2) return 0.0;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) sum += (points.row(i) - points.row(j)).norm();
  return sum / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

GoalSamples mc_dropout_goals(const Model& model, std::string_view sentence, const sim::Image& image, int n,
                             Rng& rng, const sim::ArmModel& arm) {
  if (n < 2) throw InvalidArgument("mc_dropout_goals: need at least 2 passes");
  const auto& p = model.params;
  const auto& c = p.config();
  if (c.n_dims != sim::kControlDims) throw InvalidArgument("mc_dropout_goals: model must output 7 dims");
  const Layout l = layout_of(c);
  const VectorXd e_s = encode_sentence(model.embed(sentence), p);
  SceneCache scene;
  scene_forward(fusion_input(image, e_s, p, l), p, l, scene);
  GoalSamples out;
  out.joint_goals.resize(n, c.n_dims);
  out.task_points.resize(n, 2);
  HeadCache head;
  for (int k = 0; k < n; ++k) {
    const DropoutMasks masks = DropoutMasks::sample(c, rng);
    const Translation t = head_forward(apply_mask(scene.act, masks.embedding), masks.translation, p, l, head);
    const sim::Vector7d goal = t.goal;
    out.joint_goals.row(k) = sim::denormalize(arm, goal).transpose();
    out.task_points.row(k) = sim::landing_point(arm, goal).transpose();
  }
  out.dispersion = mean_pairwise_distance(out.task_points);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void append_floats(std::string& payload, const MatrixXd& m) {
  const dmp::RowMatrix rows = m;
  for (Eigen::Index i = 0; i < rows.size(); ++i) {
    const float f = static_cast<float>(rows.data()[i]);
    char bytes[4];
    std::memcpy(bytes, &f, 4);
    payload.append(bytes, 4);
  }
}

MatrixXd read_floats(const std::string& payload, std::size_t offset, int rows, int cols) {
  const std::size_t bytes = static_cast<std::size_t>(rows) * cols * 4;
  if (offset + bytes > payload.size()) throw IoError("checkpoint: tensor payload out of range");
  dmp::RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    float f;
    std::memcpy(&f, payload.data() + offset + static_cast<std::size_t>(i) * 4, 4);
    m.data()[i] = f;
  }
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const nlohmann::json& meta) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["config"] = to_json(model.params.config());
  header["meta"] = meta.is_null() ? nlohmann::json::object() : meta;
  const auto vocabulary = model.embeddings.tokens();
  header["vocabulary"] = vocabulary;
  std::string payload;
  nlohmann::json directory = nlohmann::json::array();
  const auto add = [&](const std::string& name, const MatrixXd& value, bool trainable) {
    directory.push_back({{"name", name},
                         {"shape", {value.rows(), value.cols()}},
                         {"offset", payload.size()},
                         {"trainable", trainable}});
    append_floats(payload, value);
  };
  for (const auto& t : model.params.tensors()) add(t.name, t.value, t.trainable);
  MatrixXd table(static_cast<Eigen::Index>(vocabulary.size()), model.embeddings.dim());
  for (std::size_t i = 0; i < vocabulary.size(); ++i)
    table.row(static_cast<Eigen::Index>(i)) = model.embeddings.find(vocabulary[i])->transpose();
  add("word_embeddings", table, false);
  add("start", model.start, false);
  header["tensors"] = directory;

  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  const std::uint64_t length = text.size();
  char bytes[8];
  std::memcpy(bytes, &length, 8);
  out.write(bytes, 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing checkpoint " + path);
}

Model load_checkpoint(const std::string& path, nlohmann::json* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 8) throw IoError("checkpoint " + path + " is truncated");
  std::uint64_t length;
  std::memcpy(&length, data.data(), 8);
  if (length > data.size() - 8) throw IoError("checkpoint " + path + " has a bad header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(data.substr(8, length));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path + ": bad header: " + e.what());
  }
  if (header.value("version", "") != kCheckpointVersion)
    throw IoError("checkpoint " + path + ": unsupported version");
  const std::string payload = data.substr(8 + length);
  try {
    const ModelConfig config = model_config_from_json(header.at("config"));
    std::vector<Tensor> tensors;
    MatrixXd table;
    MatrixXd start;
    for (const auto& entry : header.at("tensors")) {
      const std::string name = entry.at("name");
      const int rows = entry.at("shape").at(0);
      const int cols = entry.at("shape").at(1);
      MatrixXd value = read_floats(payload, entry.at("offset").get<std::size_t>(), rows, cols);
      if (name == "word_embeddings") {
        table = std::move(value);
      } else if (name == "start") {
        start = std::move(value);
      } else {
        tensors.push_back({name, std::move(value), entry.value("trainable", true)});
      }
    }
    const auto vocabulary = header.at("vocabulary").get<std::vector<std::string>>();
    if (table.rows() != static_cast<Eigen::Index>(vocabulary.size()) || table.cols() != config.word_dim)
      throw IoError("checkpoint " + path + ": embedding table does not match vocabulary");
    if (start.rows() != config.n_dims || start.cols() != 1)
      throw IoError("checkpoint " + path + ": start vector has wrong shape");
    Model model;
    model.params = assemble(config, std::move(tensors));
    model.embeddings = lang::EmbeddingTable(config.word_dim);
    for (std::size_t i = 0; i < vocabulary.size(); ++i)
      model.embeddings.insert(vocabulary[i], table.row(static_cast<Eigen::Index>(i)).transpose());
    model.start = start.col(0);
    if (meta != nullptr) *meta = header.value("meta", nlohmann::json::object());
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw IoError("checkpoint " + path + ": " + e.what());
  }
}

void quantize_to_float(Model& model) {
  // volatile: GCC 11 at -O3 drops some vectorized double->float->double round trips
  const auto round = [](double v) {
    volatile float f = static_cast<float>(v);
    return static_cast<double>(f);
  };
  for (auto& t : model.params.tensors()) t.value = t.value.unaryExpr(round);
  lang::EmbeddingTable table(model.embeddings.dim());
  for (const auto& token : model.embeddings.tokens())
    table.insert(token, model.embeddings.find(token)->unaryExpr(round));
  model.embeddings = std::move(table);
  model.start = model.start.unaryExpr(round);
}

}  // namespace lcms::model
