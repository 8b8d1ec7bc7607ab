#pragma once

// Loop-by-loop forward pass of the policy network, used as an oracle for the
// matrix implementation. Reads tensors by name only.

#include <Eigen/Dense>
#include <vector>

#include "lcms/model.hpp"

namespace lcms::testing {

// C x H x W volume, indexed v[c][y][x].
using Volume = std::vector<std::vector<std::vector<double>>>;

inline Volume make_volume(int c, int h, int w) {
  return Volume(c, std::vector<std::vector<double>>(h, std::vector<double>(w, 0.0)));
}

inline Volume conv3x3(const Volume& in, const Eigen::MatrixXd& w, const Eigen::MatrixXd& b, int stride) {
  const int cin = static_cast<int>(in.size());
  const int h = static_cast<int>(in[0].size()), wd = static_cast<int>(in[0][0].size());
  const int ho = (h + 2 - 3) / stride + 1, wo = (wd + 2 - 3) / stride + 1;
  const int cout = static_cast<int>(w.rows());
  Volume out = make_volume(cout, ho, wo);
  for (int o = 0; o < cout; ++o)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x) {
        double s = b(o, 0);
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = y * stride + ky - 1, ix = x * stride + kx - 1;
            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
            for (int c = 0; c < cin; ++c) s += w(o, (ky * 3 + kx) * cin + c) * in[c][iy][ix];
          }
        out[o][y][x] = s;
      }
  return out;
}

inline double relu_ref(double v) { return v > 0.0 ? v : 0.0; }

inline Volume relu_ref(Volume v) {
  for (auto& c : v)
    for (auto& row : c)
      for (auto& x : row) x = relu_ref(x);
  return v;
}

inline Eigen::VectorXd dense(const Eigen::MatrixXd& w, const Eigen::MatrixXd& b, const Eigen::VectorXd& x) {
  Eigen::VectorXd out(w.rows());
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    double s = b(i, 0);
    for (Eigen::Index j = 0; j < w.cols(); ++j) s += w(i, j) * x[j];
    out[i] = s;
  }
  return out;
}

inline Eigen::VectorXd relu_ref(Eigen::VectorXd v) {
  for (auto& x : v) x = relu_ref(x);
  return v;
}

inline Eigen::VectorXd reference_sentence(const lang::SentenceMatrix& s, const model::ModelParams& p) {
  const auto& c = p.config();
  Eigen::VectorXd pooled(c.ngram_filters * c.ngram_sizes.size());
  int k = 0;
  for (int n : c.ngram_sizes) {
    const auto& w = p.at("text.conv" + std::to_string(n) + ".w").value;
    const auto& b = p.at("text.conv" + std::to_string(n) + ".b").value;
    for (int f = 0; f < c.ngram_filters; ++f) {
      double best = -1e300;
      for (int pos = 0; pos + n <= c.sentence_length; ++pos) {
        double v = b(f, 0);
        for (int i = 0; i < n; ++i)
          for (int d = 0; d < c.word_dim; ++d) v += w(f, i * c.word_dim + d) * s.rows(pos + i, d);
        best = std::max(best, v);
      }
      pooled[k * c.ngram_filters + f] = best;
    }
    ++k;
  }
  return relu_ref(dense(p.at("text.merge.w").value, p.at("text.merge.b").value, pooled));
}

/// Task embedding before dropout.
inline Eigen::VectorXd reference_scene(const sim::Image& img, const Eigen::VectorXd& e_s, const model::ModelParams& p) {
  const auto& c = p.config();
  const int H = c.image_height, W = c.image_width;
  Volume v = make_volume(4, H, W);
  const Eigen::VectorXd plane = dense(p.at("fusion.plane.w").value, p.at("fusion.plane.b").value, e_s);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      for (int ch = 0; ch < 3; ++ch) v[ch][y][x] = img.at(y, x, ch);
      v[3][y][x] = plane[y * W + x];
    }
  for (std::size_t k = 0; k < c.block_channels.size(); ++k) {
    const std::string pre = "block" + std::to_string(k + 1);
    const Volume a1 = relu_ref(conv3x3(v, p.at(pre + ".conv1.w").value, p.at(pre + ".conv1.b").value, 1));
    const Volume a2 = relu_ref(conv3x3(a1, p.at(pre + ".conv2.w").value, p.at(pre + ".conv2.b").value, 2));
    Volume r = conv3x3(a2, p.at(pre + ".residual.w").value, p.at(pre + ".residual.b").value, 1);
    for (std::size_t ch = 0; ch < r.size(); ++ch)
      for (std::size_t y = 0; y < r[ch].size(); ++y)
        for (std::size_t x = 0; x < r[ch][y].size(); ++x) r[ch][y][x] = relu_ref(r[ch][y][x] + a2[ch][y][x]);
    v = std::move(r);
  }
  // flatten pixel-major with channels innermost
  const int C = static_cast<int>(v.size()), h = static_cast<int>(v[0].size()), w = static_cast<int>(v[0][0].size());
  Eigen::VectorXd flat(C * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < C; ++ch) flat[(y * w + x) * C + ch] = v[ch][y][x];
  return relu_ref(dense(p.at("embed.w").value, p.at("embed.b").value, flat));
}

inline model::Translation reference_translate(const Eigen::VectorXd& e, const model::ModelParams& p,
                                              const Eigen::VectorXd& h_mask = {}) {
  const auto& c = p.config();
  Eigen::VectorXd h = relu_ref(dense(p.at("shared.w").value, p.at("shared.b").value, e));
  if (h_mask.size() > 0) h = h.cwiseProduct(h_mask);
  const Eigen::VectorXd th = relu_ref(dense(p.at("theta.hidden.w").value, p.at("theta.hidden.b").value, h));
  const Eigen::VectorXd gh = relu_ref(dense(p.at("goal.hidden.w").value, p.at("goal.hidden.b").value, h));
  const Eigen::VectorXd raw_t = dense(p.at("theta.out.w").value, p.at("theta.out.b").value, th);
  const Eigen::VectorXd raw_g = dense(p.at("goal.out.w").value, p.at("goal.out.b").value, gh);
  const auto& shift = p.at("output.shift").value;
  const auto& scale = p.at("output.scale").value;
  model::Translation t;
  t.theta.resize(c.n_dims, c.n_basis);
  for (int j = 0; j < c.n_dims; ++j)
    for (int i = 0; i < c.n_basis; ++i) {
      const int k = j * c.n_basis + i;
      t.theta(j, i) = shift(k, 0) + scale(k, 0) * raw_t[k];
    }
  t.goal.resize(c.n_dims);
  const int nt = c.theta_size();
  for (int j = 0; j < c.n_dims; ++j) t.goal[j] = shift(nt + j, 0) + scale(nt + j, 0) * raw_g[j];
  return t;
}

}  // namespace lcms::testing
