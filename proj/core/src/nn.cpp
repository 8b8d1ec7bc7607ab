#include "lcms/nn.hpp"

namespace lcms::nn {

void im2col(const Eigen::MatrixXd& input, const ConvShape& s, Eigen::MatrixXd& cols) {
  const int oh = s.out_height();
  const int ow = s.out_width();
  const int cin = s.in_channels;
  cols.resize(s.patch_size(), oh * ow);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      double* dst = cols.col(oy * ow + ox).data();
      for (int ky = 0; ky < s.kernel; ++ky) {
        const int iy = oy * s.stride - s.padding + ky;
        for (int kx = 0; kx < s.kernel; ++kx) {
          const int ix = ox * s.stride - s.padding + kx;
          double* slot = dst + (ky * s.kernel + kx) * cin;
          if (iy < 0 || iy >= s.height || ix < 0 || ix >= s.width) {
            std::fill(slot, slot + cin, 0.0);
          } else {
            const double* src = input.col(iy * s.width + ix).data();
            std::copy(src, src + cin, slot);
          }
        }
      }
    }
  }
}

void col2im(const Eigen::MatrixXd& cols, const ConvShape& s, Eigen::MatrixXd& input_grad) {
  const int oh = s.out_height();
  const int ow = s.out_width();
  const int cin = s.in_channels;
  input_grad.setZero(cin, s.height * s.width);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const double* src = cols.col(oy * ow + ox).data();
      for (int ky = 0; ky < s.kernel; ++ky) {
        const int iy = oy * s.stride - s.padding + ky;
        if (iy < 0 || iy >= s.height) continue;
        for (int kx = 0; kx < s.kernel; ++kx) {
          const int ix = ox * s.stride - s.padding + kx;
          if (ix < 0 || ix >= s.width) continue;
          double* dst = input_grad.col(iy * s.width + ix).data();
          const double* slot = src + (ky * s.kernel + kx) * cin;
          for (int c = 0; c < cin; ++c) dst[c] += slot[c];
        }
      }
    }
  }
}

void conv_forward(const Eigen::MatrixXd& input, const ConvShape& shape, const Eigen::MatrixXd& weight,
                  const Eigen::MatrixXd& bias, Eigen::MatrixXd& cols, Eigen::MatrixXd& out) {
  im2col(input, shape, cols);
  out.noalias() = weight * cols;
  out.colwise() += bias.col(0);
}

void conv_backward(const Eigen::MatrixXd& out_grad, const ConvShape& shape,
                   const Eigen::MatrixXd& weight, const Eigen::MatrixXd& cols,
                   Eigen::MatrixXd& weight_grad, Eigen::MatrixXd& bias_grad,
                   Eigen::MatrixXd* input_grad) {
  weight_grad.noalias() += out_grad * cols.transpose();
  bias_grad.col(0) += out_grad.rowwise().sum();
  if (input_grad != nullptr) {
    const Eigen::MatrixXd cols_grad = weight.transpose() * out_grad;
    col2im(cols_grad, shape, *input_grad);
  }
}

}  // namespace lcms::nn
