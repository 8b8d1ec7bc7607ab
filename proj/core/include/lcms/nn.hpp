#pragma once

#include <Eigen/Dense>

namespace lcms::nn {

// Feature maps are stored channel-major per pixel: a C x (H*W) column-major
// matrix whose column p = row * W + col holds the C channel values of pixel p.
// Convolution weights are Cout x (K*K*Cin) with column index (ky*K + kx)*Cin + c.

struct ConvShape {
  int in_channels;
  int out_channels;
  int height;  // input
  int width;   // input
  int kernel = 3;
  int stride = 1;
  int padding = 1;

  int out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  int patch_size() const { return kernel * kernel * in_channels; }
};

/// Unrolls input patches into a (K*K*Cin) x (Hout*Wout) matrix; out-of-image taps are zero.
void im2col(const Eigen::MatrixXd& input, const ConvShape& shape, Eigen::MatrixXd& cols);

/// Accumulates patch gradients back onto the input gradient (adjoint of im2col).
void col2im(const Eigen::MatrixXd& cols, const ConvShape& shape, Eigen::MatrixXd& input_grad);

/// out = W * im2col(input) + b, with b stored as a Cout x 1 matrix. `cols` is kept for the backward pass.
void conv_forward(const Eigen::MatrixXd& input, const ConvShape& shape, const Eigen::MatrixXd& weight,
                  const Eigen::MatrixXd& bias, Eigen::MatrixXd& cols, Eigen::MatrixXd& out);

/// Given dL/dout, accumulates dL/dW and dL/db and returns dL/dinput when requested.
void conv_backward(const Eigen::MatrixXd& out_grad, const ConvShape& shape,
                   const Eigen::MatrixXd& weight, const Eigen::MatrixXd& cols,
                   Eigen::MatrixXd& weight_grad, Eigen::MatrixXd& bias_grad,
                   Eigen::MatrixXd* input_grad);

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  return x.cwiseMax(0.0);
}

/// Zeroes gradient entries where the forward pre-activation was not positive.
template <typename G, typename P>
void relu_backward(Eigen::MatrixBase<G>& grad, const Eigen::MatrixBase<P>& pre) {
  grad = (pre.array() > 0.0).select(grad, 0.0);
}

}  // namespace lcms::nn
