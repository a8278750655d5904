#pragma once

#include <Eigen/Core>
#include <vector>

namespace mangalm::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Feature maps are stored as (channels x side*side) with each row a row-major plane.

/// 3x3 convolution, stride 1, zero padding 1. weight is (out x in*9), column
/// index = in_channel * 9 + ky * 3 + kx.
struct Conv3x3 {
    Matrix weight;
    Vector bias;

    int in_channels() const { return static_cast<int>(weight.cols() / 9); }
    int out_channels() const { return static_cast<int>(weight.rows()); }
};

struct Dense {
    Matrix weight;  // (out x in)
    Vector bias;

    int inputs() const { return static_cast<int>(weight.cols()); }
    int outputs() const { return static_cast<int>(weight.rows()); }
};

Matrix im2col(const Matrix& in, int side);
Matrix col2im(const Matrix& cols, int channels, int side);

/// Returns the pre-activation output; `cols` receives the im2col buffer.
Matrix conv_forward(const Conv3x3& conv, const Matrix& in, int side, Matrix& cols);

/// Accumulates weight/bias gradients into `grad`; writes the input gradient
/// when `grad_in` is non-null.
void conv_backward(const Conv3x3& conv, const Matrix& cols, const Matrix& grad_out, int side,
                   Conv3x3& grad, Matrix* grad_in);

/// 2x2 max pooling, stride 2. `argmax` holds the winning input column per output.
Matrix maxpool_forward(const Matrix& in, int side, std::vector<int>& argmax);
Matrix maxpool_backward(const Matrix& grad_out, const std::vector<int>& argmax, int side_in);

inline void relu_inplace(Matrix& m) { m = m.cwiseMax(0.0); }
inline void relu_inplace(Vector& v) { v = v.cwiseMax(0.0); }

/// Zeroes gradient entries whose forward activation was clamped.
void relu_backward_inplace(Matrix& grad, const Matrix& activated);
void relu_backward_inplace(Vector& grad, const Vector& activated);

Conv3x3 zeros_like(const Conv3x3& c);
Dense zeros_like(const Dense& d);

}  // namespace mangalm::nn
