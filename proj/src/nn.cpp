#include "mangalm/nn.hpp"

#include <limits>
#include <stdexcept>

namespace mangalm::nn {

Matrix im2col(const Matrix& in, int side) {
    const int channels = static_cast<int>(in.rows());
    const int pixels = side * side;
    Matrix cols = Matrix::Zero(channels * 9, pixels);
    for (int c = 0; c < channels; ++c) {
        const double* src = in.row(c).data();
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                double* dst = cols.row(c * 9 + ky * 3 + kx).data();
                const int dy = ky - 1;
                const int dx = kx - 1;
                const int y0 = dy < 0 ? 1 : 0;
                const int y1 = dy > 0 ? side - 1 : side;
                const int x0 = dx < 0 ? 1 : 0;
                const int x1 = dx > 0 ? side - 1 : side;
                for (int y = y0; y < y1; ++y) {
                    const double* s = src + (y + dy) * side + dx;
                    double* d = dst + y * side;
                    for (int x = x0; x < x1; ++x) d[x] = s[x];
                }
            }
        }
    }
    return cols;
}

Matrix col2im(const Matrix& cols, int channels, int side) {
    Matrix out = Matrix::Zero(channels, side * side);
    for (int c = 0; c < channels; ++c) {
        double* dst = out.row(c).data();
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const double* src = cols.row(c * 9 + ky * 3 + kx).data();
                const int dy = ky - 1;
                const int dx = kx - 1;
                const int y0 = dy < 0 ? 1 : 0;
                const int y1 = dy > 0 ? side - 1 : side;
                const int x0 = dx < 0 ? 1 : 0;
                const int x1 = dx > 0 ? side - 1 : side;
                for (int y = y0; y < y1; ++y) {
                    double* d = dst + (y + dy) * side + dx;
                    const double* s = src + y * side;
                    for (int x = x0; x < x1; ++x) d[x] += s[x];
                }
            }
        }
    }
    return out;
}

Matrix conv_forward(const Conv3x3& conv, const Matrix& in, int side, Matrix& cols) {
    if (in.rows() != conv.in_channels() || in.cols() != side * side) {
        throw std::invalid_argument("conv input shape mismatch");
    }
    cols = im2col(in, side);
    Matrix out = conv.weight * cols;
    out.colwise() += conv.bias;
    return out;
}

void conv_backward(const Conv3x3& conv, const Matrix& cols, const Matrix& grad_out, int side,
                   Conv3x3& grad, Matrix* grad_in) {
    grad.weight.noalias() += grad_out * cols.transpose();
    grad.bias += grad_out.rowwise().sum();
    if (grad_in) {
        const Matrix dcols = conv.weight.transpose() * grad_out;
        *grad_in = col2im(dcols, conv.in_channels(), side);
    }
}

Matrix maxpool_forward(const Matrix& in, int side, std::vector<int>& argmax) {
    if (side % 2 != 0) throw std::invalid_argument("max pooling needs an even side");
    const int half = side / 2;
    const int channels = static_cast<int>(in.rows());
    Matrix out(channels, half * half);
    argmax.assign(static_cast<std::size_t>(channels) * half * half, 0);
    for (int c = 0; c < channels; ++c) {
        const double* src = in.row(c).data();
        for (int y = 0; y < half; ++y) {
            for (int x = 0; x < half; ++x) {
                const int base = 2 * y * side + 2 * x;
                const int cand[4] = {base, base + 1, base + side, base + side + 1};
                int best = cand[0];
                for (int k = 1; k < 4; ++k) {
                    if (src[cand[k]] > src[best]) best = cand[k];
                }
                out(c, y * half + x) = src[best];
                argmax[static_cast<std::size_t>(c) * half * half + y * half + x] = best;
            }
        }
    }
    return out;
}

Matrix maxpool_backward(const Matrix& grad_out, const std::vector<int>& argmax, int side_in) {
    const int channels = static_cast<int>(grad_out.rows());
    const auto outs = grad_out.cols();
    Matrix grad_in = Matrix::Zero(channels, side_in * side_in);
    for (int c = 0; c < channels; ++c) {
        for (Eigen::Index j = 0; j < outs; ++j) {
            grad_in(c, argmax[static_cast<std::size_t>(c * outs + j)]) += grad_out(c, j);
        }
    }
    return grad_in;
}

void relu_backward_inplace(Matrix& grad, const Matrix& activated) {
    grad = (activated.array() > 0.0).select(grad, 0.0);
}

void relu_backward_inplace(Vector& grad, const Vector& activated) {
    grad = (activated.array() > 0.0).select(grad, 0.0);
}

Conv3x3 zeros_like(const Conv3x3& c) {
    return {Matrix::Zero(c.weight.rows(), c.weight.cols()), Vector::Zero(c.bias.size())};
}

Dense zeros_like(const Dense& d) {
    return {Matrix::Zero(d.weight.rows(), d.weight.cols()), Vector::Zero(d.bias.size())};
}

}  // namespace mangalm::nn
