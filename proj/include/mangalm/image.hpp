#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mangalm/landmark_schema.hpp"

namespace mangalm {

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Single-channel image with values nominally in [0, 1] (0 = ink, 1 = paper).
///
/// Pixel (col, row) covers the unit square [col, col+1) x [row, row+1) of the
/// continuous image frame; its center sits at (col + 0.5, row + 0.5).
class Image {
public:
    Image() = default;
    Image(int width, int height, double fill = 0.0);

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return pixels_.empty(); }

    double& at(int col, int row) { return pixels_[index(col, row)]; }
    double at(int col, int row) const { return pixels_[index(col, row)]; }

    const std::vector<double>& pixels() const { return pixels_; }
    std::vector<double>& pixels() { return pixels_; }

    /// Bilinear sample at a continuous position; `outside` beyond the border.
    double sample(Point2 p, double outside) const;

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t index(int col, int row) const {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(col);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> pixels_;
};

/// Builds an output image by pulling each output pixel center through
/// `to_source` and bilinearly sampling `source` there. `supersample` > 1
/// averages a k x k grid of sub-pixel samples per output pixel.
Image warp_image(const Image& source, int width, int height,
                 const std::function<Point2(Point2)>& to_source, double fill,
                 int supersample = 1);

/// Binary (P5) or ASCII (P2) graymap, 8 or 16 bit.
Image read_pgm(const std::filesystem::path& path);
Image decode_pgm(const std::string& bytes);
std::string encode_pgm(const Image& image);
void write_pgm(const std::filesystem::path& path, const Image& image);

}  // namespace mangalm
