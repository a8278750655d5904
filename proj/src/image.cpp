#include "mangalm/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mangalm/io_util.hpp"

namespace mangalm {

Image::Image(int width, int height, double fill) : width_(width), height_(height) {
    if (width < 0 || height < 0) throw ImageError("negative image dimensions");
    pixels_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

double Image::sample(Point2 p, double outside) const {
    // Shift so that integer coordinates land on pixel centers.
    const double u = p.x - 0.5;
    const double v = p.y - 0.5;
    const double fu = std::floor(u);
    const double fv = std::floor(v);
    const int c0 = static_cast<int>(fu);
    const int r0 = static_cast<int>(fv);
    const double ax = u - fu;
    const double ay = v - fv;

    auto px = [&](int c, int r) {
        if (c < 0 || r < 0 || c >= width_ || r >= height_) return outside;
        return at(c, r);
    };
    if (c0 < -1 || r0 < -1 || c0 >= width_ || r0 >= height_) return outside;
    // Exact pixel-center hits return the pixel value unchanged.
    if (ax == 0.0 && ay == 0.0) return px(c0, r0);
    const double top = (1.0 - ax) * px(c0, r0) + ax * px(c0 + 1, r0);
    const double bottom = (1.0 - ax) * px(c0, r0 + 1) + ax * px(c0 + 1, r0 + 1);
    return (1.0 - ay) * top + ay * bottom;
}

Image warp_image(const Image& source, int width, int height,
                 const std::function<Point2(Point2)>& to_source, double fill, int supersample) {
    Image out(width, height, fill);
    const int k = std::max(1, supersample);
    const double inv = 1.0 / static_cast<double>(k * k);
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            if (k == 1) {
                out.at(c, r) = source.sample(to_source({c + 0.5, r + 0.5}), fill);
                continue;
            }
            double acc = 0.0;
            for (int sy = 0; sy < k; ++sy) {
                for (int sx = 0; sx < k; ++sx) {
                    const Point2 q{c + (sx + 0.5) / k, r + (sy + 0.5) / k};
                    acc += source.sample(to_source(q), fill);
                }
            }
            out.at(c, r) = acc * inv;
        }
    }
    return out;
}

namespace {

std::string next_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

int parse_int(const std::string& tok) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(tok, &used);
        if (used != tok.size()) throw ImageError("bad PGM header token: " + tok);
        return v;
    } catch (const std::logic_error&) {
        throw ImageError("bad PGM header token: " + tok);
    }
}

}  // namespace

Image decode_pgm(const std::string& bytes) {
    std::istringstream in(bytes, std::ios::binary);
    const std::string magic = next_token(in);
    if (magic != "P5" && magic != "P2") throw ImageError("not a PGM image (magic " + magic + ")");
    const int w = parse_int(next_token(in));
    const int h = parse_int(next_token(in));
    const int maxval = parse_int(next_token(in));
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw ImageError("bad PGM header");
    Image img(w, h);
    const double scale = 1.0 / maxval;
    if (magic == "P2") {
        for (auto& v : img.pixels()) {
            const auto tok = next_token(in);
            if (tok.empty()) throw ImageError("truncated PGM data");
            v = parse_int(tok) * scale;
        }
        return img;
    }
    const std::size_t bpp = maxval < 256 ? 1 : 2;
    std::string data(img.pixels().size() * bpp, '\0');
    in.read(data.data(), static_cast<std::streamsize>(data.size()));
    if (static_cast<std::size_t>(in.gcount()) != data.size()) throw ImageError("truncated PGM data");
    for (std::size_t i = 0; i < img.pixels().size(); ++i) {
        unsigned v = static_cast<unsigned char>(data[i * bpp]);
        if (bpp == 2) v = (v << 8) | static_cast<unsigned char>(data[i * bpp + 1]);
        img.pixels()[i] = v * scale;
    }
    return img;
}

Image read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot open image: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_pgm(ss.str());
}

std::string encode_pgm(const Image& image) {
    std::string out = "P5\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) +
                      "\n255\n";
    out.reserve(out.size() + image.pixels().size());
    for (double v : image.pixels()) {
        const double c = std::clamp(v, 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
    }
    return out;
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
    write_file_atomic(path, encode_pgm(image));
}

}  // namespace mangalm
