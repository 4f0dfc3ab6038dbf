#include "mrfibp/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>

#include <spdlog/fmt/fmt.h>

#include "mrfibp/rng.hpp"

namespace mrfibp {

namespace {

double sq_dist(const Color& a, const Color& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

} // namespace

std::size_t Codebook::nearest(const Color& c) const {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < centroids.size(); ++i) {
        const double d = sq_dist(c, centroids[i]);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

Codebook build_codebook(std::span<const Color> pixels, std::size_t k, std::uint64_t seed,
                        const KMeansObserver& observer) {
    if (k == 0) throw Error(ErrorCode::invalid_argument, "codebook size must be positive");
    std::set<Color> distinct(pixels.begin(), pixels.end());
    if (distinct.size() < k)
        throw Error(ErrorCode::invalid_argument,
                    fmt::format("fewer distinct points ({}) than codewords ({})", distinct.size(), k));

    std::vector<Color> candidates(distinct.begin(), distinct.end());
    Rng rng = make_stream(seed, "kmeans-init");
    std::shuffle(candidates.begin(), candidates.end(), rng);

    Codebook book;
    book.centroids.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k));

    std::vector<std::size_t> assign(pixels.size(), k);
    for (std::size_t it = 0; it < kKMeansIterationCap; ++it) {
        bool changed = false;
        double objective = 0.0;
        for (std::size_t i = 0; i < pixels.size(); ++i) {
            const auto c = book.nearest(pixels[i]);
            objective += sq_dist(pixels[i], book.centroids[c]);
            changed |= c != assign[i];
            assign[i] = c;
        }
        book.iterations = it + 1;
        if (observer) observer(it, objective);
        if (!changed) break;

        std::vector<Color> sums(k, Color{0, 0, 0});
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < pixels.size(); ++i) {
            for (int d = 0; d < 3; ++d) sums[assign[i]][d] += pixels[i][d];
            ++counts[assign[i]];
        }
        // An emptied cluster keeps its centroid.
        for (std::size_t c = 0; c < k; ++c)
            if (counts[c] > 0)
                for (int d = 0; d < 3; ++d) book.centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
    }
    return book;
}

Color RgbImage::pixel(int x, int y) const {
    const auto at = 3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x));
    return {static_cast<double>(data[at]), static_cast<double>(data[at + 1]), static_cast<double>(data[at + 2])};
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string ppm_token(std::istream& in) {
    std::string tok;
    for (int ch; (ch = in.get()) != EOF;) {
        if (ch == '#' && tok.empty()) {
            while ((ch = in.get()) != EOF && ch != '\n') {}
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

int ppm_int(std::istream& in, const char* what) {
    const auto tok = ppm_token(in);
    try {
        std::size_t used = 0;
        const int v = std::stoi(tok, &used);
        if (used == tok.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::parse_error, fmt::format("ppm: bad {} '{}'", what, tok));
}

} // namespace

RgbImage read_ppm(std::istream& in) {
    const auto magic = ppm_token(in);
    if (magic != "P6" && magic != "P3") throw Error(ErrorCode::parse_error, "ppm: expected P6 or P3 header");
    RgbImage img;
    img.width = ppm_int(in, "width");
    img.height = ppm_int(in, "height");
    const int maxval = ppm_int(in, "maxval");
    if (img.width <= 0 || img.height <= 0) throw Error(ErrorCode::invalid_argument, "ppm: empty image");
    if (maxval != 255) throw Error(ErrorCode::parse_error, "ppm: only maxval 255 is supported");
    const auto n = 3 * static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
    img.data.resize(n);
    if (magic == "P6") {
        in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n) throw Error(ErrorCode::parse_error, "ppm: truncated pixel data");
    } else {
        for (auto& v : img.data) {
            const int x = ppm_int(in, "sample");
            if (x < 0 || x > 255) throw Error(ErrorCode::parse_error, "ppm: sample out of range");
            v = static_cast<std::uint8_t>(x);
        }
    }
    return img;
}

RgbImage load_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
    return read_ppm(in);
}

void write_ppm(std::ostream& out, const RgbImage& image) {
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.data.data()), static_cast<std::streamsize>(image.data.size()));
}

Color rgb_to_lab(const Color& rgb) {
    auto linear = [](double c) {
        c /= 255.0;
        return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
    };
    const double r = linear(rgb[0]), g = linear(rgb[1]), b = linear(rgb[2]);
    const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    auto f = [](double t) {
        constexpr double e = 216.0 / 24389.0, kappa = 24389.0 / 27.0;
        return t > e ? std::cbrt(t) : (kappa * t + 16.0) / 116.0;
    };
    const double fx = f(x), fy = f(y), fz = f(z);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

ColorCodebooks build_color_codebooks(std::span<const RgbImage> images, std::size_t words,
                                     std::uint64_t seed, std::size_t max_samples) {
    std::vector<Color> rgb;
    for (const auto& img : images)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) rgb.push_back(img.pixel(x, y));
    if (rgb.empty()) throw Error(ErrorCode::invalid_argument, "no pixels to build codebooks from");
    if (rgb.size() > max_samples) {
        Rng rng = make_stream(seed, "codebook-sample");
        std::shuffle(rgb.begin(), rgb.end(), rng);
        rgb.resize(max_samples);
    }
    std::vector<Color> lab(rgb.size());
    std::transform(rgb.begin(), rgb.end(), lab.begin(), rgb_to_lab);
    return {build_codebook(rgb, words, seed), build_codebook(lab, words, seed + 1)};
}

FeatureBag grid_layout(const std::string& image_id, int width, int height, int rows, int cols) {
    if (width <= 0 || height <= 0) throw Error(ErrorCode::invalid_argument, "empty image");
    if (rows <= 0 || cols <= 0 || rows > height || cols > width)
        throw Error(ErrorCode::invalid_argument,
                    fmt::format("{}x{} cell grid does not fit a {}x{} image", rows, cols, width, height));
    FeatureBag bag;
    bag.image_id = image_id;
    bag.width = width;
    bag.height = height;
    auto edge = [](int i, int n, int extent) { return static_cast<int>(static_cast<long>(i) * extent / n); };
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            Patch p;
            p.id = r * cols + c;
            const int x0 = edge(c, cols, width), x1 = edge(c + 1, cols, width);
            for (int y = edge(r, rows, height); y < edge(r + 1, rows, height); ++y)
                p.mask.push_back({static_cast<std::int64_t>(y) * width + x0, x1 - x0});
            bag.patches.push_back(std::move(p));
        }
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const int id = r * cols + c;
            if (c + 1 < cols) {
                bag.adjacency.emplace_back(id, id + 1);
                bag.adjacency.emplace_back(id + 1, id);
            }
            if (r + 1 < rows) {
                bag.adjacency.emplace_back(id, id + cols);
                bag.adjacency.emplace_back(id + cols, id);
            }
        }
    return bag;
}

FeatureBag extract_color_features(const RgbImage& image, const ColorCodebooks& codebooks, int rows,
                                  int cols, const std::string& image_id) {
    if (image.width <= 0 || image.height <= 0 || image.data.empty())
        throw Error(ErrorCode::invalid_argument, "empty image");
    FeatureBag bag = grid_layout(image_id, image.width, image.height, rows, cols);
    const auto k1 = static_cast<Eigen::Index>(codebooks.rgb.size());
    const auto k2 = static_cast<Eigen::Index>(codebooks.lab.size());
    for (auto& p : bag.patches) {
        Vector hist = Vector::Zero(k1 + k2);
        double count = 0.0;
        for (const auto& run : p.mask)
            for (auto i = run.start; i < run.start + run.length; ++i) {
                const auto x = static_cast<int>(i % image.width), y = static_cast<int>(i / image.width);
                const Color rgb = image.pixel(x, y);
                hist(static_cast<Eigen::Index>(codebooks.rgb.nearest(rgb))) += 1.0;
                hist(k1 + static_cast<Eigen::Index>(codebooks.lab.nearest(rgb_to_lab(rgb)))) += 1.0;
                count += 1.0;
            }
        p.feature = hist / count;
    }
    return bag;
}

} // namespace mrfibp
