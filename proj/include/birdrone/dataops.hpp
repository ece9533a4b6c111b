#pragma once

#include <array>
#include <cctype>
#include <climits>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "birdrone/boxes.hpp"

namespace brd {

// ---------------------------------------------------------------------------
// synthetic scene generation
// ---------------------------------------------------------------------------

struct SceneSpec {
    int image_size = 160;
    int channels = 1;  // 1 grayscale, 3 rgb
    int min_objects = 1;
    int max_objects = 4;
    double drone_prob = 0.5;  // class mix: probability of class 0 (drone)
    double scale_min = 8.0;   // rendered long side, pixels
    double scale_max = 64.0;
    double small_bias = 0.0;  // probability of forcing the object under 32 px
    double clutter_density = 0.6;
    double occlusion_prob = 0.25;
    double blur_prob = 0.25;
    double boundary_prob = 0.15;

    void validate() const {
        require(image_size >= 32, "image_size must be at least 32");
        require(channels == 1 || channels == 3, "channels must be 1 or 3");
        require(min_objects >= 0 && max_objects >= min_objects, "bad object count range");
        require(scale_min >= 5.0, "scale_min must be at least 5 px");
        require(scale_max >= scale_min && scale_max <= 128.0, "bad scale range");
        require(scale_max < image_size, "objects must fit inside the image");
        for (double p : {drone_prob, small_bias, occlusion_prob, blur_prob, boundary_prob})
            require(p >= 0.0 && p <= 1.0, "probabilities must be in [0,1]");
        require(clutter_density >= 0.0 && clutter_density <= 4.0, "bad clutter_density");
    }
};

namespace detail {

// Object silhouettes in a local frame scaled so everything fits in the unit
// disk; the rasterizer maps the disk to scale/2 pixels.

inline bool drone_hit(double x, double y) {
    // quadrotor: two diagonal arms, four rotor discs, round body
    const double inv_sqrt2 = 0.7071067811865476;
    const double a1 = (x + y) * inv_sqrt2;  // along arm 1
    const double p1 = (x - y) * inv_sqrt2;
    if (std::abs(a1) <= 0.78 && std::abs(p1) <= 0.09) return true;
    if (std::abs(p1) <= 0.78 && std::abs(a1) <= 0.09) return true;
    if (x * x + y * y <= 0.28 * 0.28) return true;
    for (double sx : {-0.55, 0.55})
        for (double sy : {-0.55, 0.55}) {
            const double dx = x - sx, dy = y - sy;
            if (dx * dx + dy * dy <= 0.21 * 0.21) return true;
        }
    return false;
}

inline double dist_to_segment(double px, double py, double ax, double ay, double bx,
                              double by, double& t_out) {
    const double abx = bx - ax, aby = by - ay;
    const double len2 = abx * abx + aby * aby;
    double t = len2 > 0 ? ((px - ax) * abx + (py - ay) * aby) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (ax + t * abx), dy = py - (ay + t * aby);
    t_out = t;
    return std::sqrt(dx * dx + dy * dy);
}

inline bool bird_hit(double x, double y) {
    // gliding bird: two wing strokes along quadratic arcs, thick at the body
    // and tapering toward the tips
    constexpr int kSegs = 10;
    const double mx = std::abs(x);  // wings are mirror images
    double prev_x = 0.0, prev_y = 0.0;
    for (int s = 1; s <= kSegs; ++s) {
        const double t = static_cast<double>(s) / kSegs;
        // bezier (0,0) -> ctrl (0.42,0.46) -> tip (0.95,0.02)
        const double u = 1.0 - t;
        const double bx = 2 * u * t * 0.42 + t * t * 0.95;
        const double by = 2 * u * t * 0.46 + t * t * 0.02;
        double tt;
        const double d = dist_to_segment(mx, y, prev_x, prev_y, bx, by, tt);
        const double arc_t = (s - 1 + tt) / kSegs;
        const double thick = 0.15 * (1.0 - arc_t) + 0.055 * arc_t;
        if (d <= thick) return true;
        prev_x = bx;
        prev_y = by;
    }
    return false;
}

// alpha patch rendered around one object; pixel (x0+i, y0+j) covers alpha[j*w+i]
struct Patch {
    int x0 = 0, y0 = 0, w = 0, h = 0;
    std::vector<double> alpha;

    double at(int x, int y) const {
        if (x < x0 || y < y0 || x >= x0 + w || y >= y0 + h) return 0.0;
        return alpha[static_cast<std::size_t>(y - y0) * w + (x - x0)];
    }
};

inline Patch render_silhouette(int class_id, double cx, double cy, double scale,
                               double theta, int pad) {
    const double r = scale * 0.5;
    Patch p;
    p.x0 = static_cast<int>(std::floor(cx - r)) - 1 - pad;
    p.y0 = static_cast<int>(std::floor(cy - r)) - 1 - pad;
    p.w = static_cast<int>(std::ceil(cx + r)) + 2 + pad - p.x0;
    p.h = static_cast<int>(std::ceil(cy + r)) + 2 + pad - p.y0;
    p.alpha.assign(static_cast<std::size_t>(p.w) * p.h, 0.0);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (int j = 0; j < p.h; ++j)
        for (int i = 0; i < p.w; ++i) {
            double a = 0.0;
            for (double sy : {0.25, 0.75})
                for (double sx : {0.25, 0.75}) {
                    const double wx = p.x0 + i + sx - cx;
                    const double wy = p.y0 + j + sy - cy;
                    // rotate into the local frame and normalize to unit radius
                    const double lx = (wx * ct + wy * st) / r;
                    const double ly = (-wx * st + wy * ct) / r;
                    const bool hit = class_id == 0 ? drone_hit(lx, ly) : bird_hit(lx, ly);
                    if (hit) a += 0.25;
                }
            p.alpha[static_cast<std::size_t>(j) * p.w + i] = a;
        }
    return p;
}

inline void motion_blur(Patch& p, int dir_x, int dir_y, int length) {
    Patch out = p;
    for (int j = 0; j < p.h; ++j)
        for (int i = 0; i < p.w; ++i) {
            double acc = 0.0;
            for (int k = 0; k < length; ++k)
                acc += p.at(p.x0 + i - k * dir_x, p.y0 + j - k * dir_y);
            out.alpha[static_cast<std::size_t>(j) * p.w + i] = acc / length;
        }
    p = std::move(out);
}

struct PixelBox {
    int x0 = 0, y0 = 0, x1 = -1, y1 = -1;  // inclusive; empty when x1 < x0
    bool empty() const { return x1 < x0 || y1 < y0; }
    long area() const {
        return empty() ? 0 : static_cast<long>(x1 - x0 + 1) * (y1 - y0 + 1);
    }
};

// bounding box of solid pixels, restricted to the image when bounded
inline PixelBox tight_box(const Patch& p, int img_w, int img_h, double alpha_min = 0.5,
                          bool bounded = true) {
    PixelBox b{INT_MAX, INT_MAX, INT_MIN, INT_MIN};
    for (int j = 0; j < p.h; ++j) {
        const int y = p.y0 + j;
        if (bounded && (y < 0 || y >= img_h)) continue;
        for (int i = 0; i < p.w; ++i) {
            const int x = p.x0 + i;
            if (bounded && (x < 0 || x >= img_w)) continue;
            if (p.alpha[static_cast<std::size_t>(j) * p.w + i] >= alpha_min) {
                b.x0 = std::min(b.x0, x);
                b.y0 = std::min(b.y0, y);
                b.x1 = std::max(b.x1, x);
                b.y1 = std::max(b.y1, y);
            }
        }
    }
    if (b.x1 < b.x0) b = PixelBox{0, 0, -1, -1};
    return b;
}

inline long count_solid(const Patch& p, double alpha_min = 0.5) {
    long n = 0;
    for (double a : p.alpha) n += a >= alpha_min;
    return n;
}

}  // namespace detail

// Deterministic procedural scene: layered low-frequency background, soft
// clutter, silhouette objects with rotation/scale/brightness jitter, optional
// partial occlusion and motion blur, additive sensor noise. Labels are tight
// boxes over solidly covered pixels after every effect.
template <typename T>
Sample<T> generate_scene(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    const int W = spec.image_size, H = spec.image_size;
    Rng rng(seed);

    std::vector<double> canvas(static_cast<std::size_t>(W) * H);
    const double base = rng.uniform(0.30, 0.55);
    struct Wave {
        double amp, fx, fy, phase;
    };
    std::array<Wave, 3> waves;
    for (Wave& w : waves)
        w = {rng.uniform(0.03, 0.10), rng.uniform(0.3, 1.7), rng.uniform(0.3, 1.7),
             rng.uniform(0.0, 2.0 * kPi)};
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double v = base;
            for (const Wave& w : waves)
                v += w.amp * std::cos(2.0 * kPi * (w.fx * x / W + w.fy * y / H) + w.phase);
            canvas[static_cast<std::size_t>(y) * W + x] = v;
        }

    // soft elliptical clutter: compact blobs plus a few long streaks
    const int blobs = static_cast<int>(std::lround(spec.clutter_density * 10.0));
    for (int b = 0; b < blobs; ++b) {
        const double cx = rng.uniform(0.0, W), cy = rng.uniform(0.0, H);
        const bool streak = rng.bernoulli(0.25);
        const double rx = streak ? rng.uniform(18.0, 55.0) : rng.uniform(2.5, 10.0);
        const double ry = streak ? rng.uniform(2.0, 6.0) : rng.uniform(2.5, 10.0);
        const double dv = rng.uniform(-0.12, 0.12);
        const int x0 = std::max(0, static_cast<int>(cx - rx - 1));
        const int x1 = std::min(W - 1, static_cast<int>(cx + rx + 1));
        const int y0 = std::max(0, static_cast<int>(cy - ry - 1));
        const int y1 = std::min(H - 1, static_cast<int>(cy + ry + 1));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double nx = (x + 0.5 - cx) / rx, ny = (y + 0.5 - cy) / ry;
                const double d2 = nx * nx + ny * ny;
                if (d2 < 1.0)
                    canvas[static_cast<std::size_t>(y) * W + x] += dv * (1.0 - d2);
            }
    }

    const int count = rng.uniform_int(spec.min_objects, spec.max_objects);
    Sample<T> sample;
    std::vector<detail::PixelBox> placed;
    for (int obj = 0; obj < count; ++obj) {
        bool done = false;
        for (int attempt = 0; attempt < 100 && !done; ++attempt) {
            const int cls = rng.bernoulli(spec.drone_prob) ? 0 : 1;
            double hi = spec.scale_max;
            if (rng.bernoulli(spec.small_bias)) hi = std::min(hi, 26.0);
            const double scale = rng.uniform(spec.scale_min, std::min(hi, spec.scale_max));
            const double theta = rng.uniform(0.0, 2.0 * kPi);
            const double color = rng.bernoulli(0.75) ? rng.uniform(0.01, 0.20)
                                                     : rng.uniform(0.80, 0.99);
            double cx, cy;
            if (rng.bernoulli(spec.boundary_prob)) {
                // hang partially off one random edge
                const int edge = rng.uniform_int(0, 3);
                const double along = rng.uniform(0.0, 1.0);
                const double out = rng.uniform(0.0, 0.45) * scale;
                cx = edge == 0 ? -out : edge == 1 ? W + out : along * W;
                cy = edge == 2 ? -out : edge == 3 ? H + out : along * H;
            } else {
                const double m = scale * 0.5 + 1.0;
                cx = rng.uniform(m, W - m);
                cy = rng.uniform(m, H - m);
            }
            const bool blur = rng.bernoulli(spec.blur_prob);
            int blur_dx = 0, blur_dy = 0, blur_len = 0;
            if (blur) {
                static constexpr int kDirs[8][2] = {{1, 0},  {-1, 0}, {0, 1},  {0, -1},
                                                    {1, 1},  {1, -1}, {-1, 1}, {-1, -1}};
                const int d = rng.uniform_int(0, 7);
                blur_dx = kDirs[d][0];
                blur_dy = kDirs[d][1];
                blur_len = rng.uniform_int(3, 5);
            }
            const bool occlude = rng.bernoulli(spec.occlusion_prob);
            const double occ_frac = occlude ? rng.uniform(0.15, 0.40) : 0.0;
            const bool occ_vertical = occlude && rng.bernoulli(0.5);
            const double occ_side = occlude ? rng.uniform(0.0, 1.0) : 0.0;

            auto patch = detail::render_silhouette(cls, cx, cy, scale, theta,
                                                   blur ? blur_len : 0);
            if (blur) detail::motion_blur(patch, blur_dx, blur_dy, blur_len);
            const long full = detail::count_solid(patch);
            if (full < 4) continue;  // degenerate at this scale/rotation, redraw

            if (occlude) {
                // erase a strip to background; cap the hidden fraction
                auto raw = detail::tight_box(patch, W, H, 0.5, false);
                detail::Patch trial = patch;
                const int span = occ_vertical ? raw.x1 - raw.x0 + 1 : raw.y1 - raw.y0 + 1;
                const int width = std::max(1, static_cast<int>(span * occ_frac));
                const int lo = occ_vertical ? raw.x0 : raw.y0;
                const int start = lo + static_cast<int>(occ_side * (span - width));
                for (int j = 0; j < trial.h; ++j)
                    for (int i = 0; i < trial.w; ++i) {
                        const int v = occ_vertical ? trial.x0 + i : trial.y0 + j;
                        if (v >= start && v < start + width)
                            trial.alpha[static_cast<std::size_t>(j) * trial.w + i] = 0.0;
                    }
                if (detail::count_solid(trial) >= static_cast<long>(0.55 * full))
                    patch = std::move(trial);
            }

            const long solid = detail::count_solid(patch);
            auto box = detail::tight_box(patch, W, H);
            long visible = 0;
            for (int j = 0; j < patch.h; ++j)
                for (int i = 0; i < patch.w; ++i) {
                    const int x = patch.x0 + i, y = patch.y0 + j;
                    if (x >= 0 && x < W && y >= 0 && y < H &&
                        patch.alpha[static_cast<std::size_t>(j) * patch.w + i] >= 0.5)
                        ++visible;
                }
            if (box.empty() || visible < 4 || visible * 4 < solid) continue;

            bool overlaps = false;
            for (const auto& other : placed) {
                const long ix = std::min(box.x1, other.x1) - std::max(box.x0, other.x0) + 1;
                const long iy = std::min(box.y1, other.y1) - std::max(box.y0, other.y0) + 1;
                const long inter = std::max(0L, ix) * std::max(0L, iy);
                if (inter * 10 > 9 * std::min(box.area(), other.area())) {
                    overlaps = true;
                    break;
                }
            }
            if (overlaps) continue;

            for (int j = 0; j < patch.h; ++j)
                for (int i = 0; i < patch.w; ++i) {
                    const int x = patch.x0 + i, y = patch.y0 + j;
                    if (x < 0 || x >= W || y < 0 || y >= H) continue;
                    const double a = patch.alpha[static_cast<std::size_t>(j) * patch.w + i];
                    if (a <= 0.0) continue;
                    double& px = canvas[static_cast<std::size_t>(y) * W + x];
                    px = (1.0 - a) * px + a * color;
                }
            placed.push_back(box);
            BoundingBox label;
            label.class_id = cls;
            label.cx = (box.x0 + box.x1 + 1) * 0.5 / W;
            label.cy = (box.y0 + box.y1 + 1) * 0.5 / H;
            label.w = static_cast<double>(box.x1 - box.x0 + 1) / W;
            label.h = static_cast<double>(box.y1 - box.y0 + 1) / H;
            sample.labels.push_back(label);
            done = true;
        }
        if (!done)
            fail("generate_scene: could not place object " + std::to_string(obj) +
                 " without >90% overlap after 100 retries");
    }

    for (double& v : canvas) v = std::clamp(v + rng.normal() * 0.015, 0.0, 1.0);

    sample.image = Tensor<T>(Shape{1, spec.channels, H, W});
    for (int c = 0; c < spec.channels; ++c)
        for (std::size_t i = 0; i < canvas.size(); ++i)
            sample.image.data()[c * canvas.size() + i] = static_cast<T>(canvas[i]);
    return sample;
}

// Per-sample seeds derive from the base seed by index, so any thread split
// produces the same dataset.
template <typename T>
std::vector<Sample<T>> generate_dataset(const SceneSpec& spec, int count,
                                        std::uint64_t base_seed, int threads = 1) {
    spec.validate();
    require(count >= 0, "negative sample count");
    std::vector<Sample<T>> out(count);
    auto worker = [&](int begin, int end) {
        for (int k = begin; k < end; ++k) {
            out[k] = generate_scene<T>(spec, base_seed + static_cast<std::uint64_t>(k));
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%06d", k);
            out[k].id = buf;
        }
    };
    if (threads <= 1 || count < 2) {
        worker(0, count);
    } else {
        const int nt = std::min(threads, count);
        std::vector<std::thread> pool;
        const int chunk = (count + nt - 1) / nt;
        for (int t = 0; t < nt; ++t) {
            const int b = t * chunk, e = std::min(count, b + chunk);
            if (b < e) pool.emplace_back(worker, b, e);
        }
        for (auto& th : pool) th.join();
    }
    return out;
}

// ---------------------------------------------------------------------------
// PPM image I/O (P5 grayscale, P6 rgb)
// ---------------------------------------------------------------------------

template <typename T>
void write_ppm(const std::string& path, const Tensor<T>& image) {
    const Shape s = image.shape();
    require(s.n == 1 && (s.c == 1 || s.c == 3), "write_ppm wants (1,1,H,W) or (1,3,H,W)");
    std::ofstream os(path, std::ios::binary);
    require(static_cast<bool>(os), "cannot open " + path + " for writing");
    os << (s.c == 1 ? "P5" : "P6") << "\n" << s.w << " " << s.h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(s.w) * s.c);
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x)
            for (int c = 0; c < s.c; ++c) {
                const double v = static_cast<double>(
                    image.data()[c * plane + static_cast<std::size_t>(y) * s.w + x]);
                row[static_cast<std::size_t>(x) * s.c + c] = static_cast<unsigned char>(
                    std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            }
        os.write(reinterpret_cast<const char*>(row.data()),
                 static_cast<std::streamsize>(row.size()));
    }
    require(static_cast<bool>(os), "write failed for " + path);
}

namespace detail {

inline int ppm_token(std::istream& is, const std::string& path) {
    // skip whitespace and '#' comments, then read one unsigned integer
    int ch = is.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = is.get();
        } else if (std::isspace(ch)) {
            ch = is.get();
        } else {
            break;
        }
    }
    require(ch != EOF && std::isdigit(ch), path + ": malformed ppm header");
    int v = 0;
    while (ch != EOF && std::isdigit(ch)) {
        v = v * 10 + (ch - '0');
        ch = is.get();
    }
    require(ch == EOF || std::isspace(ch), path + ": malformed ppm header");
    return v;
}

}  // namespace detail

template <typename T>
Tensor<T> read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), "cannot open " + path);
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    require(m0 == 'P' && (m1 == '5' || m1 == '6'), path + ": not a binary ppm (P5/P6)");
    const int channels = m1 == '5' ? 1 : 3;
    const int w = detail::ppm_token(is, path);
    const int h = detail::ppm_token(is, path);
    const int maxval = detail::ppm_token(is, path);
    require(w > 0 && h > 0 && maxval == 255, path + ": unsupported ppm dimensions/maxval");
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    require(static_cast<bool>(is), path + ": truncated pixel data");
    Tensor<T> img(Shape{1, channels, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c)
                img.data()[c * plane + static_cast<std::size_t>(y) * w + x] =
                    static_cast<T>(raw[(static_cast<std::size_t>(y) * w + x) * channels + c] /
                                   255.0);
    return img;
}

// ---------------------------------------------------------------------------
// YOLO label I/O
// ---------------------------------------------------------------------------

inline void write_labels(const std::string& path, const std::vector<BoundingBox>& boxes) {
    std::ofstream os(path);
    require(static_cast<bool>(os), "cannot open " + path + " for writing");
    char line[128];
    for (const BoundingBox& b : boxes) {
        std::snprintf(line, sizeof(line), "%d %.6f %.6f %.6f %.6f\n", b.class_id, b.cx,
                      b.cy, b.w, b.h);
        os << line;
    }
    require(static_cast<bool>(os), "write failed for " + path);
}

inline std::vector<BoundingBox> read_labels(const std::string& path, int num_classes = 2) {
    std::ifstream is(path);
    require(static_cast<bool>(is), "cannot open " + path);
    std::vector<BoundingBox> boxes;
    std::string line;
    int lineno = 0;
    auto bad = [&](const std::string& reason) {
        fail(path + ":" + std::to_string(lineno) + ": " + reason);
    };
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        long cls;
        double f[4];
        if (!(ss >> cls >> f[0] >> f[1] >> f[2] >> f[3])) bad("expected 5 numeric fields");
        std::string extra;
        if (ss >> extra) bad("trailing tokens after 5 fields");
        if (cls < 0 || cls >= num_classes)
            bad("class id " + std::to_string(cls) + " outside [0," +
                std::to_string(num_classes) + ")");
        for (double v : f)
            if (!std::isfinite(v)) bad("non-finite value");
        if (f[0] < 0.0 || f[0] > 1.0 || f[1] < 0.0 || f[1] > 1.0)
            bad("center outside [0,1]");
        if (f[2] <= 0.0 || f[2] > 1.0 || f[3] <= 0.0 || f[3] > 1.0)
            bad("size outside (0,1]");
        BoundingBox b;
        b.class_id = static_cast<int>(cls);
        b.cx = f[0];
        b.cy = f[1];
        b.w = f[2];
        b.h = f[3];
        boxes.push_back(b);
    }
    return boxes;
}

// ---------------------------------------------------------------------------
// splits
// ---------------------------------------------------------------------------

struct SplitSizes {
    std::size_t train = 0, val = 0, test = 0;
};

// floor for train and val, remainder to test; checked against hand-worked
// examples in the tests
inline SplitSizes split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
    double sum = 0;
    for (double r : ratios) {
        require(r >= 0.0, "split ratios must be non-negative");
        sum += r;
    }
    require(std::abs(sum - 1.0) <= 1e-9, "split ratios must sum to 1");
    SplitSizes s;
    s.train = static_cast<std::size_t>(std::floor(ratios[0] * static_cast<double>(n)));
    s.val = static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(n)));
    s.test = n - s.train - s.val;
    const std::array<std::size_t, 3> counts{s.train, s.val, s.test};
    for (int i = 0; i < 3; ++i)
        require(!(ratios[i] > 0.0 && counts[i] == 0 && n > 0),
                "split ratio " + std::to_string(ratios[i]) + " produced an empty split");
    return s;
}

inline std::array<std::vector<int>, 3> split_indices(std::size_t n,
                                                     const std::array<double, 3>& ratios,
                                                     std::uint64_t seed) {
    const SplitSizes sz = split_sizes(n, ratios);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[rng.uniform_int(0, static_cast<int>(i) - 1)]);
    std::array<std::vector<int>, 3> out;
    out[0].assign(idx.begin(), idx.begin() + sz.train);
    out[1].assign(idx.begin() + sz.train, idx.begin() + sz.train + sz.val);
    out[2].assign(idx.begin() + sz.train + sz.val, idx.end());
    return out;
}

// ---------------------------------------------------------------------------
// census
// ---------------------------------------------------------------------------

struct DatasetStats {
    std::size_t images = 0, boxes = 0, empty_images = 0;
    std::vector<std::size_t> per_class;
    std::array<std::size_t, 4> per_bin{};

    std::string table() const {
        std::ostringstream os;
        os << "images          " << images << "\n";
        os << "empty images    " << empty_images << "\n";
        os << "objects         " << boxes << "\n";
        for (std::size_t c = 0; c < per_class.size(); ++c)
            os << "  class " << c << (c == 0 ? " (drone)" : c == 1 ? " (bird) " : "        ")
               << "      " << per_class[c] << "\n";
        for (int b = 0; b < 4; ++b) {
            std::string name = size_bin_name(static_cast<SizeBin>(b));
            name.resize(16, ' ');
            os << "  " << name << per_bin[b] << "\n";
        }
        return os.str();
    }
};

template <typename T>
DatasetStats dataset_stats(const std::vector<Sample<T>>& samples, int num_classes,
                           int image_size) {
    DatasetStats st;
    st.images = samples.size();
    st.per_class.assign(static_cast<std::size_t>(num_classes), 0);
    for (const auto& s : samples) {
        if (s.labels.empty()) ++st.empty_images;
        for (const BoundingBox& b : s.labels) {
            ++st.boxes;
            b.validate(num_classes);
            ++st.per_class[static_cast<std::size_t>(b.class_id)];
            ++st.per_bin[static_cast<int>(size_bin(b, image_size))];
        }
    }
    return st;
}

// ---------------------------------------------------------------------------
// dataset directory layout: images/{id}.ppm, labels/{id}.txt,
// splits/{train,val,test}.txt
// ---------------------------------------------------------------------------

template <typename T>
void save_dataset(const std::string& dir, const std::vector<Sample<T>>& samples) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "labels");
    for (const auto& s : samples) {
        require(!s.id.empty(), "sample without an id");
        write_ppm((fs::path(dir) / "images" / (s.id + ".ppm")).string(), s.image);
        write_labels((fs::path(dir) / "labels" / (s.id + ".txt")).string(), s.labels);
    }
}

template <typename T>
void write_split_lists(const std::string& dir, const std::vector<Sample<T>>& samples,
                       const std::array<std::vector<int>, 3>& indices) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "splits");
    const std::array<const char*, 3> names{"train", "val", "test"};
    for (int k = 0; k < 3; ++k) {
        std::ofstream os(fs::path(dir) / "splits" / (std::string(names[k]) + ".txt"));
        require(static_cast<bool>(os), "cannot write split list");
        for (int i : indices[k]) os << samples[i].id << "\n";
    }
}

inline std::vector<std::string> read_split_list(const std::string& dir,
                                                const std::string& split) {
    namespace fs = std::filesystem;
    const std::string path = (fs::path(dir) / "splits" / (split + ".txt")).string();
    std::ifstream is(path);
    require(static_cast<bool>(is), "cannot open " + path +
                                       " (expected splits/{train,val,test}.txt in the "
                                       "dataset directory)");
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) ids.push_back(line);
    return ids;
}

template <typename T>
std::vector<Sample<T>> load_samples(const std::string& dir,
                                    const std::vector<std::string>& ids,
                                    int num_classes = 2) {
    namespace fs = std::filesystem;
    std::vector<Sample<T>> out;
    out.reserve(ids.size());
    for (const std::string& id : ids) {
        Sample<T> s;
        s.id = id;
        s.image = read_ppm<T>((fs::path(dir) / "images" / (id + ".ppm")).string());
        s.labels = read_labels((fs::path(dir) / "labels" / (id + ".txt")).string(),
                               num_classes);
        out.push_back(std::move(s));
    }
    return out;
}

template <typename T>
std::vector<Sample<T>> load_split(const std::string& dir, const std::string& split,
                                  int num_classes = 2) {
    return load_samples<T>(dir, read_split_list(dir, split), num_classes);
}

}  // namespace brd
