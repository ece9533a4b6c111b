#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "birdrone/common.hpp"
#include "birdrone/tensor.hpp"

namespace brd {

// Axis-aligned box in normalized image coordinates.
struct BoundingBox {
    int class_id = 0;  // 0 = drone, 1 = bird
    double cx = 0, cy = 0, w = 0, h = 0;

    double x1() const { return cx - w / 2; }
    double y1() const { return cy - h / 2; }
    double x2() const { return cx + w / 2; }
    double y2() const { return cy + h / 2; }
    double area() const { return w * h; }

    void validate(int num_classes) const {
        require(class_id >= 0 && class_id < num_classes,
                "class_id " + std::to_string(class_id) + " out of range [0," +
                    std::to_string(num_classes) + ")");
        require(cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0,
                "box center out of [0,1]");
        require(w > 0.0 && w <= 1.0 && h > 0.0 && h <= 1.0, "box size out of (0,1]");
        require(x2() > 0.0 && x1() < 1.0 && y2() > 0.0 && y1() < 1.0,
                "box does not intersect the image");
    }
};

struct Detection {
    BoundingBox box;
    double confidence = 0;  // objectness times class probability, in [0,1]
};

template <typename T>
struct Sample {
    Tensor<T> image;  // (1, C, H, W), values in [0,1]
    std::vector<BoundingBox> labels;
    std::string id;
};

inline double iou(const BoundingBox& a, const BoundingBox& b) {
    const double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
    const double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

// Size bins over pixel extents. Edges are lower-bin inclusive: a 32x32 box is
// small, a 96-px side is still medium.
enum class SizeBin { extremely_small = 0, small = 1, medium = 2, large = 3 };

inline const char* size_bin_name(SizeBin b) {
    switch (b) {
        case SizeBin::extremely_small: return "extremely_small";
        case SizeBin::small: return "small";
        case SizeBin::medium: return "medium";
        default: return "large";
    }
}

inline SizeBin size_bin(const BoundingBox& box, int image_size) {
    const double w = box.w * image_size;
    const double h = box.h * image_size;
    if (w < 20.0 && h < 20.0) return SizeBin::extremely_small;
    if (w > 96.0 || h > 96.0) return SizeBin::large;
    if (std::max(w, h) > 32.0) return SizeBin::medium;
    return SizeBin::small;
}

}  // namespace brd
