#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "advshield/errors.hpp"

namespace advshield {

struct Shape {
    int height = 1;
    int width = 1;
    int channels = 1;

    int size() const { return height * width * channels; }
    bool operator==(const Shape&) const = default;
};

// A batch of images in [0,1], row-major (H, W, C) per sample, with optional
// integer labels. Labels may be true labels or pseudo-labels.
struct Batch {
    Shape dims;
    int count = 0;
    std::vector<float> x;                       // count * dims.size()
    std::optional<std::vector<int>> y;

    int sample_size() const { return dims.size(); }
    const float* sample(int i) const { return x.data() + static_cast<std::size_t>(i) * dims.size(); }
    float* sample(int i) { return x.data() + static_cast<std::size_t>(i) * dims.size(); }

    bool labeled() const { return y.has_value(); }

    void validate(int num_classes = -1) const {
        if (count < 1) throw InputError("batch: empty batch");
        if (x.size() != static_cast<std::size_t>(count) * dims.size())
            throw InputError("batch: tensor size does not match count * dims");
        for (std::size_t i = 0; i < x.size(); ++i) {
            float v = x[i];
            if (!(v >= 0.0f && v <= 1.0f))
                throw DataFormatError("batch: pixel out of [0,1] at flat index " + std::to_string(i));
        }
        if (y) {
            if (y->size() != static_cast<std::size_t>(count))
                throw InputError("batch: label count mismatch");
            if (num_classes > 0) {
                for (int v : *y) {
                    if (v < 0 || v >= num_classes)
                        throw InputError("batch: label " + std::to_string(v) + " out of range");
                }
            }
        }
    }

    Batch select(const std::vector<int>& idx) const {
        Batch out;
        out.dims = dims;
        out.count = static_cast<int>(idx.size());
        out.x.reserve(idx.size() * dims.size());
        for (int i : idx)
            out.x.insert(out.x.end(), sample(i), sample(i) + dims.size());
        if (y) {
            std::vector<int> ly;
            ly.reserve(idx.size());
            for (int i : idx) ly.push_back((*y)[i]);
            out.y = std::move(ly);
        }
        return out;
    }
};

} // namespace advshield
