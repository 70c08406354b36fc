#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advshield/batch.hpp"

namespace advshield {

struct DatasetManifest {
    std::string name;
    std::vector<std::string> class_names;
    Shape dims;
    std::vector<int> split_counts;     // per split, total samples
    std::vector<std::string> split_names;
    std::string pixel_note = "pixels scaled to [0,1]";
    std::uint64_t seed = 0;

    std::string to_json() const;
    static DatasetManifest from_json(const std::string& text);
};

struct SynthSpec {
    int num_classes = 3;
    Shape dims{8, 8, 1};
    double noise_sigma = 0.1;
    double contrast = 0.3;     // template amplitude around mid-gray
    int samples_per_class = 500;
    std::uint64_t seed = 0;

    void validate() const;
};

// Binary tensor container ("ADTN"): dtype f32, explicit dims, optional label
// block. Shared by datasets and adversarial archives.
void save_batch(const Batch& batch, const std::string& path);
Batch load_batch(const std::string& path);

// Central crop, then optional 0..255 -> [0,1] scaling.
Batch preprocess(const Batch& images, int crop, bool scale);

struct Splits {
    Batch train;               // labeled
    Batch unlabeled;           // labels stripped
    std::vector<int> unlabeled_audit;   // sealed true labels of the unlabeled split
    Batch test;                // labeled
};

Splits split_balanced(const Batch& pool, int n_train, int n_unlabeled, int n_test,
                      int num_classes, std::uint64_t seed);

// Class template + i.i.d. Gaussian pixel noise, clipped to [0,1].
Batch generate_synthetic(const SynthSpec& spec);

// Deterministic per-class template image (no noise).
std::vector<float> synth_template(const SynthSpec& spec, int class_id);

// One row per image: label,pix0,pix1,... with pixels either already in [0,1]
// or integers in 0..255 (scaled when any value exceeds 1).
Batch import_csv_pixels(const std::string& path, const Shape& dims);

} // namespace advshield
