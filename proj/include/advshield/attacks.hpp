#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advshield/diffnet.hpp"

namespace advshield {

enum class AttackMethod { Fgsm, Pgd, Cw };

AttackMethod attack_method_from_string(const std::string& s);
std::string to_string(AttackMethod m);

struct AttackSpec {
    AttackMethod method = AttackMethod::Fgsm;
    float eps = 0.0f;          // L-inf budget, pixel units (FGSM/PGD)
    int steps = 1;
    float step_size = 0.0f;    // PGD; defaults to eps/4 when <= 0
    float cw_constant = 1.0f;
    float cw_lr = 0.01f;
    bool random_start = false;
    std::uint64_t seed = 0;

    void validate() const;
};

struct AdvBatch {
    Batch originals;           // with true labels
    Batch perturbed;           // same labels carried over
    std::vector<int> predicted;      // predictions on perturbed inputs
    std::vector<std::uint8_t> success;   // predicted != true label
    float eps = 0.0f;          // budget used (0 means unbounded, C&W)

    int success_count() const {
        int n = 0;
        for (auto s : success) n += s;
        return n;
    }
};

AdvBatch fgsm(const DiffNet& net, const Batch& batch, float eps);
AdvBatch pgd(const DiffNet& net, const Batch& batch, const AttackSpec& spec);
AdvBatch cw(const DiffNet& net, const Batch& batch, const AttackSpec& spec);

AdvBatch craft(const DiffNet& net, const Batch& batch, const AttackSpec& spec);

// Keep only samples whose prediction on the perturbed input differs from the
// true label.
AdvBatch filter_successful(const AdvBatch& adv, const DiffNet& net);

void save_adv_batch(const AdvBatch& adv, const std::string& tensor_path, const std::string& manifest_csv_path);
AdvBatch load_adv_batch(const DiffNet& net, const std::string& tensor_path);

} // namespace advshield
