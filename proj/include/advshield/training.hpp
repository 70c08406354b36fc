#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advshield/attacks.hpp"
#include "advshield/diffnet.hpp"
#include "advshield/rng.hpp"

namespace advshield {

enum class Regime { Nt, At, Ssat };

Regime regime_from_string(const std::string& s);
std::string to_string(Regime r);

struct TrainConfig {
    Regime regime = Regime::Nt;
    int epochs = 10;
    int batch_size = 64;
    float lr = 0.1f;
    float lambda = 5.0f;                  // unsupervised loss weight
    float train_eps_lo = 0.001f;
    float train_eps_hi = 0.003f;
    float adv_fraction = 0.5f;            // adversarial share of each mini-batch
    AttackMethod craft_method = AttackMethod::Fgsm;
    int warmup_epochs = 2;                // clean epochs before adversarial crafting (AT/SSAT)
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpochTrace {
    int epoch;
    double sup_loss;
    double unsup_loss;
    double total_loss;
};

struct PseudoLabeledSet {
    Batch data;     // with pseudo-labels assigned, frozen
};

// Argmax labels from the current net; ties break toward the lowest class.
PseudoLabeledSet pseudo_label(const DiffNet& net, const Batch& unlabeled);

// Keeps the first ceil(B*(1-frac)) samples clean and replaces the rest with
// FGSM versions of themselves, per-sample eps ~ U[lo, hi].
Batch adversarial_minibatch(const DiffNet& net, const Batch& labeled_batch,
                            float eps_lo, float eps_hi, float adv_fraction, Rng& rng);

struct TrainResult {
    DiffNet net;
    std::vector<EpochTrace> trace;
};

TrainResult train(const DiffNet& initial, const Batch& labeled,
                  const std::optional<Batch>& unlabeled, const TrainConfig& cfg);

std::string trace_to_csv(const std::vector<EpochTrace>& trace);

} // namespace advshield
