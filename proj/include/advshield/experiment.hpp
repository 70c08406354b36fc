#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "advshield/data.hpp"
#include "advshield/evaluation.hpp"
#include "advshield/training.hpp"
#include "advshield/uad.hpp"

namespace advshield {

// Flat key=value experiment description; see parse_key_values for the syntax.
struct ExperimentPlan {
    std::string dataset_dir;
    std::string out_dir;
    std::uint64_t seed = 0;

    std::vector<Regime> regimes{Regime::Nt, Regime::Ssat};
    std::vector<AttackMethod> methods{AttackMethod::Pgd};
    std::vector<float> eps_grid{0.0f, 0.1f};
    int attack_steps = 10;
    float attack_step_size = 0.0f;        // <= 0: eps/4
    float cw_constant = 1.0f;
    int cw_steps = 100;
    float cw_lr = 0.01f;

    std::vector<LayerSpec> hidden{LayerSpec::dense(32), LayerSpec::dense(16)};
    TrainConfig train;                    // regime field is overridden per run

    int uad_components = 1;
    double uad_diag_reg = -1.0;           // auto
    double percentile = 5.0;
    RiskWeights weights;

    void validate() const;
    std::string canonical() const;        // stable serialization used for hashing
    std::uint64_t config_hash() const;

    static ExperimentPlan from_file(const std::string& path);
    static ExperimentPlan from_key_values(const std::map<std::string, std::string>& kv);
};

std::map<std::string, std::string> parse_key_values(const std::string& text);

struct RunRecord {
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> artifacts;
    std::vector<std::pair<std::string, double>> timings_sec;
    std::string failed_stage;             // empty on success

    std::string to_json() const;
};

// train -> attack grid -> fit/calibrate UAD -> reports. Stages are keyed by
// their output artifact and skipped when it already exists.
RunRecord run_experiment(const ExperimentPlan& plan);

// Per (regime, method) accuracy-vs-eps CSVs assembled from the cell records
// written by run_experiment.
void emit_curves(const std::string& records_dir, const std::string& out_dir);

// 2-D principal-component projection of penultimate features; one CSV row per
// sample: x,y,true_class,predicted_class,is_adversarial.
void project_features(const DiffNet& net, const Batch& clean, const Batch* adv,
                      const std::string& out_csv);

} // namespace advshield
