#pragma once

#include <optional>
#include <vector>

#include "advshield/attacks.hpp"
#include "advshield/uad.hpp"

namespace advshield {

struct RiskWeights {
    double r_cln_prd = 1.0;
    double r_cln_uad = 1.0;
    double r_adv_prd = 1.0;

    void validate() const {
        if (r_cln_prd < 0 || r_cln_uad < 0 || r_adv_prd < 0)
            throw ConfigError("risk weights must be nonnegative");
    }
};

struct RiskLedger {
    long n_cln_inc = 0;   // clean, accepted but misclassified
    long n_cln_rej = 0;   // clean, rejected by the detector
    long n_adv_inc = 0;   // adversarial, accepted but misclassified
    long n = 0;           // normalizer (clean evaluation count)
};

struct DetectionScore {
    double score = 0.0;        // higher = more anomalous
    bool is_adversarial = false;
    int predicted_class = -1;
};

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

// Average precision over the descending-score ranking, ties grouped,
// adversarial samples as the positive class.
double average_precision(const std::vector<DetectionScore>& scores);

struct AuprcReport {
    std::vector<double> per_class;     // indexed by predicted class; NaN when undefined
    double macro = 0.0;                // mean over defined classes
};

AuprcReport auprc_by_class(const std::vector<DetectionScore>& scores, int num_classes);

// R(f) = w_cln_prd * N_cln_inc + w_adv_prd * N_adv_inc, averaged by N.
double risk_without_uad(const RiskLedger& ledger, const RiskWeights& w);

// R(f,g) = w_cln_prd * N_cln_inc + w_cln_uad * N_cln_rej + w_adv_prd * N_adv_inc, averaged by N.
double risk_with_uad(const RiskLedger& ledger, const RiskWeights& w);

// Runs (defended) inference over the clean evaluation set and the adversarial
// batch and fills the counts. Without a detector, N_cln_rej is 0.
RiskLedger risk_ledger_from_run(const DiffNet& net, const UadModel* uad,
                                const Batch& clean_eval, const AdvBatch& adv_eval);

// Detection scores (negative log-likelihood under the predicted class GMM)
// for the pooled clean + adversarial evaluation sets.
std::vector<DetectionScore> detection_scores(const DiffNet& net, const UadModel& uad,
                                             const Batch& clean_eval, const Batch& adv_eval);

} // namespace advshield
