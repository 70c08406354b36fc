#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advshield/diffnet.hpp"

namespace advshield {

// Per-class Gaussian mixture over penultimate features, full covariance.
struct ClassGmm {
    int class_id = 0;
    int components = 1;           // J
    int dim = 0;                  // n
    std::vector<double> weights;  // J
    std::vector<double> means;    // J * n
    std::vector<double> covs;     // J * n * n, row-major, symmetric
    double diag_reg = 0.0;

    const double* mean(int j) const { return means.data() + static_cast<std::size_t>(j) * dim; }
    const double* cov(int j) const { return covs.data() + static_cast<std::size_t>(j) * dim * dim; }
};

struct UadModel {
    std::vector<ClassGmm> gmms;          // one per class, indexed by class id
    std::vector<double> thresholds;      // log-likelihood units, per class
    bool calibrated = false;
    std::uint64_t model_hash = 0;        // source network parameter hash
    std::string fit_date;                // optional provenance note

    int num_classes() const { return static_cast<int>(gmms.size()); }
};

struct FeatureMatrix {
    int rows = 0;
    int dim = 0;
    std::vector<double> z;               // rows * dim
    std::vector<int> labels;             // source class labels (may be empty)

    const double* row(int r) const { return z.data() + static_cast<std::size_t>(r) * dim; }
};

struct EmOptions {
    int components = 1;
    double diag_reg = -1.0;              // < 0: auto, 1e-6 * mean diagonal variance
    double tol = 1e-6;
    int max_iter = 200;
    std::uint64_t seed = 0;
};

struct EmResult {
    ClassGmm gmm;
    std::vector<double> loglik_trace;    // per-iteration mean log-likelihood
};

EmResult fit_gmm_em(const FeatureMatrix& rows, const EmOptions& opts, int class_id = 0);

double gmm_log_likelihood(const ClassGmm& gmm, const std::vector<double>& z);

FeatureMatrix extract_features(const DiffNet& net, const Batch& batch);

UadModel fit_uad(const DiffNet& net, const Batch& clean_train, const EmOptions& opts);

// tau_i = p-th percentile of held-out clean log-likelihoods among samples the
// net predicts as class i. About p% of held-out clean samples end up rejected.
UadModel calibrate_thresholds(UadModel uad, const DiffNet& net, const Batch& held_out_clean,
                              double percentile);

struct InferenceOutcome {
    bool rejected = false;
    int label = -1;
    double score = 0.0;
};

InferenceOutcome defended_inference(const DiffNet& net, const UadModel& uad, const Batch& single);
std::vector<InferenceOutcome> defended_inference_batch(const DiffNet& net, const UadModel& uad,
                                                       const Batch& batch);

void save_detector(const UadModel& uad, const std::string& path);
UadModel load_detector(const std::string& path);

} // namespace advshield
