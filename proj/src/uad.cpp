#include "advshield/uad.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "advshield/io.hpp"
#include "advshield/rng.hpp"

namespace advshield {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Cholesky of the regularized covariance; throws naming the component.
Eigen::LLT<Mat> component_llt(const ClassGmm& gmm, int j) {
    const int n = gmm.dim;
    Mat sigma = Eigen::Map<const Mat>(gmm.cov(j), n, n);
    sigma.diagonal().array() += gmm.diag_reg;
    Eigen::LLT<Mat> llt(sigma);
    bool ok = llt.info() == Eigen::Success;
    // LLT can "succeed" on a singular matrix with zeros on the factor
    // diagonal; treat that as a collapsed component too
    for (int i = 0; ok && i < n; ++i) {
        double d = llt.matrixLLT()(i, i);
        if (!(d > 0.0) || !std::isfinite(d)) ok = false;
    }
    if (!ok)
        throw NumericError("gmm: covariance of component " + std::to_string(j) +
                           " (class " + std::to_string(gmm.class_id) + ") is not positive definite");
    return llt;
}

struct ComponentScorer {
    Eigen::LLT<Mat> llt;
    Vec mean;
    double log_norm;   // -0.5 * (n log 2pi + logdet)

    double logpdf(const Eigen::Ref<const Vec>& z) const {
        Vec d = llt.matrixL().solve(z - mean);
        return log_norm - 0.5 * d.squaredNorm();
    }
};

std::vector<ComponentScorer> build_scorers(const ClassGmm& gmm) {
    std::vector<ComponentScorer> out;
    out.reserve(gmm.components);
    for (int j = 0; j < gmm.components; ++j) {
        ComponentScorer s{component_llt(gmm, j),
                          Eigen::Map<const Vec>(gmm.mean(j), gmm.dim), 0.0};
        double logdet = 0.0;
        const Mat& packed = s.llt.matrixLLT();   // L in the lower triangle
        for (int i = 0; i < gmm.dim; ++i) logdet += 2.0 * std::log(packed(i, i));
        s.log_norm = -0.5 * (gmm.dim * kLog2Pi + logdet);
        out.push_back(std::move(s));
    }
    return out;
}

double mixture_loglik(const ClassGmm& gmm, const std::vector<ComponentScorer>& scorers,
                      const Eigen::Ref<const Vec>& z, std::vector<double>* log_terms = nullptr) {
    std::vector<double> terms(gmm.components);
    for (int j = 0; j < gmm.components; ++j) {
        double lw = gmm.weights[j] > 0.0 ? std::log(gmm.weights[j])
                                         : -std::numeric_limits<double>::infinity();
        terms[j] = lw + scorers[j].logpdf(z);
    }
    double m = *std::max_element(terms.begin(), terms.end());
    if (!std::isfinite(m)) return m;
    double sum = 0.0;
    for (double t : terms) sum += std::exp(t - m);
    if (log_terms) *log_terms = terms;
    return m + std::log(sum);
}

} // namespace

EmResult fit_gmm_em(const FeatureMatrix& rows, const EmOptions& opts, int class_id) {
    const int N = rows.rows;
    const int n = rows.dim;
    const int J = opts.components;
    if (J < 1) throw ConfigError("gmm: components must be >= 1");
    if (n < 1) throw ConfigError("gmm: feature dim must be >= 1");
    if (N < J) throw ConfigError("gmm: need at least " + std::to_string(J) +
                                 " samples, got " + std::to_string(N));
    if (opts.max_iter < 1) throw ConfigError("gmm: max_iter must be >= 1");

    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        Z(rows.z.data(), N, n);

    Vec grand_mean = Z.colwise().mean();
    Mat centered = Z.rowwise() - grand_mean.transpose();
    Mat grand_cov = (centered.transpose() * centered) / static_cast<double>(N);

    double reg = opts.diag_reg;
    if (reg < 0.0) {
        double mean_var = grand_cov.diagonal().mean();
        reg = std::max(1e-6 * mean_var, 1e-12);
    }

    EmResult res;
    ClassGmm& g = res.gmm;
    g.class_id = class_id;
    g.components = J;
    g.dim = n;
    g.diag_reg = reg;
    g.weights.assign(J, 1.0 / J);
    g.means.resize(static_cast<std::size_t>(J) * n);
    g.covs.resize(static_cast<std::size_t>(J) * n * n);

    // init: J distinct seeded data points as means, grand covariance everywhere
    Rng rng(opts.seed ^ 0x6d6d67ULL);
    std::vector<int> pick(N);
    for (int i = 0; i < N; ++i) pick[i] = i;
    shuffle_indices(pick, rng);
    for (int j = 0; j < J; ++j) {
        Eigen::Map<Vec>(g.means.data() + static_cast<std::size_t>(j) * n, n) = Z.row(pick[j]);
        Eigen::Map<Mat>(g.covs.data() + static_cast<std::size_t>(j) * n * n, n, n) = grand_cov;
    }

    Mat resp(N, J);
    double prev_ll = -std::numeric_limits<double>::infinity();

    for (int iter = 0; ; ++iter) {
        // E-step. The iterations run unregularized so the loop is textbook EM
        // with a non-decreasing likelihood; the configured diag_reg only steps
        // in when a covariance turns numerically singular mid-fit (and it
        // stays on the stored model for downstream scoring).
        std::vector<std::vector<ComponentScorer>> sc(1);
        ClassGmm exact = g;
        exact.diag_reg = 0.0;
        try {
            sc[0] = build_scorers(exact);
        } catch (const NumericError&) {
            sc[0] = build_scorers(g);
        }
        double ll_sum = 0.0;
        for (int s = 0; s < N; ++s) {
            std::vector<double> terms;
            double ll = mixture_loglik(g, sc[0], Z.row(s).transpose(), &terms);
            ll_sum += ll;
            for (int j = 0; j < J; ++j)
                resp(s, j) = std::exp(terms[j] - ll);
        }
        double mean_ll = ll_sum / N;
        if (!std::isfinite(mean_ll)) throw NumericError("gmm: non-finite log-likelihood");
        res.loglik_trace.push_back(mean_ll);

        if (iter > 0 && (mean_ll - prev_ll < opts.tol || iter >= opts.max_iter))
            break;
        prev_ll = mean_ll;

        // M-step
        for (int j = 0; j < J; ++j) {
            double nj = resp.col(j).sum();
            if (!(nj > 1e-12))
                throw NumericError("gmm: component " + std::to_string(j) + " collapsed (empty)");
            g.weights[j] = nj / N;
            Vec mu = (resp.col(j).transpose() * Z).transpose() / nj;
            Eigen::Map<Vec>(g.means.data() + static_cast<std::size_t>(j) * n, n) = mu;
            Mat c = Z.rowwise() - mu.transpose();
            Mat cov = (c.transpose() * (resp.col(j).asDiagonal() * c)) / nj;
            Eigen::Map<Mat>(g.covs.data() + static_cast<std::size_t>(j) * n * n, n, n) = cov;
        }
    }
    return res;
}

double gmm_log_likelihood(const ClassGmm& gmm, const std::vector<double>& z) {
    if (static_cast<int>(z.size()) != gmm.dim)
        throw InputError("gmm score: feature has dim " + std::to_string(z.size()) +
                         ", expected " + std::to_string(gmm.dim));
    auto scorers = build_scorers(gmm);
    return mixture_loglik(gmm, scorers, Eigen::Map<const Vec>(z.data(), gmm.dim));
}

FeatureMatrix extract_features(const DiffNet& net, const Batch& batch) {
    DiffNet::Forward f = net.forward(batch);
    FeatureMatrix out;
    out.rows = batch.count;
    out.dim = net.feature_dim();
    out.z.resize(static_cast<std::size_t>(out.rows) * out.dim);
    for (std::size_t i = 0; i < out.z.size(); ++i)
        out.z[i] = static_cast<double>(f.features.v[i]);
    if (batch.y) out.labels = *batch.y;
    return out;
}

UadModel fit_uad(const DiffNet& net, const Batch& clean_train, const EmOptions& opts) {
    if (!clean_train.labeled()) throw ConfigError("fit_uad: training set must be labeled");
    const int C = net.num_classes();
    FeatureMatrix all = extract_features(net, clean_train);

    UadModel model;
    model.model_hash = net.param_hash();
    model.gmms.reserve(C);
    for (int c = 0; c < C; ++c) {
        FeatureMatrix sub;
        sub.dim = all.dim;
        for (int i = 0; i < all.rows; ++i) {
            if (all.labels[i] != c) continue;
            sub.z.insert(sub.z.end(), all.row(i), all.row(i) + all.dim);
            ++sub.rows;
        }
        if (sub.rows == 0)
            throw ConfigError("fit_uad: class " + std::to_string(c) + " absent from the training set");
        if (sub.rows < opts.components)
            throw ConfigError("fit_uad: class " + std::to_string(c) + " has " +
                              std::to_string(sub.rows) + " samples, fewer than " +
                              std::to_string(opts.components) + " components");
        EmOptions per = opts;
        per.seed = opts.seed ^ (0x9e3779b9ULL * (c + 1));
        model.gmms.push_back(fit_gmm_em(sub, per, c).gmm);
    }
    return model;
}

UadModel calibrate_thresholds(UadModel uad, const DiffNet& net, const Batch& held_out_clean,
                              double percentile) {
    if (percentile < 0.0 || percentile > 50.0)
        throw ConfigError("calibrate: percentile must be in [0, 50]");
    const int C = uad.num_classes();
    uad.thresholds.assign(C, -std::numeric_limits<double>::infinity());
    if (percentile == 0.0) {
        uad.calibrated = true;
        return uad;
    }

    std::vector<int> pred = net.predict(held_out_clean);
    FeatureMatrix feats = extract_features(net, held_out_clean);
    std::vector<std::vector<double>> scores(C);
    std::vector<std::vector<ComponentScorer>> scorers(C);
    for (int c = 0; c < C; ++c) scorers[c] = build_scorers(uad.gmms[c]);
    for (int i = 0; i < feats.rows; ++i) {
        int c = pred[i];
        scores[c].push_back(mixture_loglik(uad.gmms[c], scorers[c],
                                           Eigen::Map<const Vec>(feats.row(i), feats.dim)));
    }
    for (int c = 0; c < C; ++c) {
        if (scores[c].empty())
            throw ConfigError("calibrate: no held-out samples predicted as class " + std::to_string(c));
        std::sort(scores[c].begin(), scores[c].end());
        std::size_t k = static_cast<std::size_t>(std::floor(percentile / 100.0 * scores[c].size()));
        if (k >= scores[c].size()) k = scores[c].size() - 1;
        uad.thresholds[c] = scores[c][k];
    }
    uad.calibrated = true;
    return uad;
}

std::vector<InferenceOutcome> defended_inference_batch(const DiffNet& net, const UadModel& uad,
                                                       const Batch& batch) {
    if (!uad.calibrated) throw StateError("defended_inference: detector is not calibrated");
    std::vector<int> pred = net.predict(batch);
    FeatureMatrix feats = extract_features(net, batch);
    std::vector<std::vector<ComponentScorer>> scorers(uad.num_classes());
    for (int c = 0; c < uad.num_classes(); ++c) scorers[c] = build_scorers(uad.gmms[c]);

    std::vector<InferenceOutcome> out(batch.count);
    for (int i = 0; i < batch.count; ++i) {
        int c = pred[i];
        double s = mixture_loglik(uad.gmms[c], scorers[c],
                                  Eigen::Map<const Vec>(feats.row(i), feats.dim));
        out[i].score = s;
        if (s < uad.thresholds[c]) {
            out[i].rejected = true;
        } else {
            out[i].label = c;
        }
    }
    return out;
}

InferenceOutcome defended_inference(const DiffNet& net, const UadModel& uad, const Batch& single) {
    return defended_inference_batch(net, uad, single).at(0);
}

namespace {
constexpr char kDetMagic[4] = {'A', 'D', 'U', 'D'};
constexpr std::uint16_t kDetVersion = 1;
} // namespace

void save_detector(const UadModel& uad, const std::string& path) {
    io::Writer w;
    w.magic(kDetMagic);
    w.u16(kDetVersion);
    w.u32(static_cast<std::uint32_t>(uad.gmms.size()));
    for (const ClassGmm& g : uad.gmms) {
        w.i32(g.class_id);
        w.u32(static_cast<std::uint32_t>(g.components));
        w.u32(static_cast<std::uint32_t>(g.dim));
        w.f64(g.diag_reg);
        w.f64s(g.weights);
        w.f64s(g.means);
        w.f64s(g.covs);
    }
    w.u8(uad.calibrated ? 1 : 0);
    if (uad.calibrated) w.f64s(uad.thresholds);
    w.u64(uad.model_hash);
    w.u32(static_cast<std::uint32_t>(uad.fit_date.size()));
    w.bytes(uad.fit_date.data(), uad.fit_date.size());
    w.save(path);
}

UadModel load_detector(const std::string& path) {
    io::Reader r(path);
    r.expect_magic(kDetMagic, "detector");
    if (r.u16() != kDetVersion) throw DataFormatError("detector: unsupported version in " + path);
    UadModel uad;
    std::uint32_t C = r.u32();
    for (std::uint32_t c = 0; c < C; ++c) {
        ClassGmm g;
        g.class_id = r.i32();
        g.components = static_cast<int>(r.u32());
        g.dim = static_cast<int>(r.u32());
        g.diag_reg = r.f64();
        r.f64s(g.weights, g.components);
        r.f64s(g.means, static_cast<std::size_t>(g.components) * g.dim);
        r.f64s(g.covs, static_cast<std::size_t>(g.components) * g.dim * g.dim);
        uad.gmms.push_back(std::move(g));
    }
    if (r.u8() == 1) {
        r.f64s(uad.thresholds, C);
        uad.calibrated = true;
    }
    uad.model_hash = r.u64();
    std::uint32_t len = r.u32();
    uad.fit_date.resize(len);
    for (auto& ch : uad.fit_date) ch = static_cast<char>(r.u8());
    if (!r.at_end()) throw DataFormatError("detector: trailing bytes in " + path);
    return uad;
}

} // namespace advshield
