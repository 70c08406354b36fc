#include <doctest.h>

#include <cmath>

#include "advshield/evaluation.hpp"
#include "test_util.hpp"

using namespace advshield;
using namespace testutil;

namespace {

DetectionScore ds(double score, bool adv, int cls = 0) {
    DetectionScore s;
    s.score = score;
    s.is_adversarial = adv;
    s.predicted_class = cls;
    return s;
}

DiffNet pixel_net() {
    NetConfig cfg;
    cfg.input = {1, 1, 1};
    cfg.num_classes = 2;
    cfg.seed = 1;
    DiffNet net = DiffNet::build(cfg);
    net.params()[0] = {-4.0f, 4.0f};
    net.params()[1] = {2.0f, -2.0f};
    return net;
}

} // namespace

TEST_CASE("accuracy") {
    CHECK(accuracy({0, 1, 2, 1}, {0, 1, 1, 1}) == doctest::Approx(0.75));
    CHECK_THROWS_AS(accuracy({0}, {0, 1}), InputError);
    CHECK_THROWS_AS(accuracy({}, {}), InputError);
}

TEST_CASE("average precision: separation and hand-ranked cases") {
    // perfect separation
    CHECK(average_precision({ds(3, true), ds(2, true), ds(1, false)}) == doctest::Approx(1.0));
    // inverted ranking of 1 pos, 1 neg: AP = 0.5
    CHECK(average_precision({ds(1, true), ds(2, false)}) == doctest::Approx(0.5));
    // ranking pos, neg, pos, neg: AP = (1/1 + 2/3)/2 = 0.833333
    CHECK(average_precision({ds(4, true), ds(3, false), ds(2, true), ds(1, false)}) ==
          doctest::Approx(5.0 / 6.0).epsilon(1e-9));
    CHECK_THROWS_AS(average_precision({ds(1, true), ds(2, true)}), InputError);
    CHECK_THROWS_AS(average_precision({}), InputError);
}

TEST_CASE("average precision groups ties") {
    // group {1,1}: tp=1 fp=1 -> recall 0.5, precision 0.5
    // group {0}:   tp=2 fp=1 -> recall 1.0, precision 2/3
    // AP = 0.5*0.5 + 0.5*(2/3) = 7/12
    double ap = average_precision({ds(1, true), ds(1, false), ds(0, true)});
    CHECK(ap == doctest::Approx(7.0 / 12.0).epsilon(1e-9));
    // order of tied entries must not matter
    double ap2 = average_precision({ds(1, false), ds(0, true), ds(1, true)});
    CHECK(ap2 == doctest::Approx(ap).epsilon(1e-12));
}

TEST_CASE("per-class auprc with undefined classes") {
    std::vector<DetectionScore> scores{
        ds(0.9, true, 0), ds(0.1, false, 0),                      // class 0: AP 1
        ds(0.8, true, 1), ds(0.5, false, 1), ds(0.2, true, 1),    // class 1: AP 5/6
        ds(0.7, false, 2),                                        // class 2: undefined
    };
    AuprcReport rep = auprc_by_class(scores, 3);
    CHECK(rep.per_class[0] == doctest::Approx(1.0));
    CHECK(rep.per_class[1] == doctest::Approx(5.0 / 6.0).epsilon(1e-9));
    CHECK(std::isnan(rep.per_class[2]));
    CHECK(rep.macro == doctest::Approx(11.0 / 12.0).epsilon(1e-9));
    CHECK_THROWS_AS(auprc_by_class({ds(0.7, false, 2)}, 3), InputError);
}

TEST_CASE("risk: reference count sheet") {
    RiskWeights w;   // unit weights
    RiskLedger bare{80, 0, 885, 1000};
    CHECK(risk_without_uad(bare, w) == doctest::Approx(0.965).epsilon(1e-12));
    RiskLedger defended{87, 136, 0, 1000};
    CHECK(risk_with_uad(defended, w) == doctest::Approx(0.223).epsilon(1e-12));

    RiskLedger rejecting{0, 3, 0, 10};
    CHECK_THROWS_AS(risk_without_uad(rejecting, w), InputError);
    RiskLedger empty{0, 0, 0, 0};
    CHECK_THROWS_AS(risk_with_uad(empty, w), InputError);

    RiskWeights heavy{1.0, 0.5, 2.0};
    RiskLedger l{10, 20, 30, 100};
    CHECK(risk_with_uad(l, heavy) == doctest::Approx((10 + 10 + 60) / 100.0));
    RiskWeights bad{-1.0, 1.0, 1.0};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("risk ledger from a run, with and without the detector") {
    DiffNet net = pixel_net();   // boundary at pixel 0.5
    Batch clean = make_batch({1, 1, 1}, {0.2f, 0.3f, 0.8f, 0.6f}, {0, 0, 1, 0});
    // last clean sample is mislabeled on purpose -> one clean error
    AdvBatch adv;
    adv.perturbed = make_batch({1, 1, 1}, {0.9f, 0.1f, 0.2f}, {0, 0, 1});
    // predictions 1,0,0 vs labels 0,0,1 -> two adversarial errors
    RiskLedger bare = risk_ledger_from_run(net, nullptr, clean, adv);
    CHECK(bare.n_cln_inc == 1);
    CHECK(bare.n_cln_rej == 0);
    CHECK(bare.n_adv_inc == 2);
    CHECK(bare.n == 4);

    Batch unlabeled = make_batch({1, 1, 1}, {0.2f, 0.3f});
    CHECK_THROWS_AS(risk_ledger_from_run(net, nullptr, unlabeled, adv), InputError);
}

TEST_CASE("detection scores pool clean and adversarial with nll scoring") {
    DiffNet net = pixel_net();
    Rng rng(61);
    Batch train;
    train.dims = {1, 1, 1};
    train.count = 80;
    std::vector<int> y;
    for (int i = 0; i < 80; ++i) {
        int cls = i % 2;
        float v = static_cast<float>((cls == 0 ? 0.3 : 0.7) + 0.05 * rng.normal());
        train.x.push_back(std::min(1.0f, std::max(0.0f, v)));
        y.push_back(cls);
    }
    train.y = y;
    EmOptions opts;
    UadModel uad = fit_uad(net, train, opts);

    Batch clean = make_batch({1, 1, 1}, {0.3f, 0.7f}, {0, 1});
    Batch adv = make_batch({1, 1, 1}, {0.49f}, {1});
    auto scores = detection_scores(net, uad, clean, adv);
    REQUIRE(scores.size() == 3);
    CHECK_FALSE(scores[0].is_adversarial);
    CHECK(scores[2].is_adversarial);
    // score is the negative log-likelihood under the predicted class gmm
    // (the feature is the float32 pixel, so compare at its double value)
    CHECK(scores[0].score ==
          doctest::Approx(-gmm_log_likelihood(uad.gmms[scores[0].predicted_class],
                                              {static_cast<double>(0.3f)})).epsilon(1e-12));
    // the in-between adversarial point is more anomalous than the cluster centers
    CHECK(scores[2].score > scores[0].score);
    CHECK(scores[2].score > scores[1].score);
}
