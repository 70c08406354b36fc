#include "advshield/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace advshield {

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.empty()) throw InputError("accuracy: empty input");
    if (predictions.size() != labels.size()) throw InputError("accuracy: length mismatch");
    long correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == labels[i]) ++correct;
    return static_cast<double>(correct) / predictions.size();
}

double average_precision(const std::vector<DetectionScore>& scores) {
    long pos = 0, neg = 0;
    for (const auto& s : scores) (s.is_adversarial ? pos : neg)++;
    if (pos == 0 || neg == 0)
        throw InputError("auprc: undefined metric, need both adversarial and clean samples");

    std::vector<const DetectionScore*> order;
    order.reserve(scores.size());
    for (const auto& s : scores) order.push_back(&s);
    std::stable_sort(order.begin(), order.end(),
                     [](const DetectionScore* a, const DetectionScore* b) { return a->score > b->score; });

    double ap = 0.0;
    double recall_prev = 0.0;
    long tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && order[j]->score == order[i]->score) {
            (order[j]->is_adversarial ? tp : fp)++;
            ++j;
        }
        double recall = static_cast<double>(tp) / pos;
        double precision = static_cast<double>(tp) / (tp + fp);
        ap += (recall - recall_prev) * precision;
        recall_prev = recall;
        i = j;
    }
    return ap;
}

AuprcReport auprc_by_class(const std::vector<DetectionScore>& scores, int num_classes) {
    AuprcReport rep;
    rep.per_class.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    int defined = 0;
    for (int c = 0; c < num_classes; ++c) {
        std::vector<DetectionScore> group;
        for (const auto& s : scores)
            if (s.predicted_class == c) group.push_back(s);
        bool has_pos = false, has_neg = false;
        for (const auto& s : group) (s.is_adversarial ? has_pos : has_neg) = true;
        if (!has_pos || !has_neg) continue;
        rep.per_class[c] = average_precision(group);
        sum += rep.per_class[c];
        ++defined;
    }
    if (defined == 0) throw InputError("auprc: no class group has both clean and adversarial samples");
    rep.macro = sum / defined;
    return rep;
}

double risk_without_uad(const RiskLedger& ledger, const RiskWeights& w) {
    w.validate();
    if (ledger.n <= 0) throw InputError("risk: normalizer N must be positive");
    if (ledger.n_cln_rej != 0)
        throw InputError("risk without uad: N_cln_rej must be 0");
    double r = w.r_cln_prd * ledger.n_cln_inc + w.r_adv_prd * ledger.n_adv_inc;
    return r / ledger.n;
}

double risk_with_uad(const RiskLedger& ledger, const RiskWeights& w) {
    w.validate();
    if (ledger.n <= 0) throw InputError("risk: normalizer N must be positive");
    double r = w.r_cln_prd * ledger.n_cln_inc + w.r_cln_uad * ledger.n_cln_rej +
               w.r_adv_prd * ledger.n_adv_inc;
    return r / ledger.n;
}

RiskLedger risk_ledger_from_run(const DiffNet& net, const UadModel* uad,
                                const Batch& clean_eval, const AdvBatch& adv_eval) {
    if (!clean_eval.labeled()) throw InputError("risk ledger: clean eval set must be labeled");
    RiskLedger ledger;
    ledger.n = clean_eval.count;

    if (uad) {
        auto clean_out = defended_inference_batch(net, *uad, clean_eval);
        for (int i = 0; i < clean_eval.count; ++i) {
            if (clean_out[i].rejected) ++ledger.n_cln_rej;
            else if (clean_out[i].label != (*clean_eval.y)[i]) ++ledger.n_cln_inc;
        }
        if (adv_eval.perturbed.count > 0) {
            auto adv_out = defended_inference_batch(net, *uad, adv_eval.perturbed);
            for (int i = 0; i < adv_eval.perturbed.count; ++i) {
                if (!adv_out[i].rejected && adv_out[i].label != (*adv_eval.perturbed.y)[i])
                    ++ledger.n_adv_inc;
            }
        }
    } else {
        std::vector<int> pred = net.predict(clean_eval);
        for (int i = 0; i < clean_eval.count; ++i)
            if (pred[i] != (*clean_eval.y)[i]) ++ledger.n_cln_inc;
        if (adv_eval.perturbed.count > 0) {
            std::vector<int> apred = net.predict(adv_eval.perturbed);
            for (int i = 0; i < adv_eval.perturbed.count; ++i)
                if (apred[i] != (*adv_eval.perturbed.y)[i]) ++ledger.n_adv_inc;
        }
    }
    return ledger;
}

std::vector<DetectionScore> detection_scores(const DiffNet& net, const UadModel& uad,
                                             const Batch& clean_eval, const Batch& adv_eval) {
    std::vector<DetectionScore> out;
    auto add = [&](const Batch& b, bool adversarial) {
        if (b.count == 0) return;
        std::vector<int> pred = net.predict(b);
        FeatureMatrix feats = extract_features(net, b);
        for (int i = 0; i < b.count; ++i) {
            std::vector<double> z(feats.row(i), feats.row(i) + feats.dim);
            DetectionScore s;
            s.predicted_class = pred[i];
            s.score = -gmm_log_likelihood(uad.gmms[pred[i]], z);
            s.is_adversarial = adversarial;
            out.push_back(s);
        }
    };
    add(clean_eval, false);
    add(adv_eval, true);
    return out;
}

} // namespace advshield
