#include "advshield/training.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "advshield/kernels.hpp"

namespace advshield {

Regime regime_from_string(const std::string& s) {
    if (s == "nt") return Regime::Nt;
    if (s == "at") return Regime::At;
    if (s == "ssat") return Regime::Ssat;
    throw ConfigError("unknown training regime: " + s);
}

std::string to_string(Regime r) {
    switch (r) {
        case Regime::Nt: return "nt";
        case Regime::At: return "at";
        default: return "ssat";
    }
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (!(lr > 0.0f)) throw ConfigError("train config: lr must be > 0");
    if (lambda < 0.0f) throw ConfigError("train config: lambda must be >= 0");
    if (train_eps_lo < 0.0f || train_eps_lo > train_eps_hi)
        throw ConfigError("train config: need 0 <= eps_lo <= eps_hi");
    if (!(adv_fraction > 0.0f && adv_fraction <= 1.0f))
        throw ConfigError("train config: adv_fraction must be in (0,1]");
    if (warmup_epochs < 0) throw ConfigError("train config: warmup_epochs must be >= 0");
    if (craft_method != AttackMethod::Fgsm)
        throw ConfigError("train config: training-time crafting supports fgsm only");
}

PseudoLabeledSet pseudo_label(const DiffNet& net, const Batch& unlabeled) {
    PseudoLabeledSet out;
    out.data = unlabeled;
    if (unlabeled.count == 0) {
        out.data.y = std::vector<int>{};
        return out;
    }
    out.data.y = net.predict(unlabeled);
    return out;
}

Batch adversarial_minibatch(const DiffNet& net, const Batch& labeled_batch,
                            float eps_lo, float eps_hi, float adv_fraction, Rng& rng) {
    if (!labeled_batch.labeled()) throw InputError("adversarial_minibatch: batch must be labeled");
    const int B = labeled_batch.count;
    const int n_adv = static_cast<int>(std::floor(B * adv_fraction));
    Batch out = labeled_batch;
    if (n_adv == 0) return out;

    std::vector<int> adv_idx(n_adv);
    std::iota(adv_idx.begin(), adv_idx.end(), B - n_adv);
    Batch sub = labeled_batch.select(adv_idx);
    std::vector<float> g = input_gradient(net, sub, LossTag::Xent);
    const int d = sub.sample_size();
    for (int i = 0; i < n_adv; ++i) {
        float eps = static_cast<float>(rng.uniform(eps_lo, eps_hi));
        kern::sign_step_clip(sub.sample(i), g.data() + static_cast<std::size_t>(i) * d,
                             eps, out.sample(B - n_adv + i), d);
    }
    return out;
}

namespace {

std::vector<int> epoch_order(int n, Rng& rng) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    shuffle_indices(idx, rng);
    return idx;
}

} // namespace

TrainResult train(const DiffNet& initial, const Batch& labeled,
                  const std::optional<Batch>& unlabeled, const TrainConfig& cfg) {
    cfg.validate();
    if (!labeled.labeled()) throw ConfigError("train: labeled set has no labels");
    const bool ssat_active = cfg.regime == Regime::Ssat && cfg.lambda > 0.0f;
    if (ssat_active && (!unlabeled || unlabeled->count == 0))
        throw ConfigError("train: ssat requires a non-empty unlabeled pool");

    TrainResult res{initial, {}};
    DiffNet& net = res.net;

    Rng rng_sup = Rng(cfg.seed).fork(0x51);
    Rng rng_unsup = Rng(cfg.seed).fork(0x52);

    std::optional<Batch> pseudo;     // assigned once after warmup, then frozen
    std::vector<int> pseudo_order;
    std::size_t pseudo_pos = 0;

    const int B = cfg.batch_size;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const bool adversarial_phase = cfg.regime != Regime::Nt && epoch > cfg.warmup_epochs;

        if (ssat_active && adversarial_phase && !pseudo) {
            pseudo = pseudo_label(net, *unlabeled).data;
        }
        if (ssat_active && adversarial_phase) {
            pseudo_order = epoch_order(pseudo->count, rng_unsup);
            pseudo_pos = 0;
        }

        std::vector<int> order = epoch_order(labeled.count, rng_sup);
        double sup_sum = 0.0, unsup_sum = 0.0;
        int n_batches = 0;

        for (int start = 0; start < labeled.count; start += B) {
            int end = std::min(start + B, labeled.count);
            std::vector<int> idx(order.begin() + start, order.begin() + end);
            Batch mb = labeled.select(idx);
            if (adversarial_phase)
                mb = adversarial_minibatch(net, mb, cfg.train_eps_lo, cfg.train_eps_hi,
                                           cfg.adv_fraction, rng_sup);

            DiffNet::Forward f = net.forward(mb);
            MatF dlog;
            double sup_loss = loss_dlogits(f.logits, *mb.y, LossTag::Xent, dlog);
            std::vector<std::vector<float>> grads =
                net.backward(mb, dlog, true, false, 1.0f / mb.count).params;
            sup_sum += sup_loss;

            if (ssat_active && adversarial_phase) {
                std::vector<int> uidx;
                uidx.reserve(static_cast<std::size_t>(B));
                for (int k = 0; k < B; ++k) {
                    uidx.push_back(pseudo_order[pseudo_pos]);
                    pseudo_pos = (pseudo_pos + 1) % pseudo_order.size();
                }
                Batch umb = pseudo->select(uidx);
                umb = adversarial_minibatch(net, umb, cfg.train_eps_lo, cfg.train_eps_hi,
                                            cfg.adv_fraction, rng_unsup);
                DiffNet::Forward uf = net.forward(umb);
                MatF udlog;
                double unsup_loss = loss_dlogits(uf.logits, *umb.y, LossTag::Xent, udlog);
                std::vector<std::vector<float>> ugrads =
                    net.backward(umb, udlog, true, false, 1.0f / umb.count).params;
                for (std::size_t b = 0; b < grads.size(); ++b)
                    kern::axpy(cfg.lambda, ugrads[b].data(), grads[b].data(), grads[b].size());
                unsup_sum += unsup_loss;
            }

            sgd_step(net, grads, cfg.lr);
            ++n_batches;
        }

        double sup_mean = sup_sum / n_batches;
        double unsup_mean = unsup_sum / n_batches;
        res.trace.push_back({epoch, sup_mean, unsup_mean, sup_mean + cfg.lambda * unsup_mean});
    }
    return res;
}

std::string trace_to_csv(const std::vector<EpochTrace>& trace) {
    std::ostringstream out;
    out << "epoch,sup_loss,unsup_loss,total_loss\n";
    out.setf(std::ios::fixed);
    out.precision(9);
    for (const EpochTrace& t : trace)
        out << t.epoch << ',' << t.sup_loss << ',' << t.unsup_loss << ',' << t.total_loss << '\n';
    return out.str();
}

} // namespace advshield
