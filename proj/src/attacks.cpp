#include "advshield/attacks.hpp"

#include <cmath>
#include <sstream>

#include "advshield/data.hpp"
#include "advshield/io.hpp"
#include "advshield/kernels.hpp"
#include "advshield/rng.hpp"

namespace advshield {

AttackMethod attack_method_from_string(const std::string& s) {
    if (s == "fgsm") return AttackMethod::Fgsm;
    if (s == "pgd") return AttackMethod::Pgd;
    if (s == "cw") return AttackMethod::Cw;
    throw ConfigError("unknown attack method: " + s);
}

std::string to_string(AttackMethod m) {
    switch (m) {
        case AttackMethod::Fgsm: return "fgsm";
        case AttackMethod::Pgd: return "pgd";
        default: return "cw";
    }
}

void AttackSpec::validate() const {
    if (eps < 0.0f) throw ConfigError("attack spec: eps must be >= 0");
    if (steps < 1) throw ConfigError("attack spec: steps must be >= 1");
    if (method == AttackMethod::Cw) {
        if (cw_constant < 0.0f) throw ConfigError("attack spec: c must be >= 0");
        if (cw_lr <= 0.0f) throw ConfigError("attack spec: cw lr must be > 0");
    }
}

namespace {

AdvBatch finish(const DiffNet& net, const Batch& batch, Batch&& perturbed, float eps) {
    AdvBatch out;
    out.originals = batch;
    out.perturbed = std::move(perturbed);
    out.perturbed.y = batch.y;
    out.predicted = net.predict(out.perturbed);
    out.success.resize(batch.count);
    for (int i = 0; i < batch.count; ++i)
        out.success[i] = out.predicted[i] != (*batch.y)[i] ? 1 : 0;
    out.eps = eps;
    return out;
}

} // namespace

AdvBatch fgsm(const DiffNet& net, const Batch& batch, float eps) {
    if (!batch.labeled()) throw InputError("fgsm: batch must be labeled");
    if (eps < 0.0f) throw ConfigError("fgsm: eps must be >= 0");
    std::vector<float> g = input_gradient(net, batch, LossTag::Xent);
    Batch adv = batch;
    kern::sign_step_clip(batch.x.data(), g.data(), eps, adv.x.data(), adv.x.size());
    return finish(net, batch, std::move(adv), eps);
}

AdvBatch pgd(const DiffNet& net, const Batch& batch, const AttackSpec& spec) {
    if (!batch.labeled()) throw InputError("pgd: batch must be labeled");
    spec.validate();
    const float eps = spec.eps;
    const float step = spec.step_size > 0.0f ? spec.step_size : eps / 4.0f;

    Batch adv = batch;
    if (spec.random_start && eps > 0.0f) {
        const int d = batch.sample_size();
        for (int s = 0; s < batch.count; ++s) {
            Rng rng = Rng(spec.seed).fork(static_cast<std::uint64_t>(s) + 1);
            float* x = adv.sample(s);
            for (int i = 0; i < d; ++i)
                x[i] = static_cast<float>(x[i] + rng.uniform(-eps, eps));
        }
        kern::box_project(batch.x.data(), eps, adv.x.data(), adv.x.size());
    }
    for (int it = 0; it < spec.steps; ++it) {
        std::vector<float> g = input_gradient(net, adv, LossTag::Xent);
        kern::sign_step_clip(adv.x.data(), g.data(), step, adv.x.data(), adv.x.size());
        kern::box_project(batch.x.data(), eps, adv.x.data(), adv.x.size());
    }
    return finish(net, batch, std::move(adv), eps);
}

AdvBatch cw(const DiffNet& net, const Batch& batch, const AttackSpec& spec) {
    if (!batch.labeled()) throw InputError("cw: batch must be labeled");
    spec.validate();
    const int B = batch.count;
    const int D = batch.sample_size();
    const double c = spec.cw_constant;
    const std::vector<int>& y = *batch.y;

    std::vector<float> delta(static_cast<std::size_t>(B) * D, 0.0f);
    std::vector<float> best_x(batch.x);
    std::vector<double> best_obj(B, 0.0);
    std::vector<std::uint8_t> best_is_adv(B, 0);
    bool first = true;

    Batch cur = batch;
    for (int it = 0; it <= spec.steps; ++it) {
        // current iterate, box-clipped
        for (std::size_t i = 0; i < cur.x.size(); ++i) {
            float v = batch.x[i] + delta[i];
            v = std::min(std::max(v, 0.0f), 1.0f);
            cur.x[i] = v;
            delta[i] = v - batch.x[i];
        }
        DiffNet::Forward f = net.forward(cur);
        for (int s = 0; s < B; ++s) {
            const float* l = f.logits.row(s);
            int pred = 0;
            for (int k = 1; k < net.num_classes(); ++k)
                if (l[k] > l[pred]) pred = k;
            int runner = -1;
            for (int k = 0; k < net.num_classes(); ++k)
                if (k != y[s] && (runner < 0 || l[k] > l[runner])) runner = k;
            double margin = static_cast<double>(l[y[s]]) - static_cast<double>(l[runner]);
            double dist2 = 0.0;
            const float* d = delta.data() + static_cast<std::size_t>(s) * D;
            for (int i = 0; i < D; ++i) dist2 += static_cast<double>(d[i]) * d[i];
            double obj = dist2 + c * std::max(margin, 0.0);
            if (!std::isfinite(obj)) throw NumericError("cw: non-finite objective at sample " + std::to_string(s));
            bool is_adv = pred != y[s];
            // prefer misclassifying iterates; among equals keep the lowest objective
            bool better = first ||
                          (is_adv && !best_is_adv[s]) ||
                          (is_adv == static_cast<bool>(best_is_adv[s]) && obj < best_obj[s]);
            if (better) {
                best_obj[s] = obj;
                best_is_adv[s] = is_adv ? 1 : 0;
                std::copy(cur.sample(s), cur.sample(s) + D, best_x.data() + static_cast<std::size_t>(s) * D);
            }
        }
        if (it == spec.steps) break;

        MatF dlog;
        loss_dlogits(f.logits, y, LossTag::CwMargin, dlog);
        Gradients grad = net.backward(cur, dlog, false, true);
        for (std::size_t i = 0; i < delta.size(); ++i) {
            float g = 2.0f * delta[i] + static_cast<float>(c) * grad.inputs[i];
            delta[i] -= spec.cw_lr * g;
        }
        first = false;
    }

    Batch adv = batch;
    adv.x = std::move(best_x);
    return finish(net, batch, std::move(adv), 0.0f);
}

AdvBatch craft(const DiffNet& net, const Batch& batch, const AttackSpec& spec) {
    switch (spec.method) {
        case AttackMethod::Fgsm: return fgsm(net, batch, spec.eps);
        case AttackMethod::Pgd: return pgd(net, batch, spec);
        default: return cw(net, batch, spec);
    }
}

AdvBatch filter_successful(const AdvBatch& adv, const DiffNet& net) {
    std::vector<int> keep;
    std::vector<int> pred = net.predict(adv.perturbed);
    for (int i = 0; i < adv.perturbed.count; ++i)
        if (pred[i] != (*adv.perturbed.y)[i]) keep.push_back(i);
    AdvBatch out;
    out.eps = adv.eps;
    if (keep.empty()) {
        out.originals.dims = adv.originals.dims;
        out.perturbed.dims = adv.perturbed.dims;
        out.originals.y = std::vector<int>{};
        out.perturbed.y = std::vector<int>{};
        return out;
    }
    if (adv.originals.count == adv.perturbed.count)
        out.originals = adv.originals.select(keep);
    out.perturbed = adv.perturbed.select(keep);
    out.predicted.reserve(keep.size());
    for (int i : keep) out.predicted.push_back(pred[i]);
    out.success.assign(keep.size(), 1);
    return out;
}

void save_adv_batch(const AdvBatch& adv, const std::string& tensor_path, const std::string& manifest_csv_path) {
    save_batch(adv.perturbed, tensor_path);
    std::ostringstream csv;
    csv << "index,true_label,predicted,success\n";
    for (int i = 0; i < adv.perturbed.count; ++i)
        csv << i << ',' << (*adv.perturbed.y)[i] << ',' << adv.predicted[i] << ','
            << static_cast<int>(adv.success[i]) << '\n';
    io::write_text_file(manifest_csv_path, csv.str());
}

AdvBatch load_adv_batch(const DiffNet& net, const std::string& tensor_path) {
    Batch perturbed = load_batch(tensor_path);
    if (!perturbed.labeled()) throw DataFormatError("adv archive: missing labels in " + tensor_path);
    AdvBatch out;
    out.perturbed = std::move(perturbed);
    out.predicted = net.predict(out.perturbed);
    out.success.resize(out.perturbed.count);
    for (int i = 0; i < out.perturbed.count; ++i)
        out.success[i] = out.predicted[i] != (*out.perturbed.y)[i] ? 1 : 0;
    out.originals.dims = out.perturbed.dims;
    return out;
}

} // namespace advshield
