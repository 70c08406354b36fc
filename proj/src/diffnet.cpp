#include "advshield/diffnet.hpp"

#include <cmath>
#include <cstring>

#include "advshield/io.hpp"
#include "advshield/kernels.hpp"
#include "advshield/rng.hpp"

namespace advshield {

void NetConfig::validate() const {
    if (input.height < 1 || input.width < 1 || input.channels < 1)
        throw ConfigError("net config: input dims must be >= 1");
    if (num_classes < 2)
        throw ConfigError("net config: num_classes must be >= 2, got " + std::to_string(num_classes));
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        const LayerSpec& s = hidden[i];
        if (s.kind == LayerKind::Dense) {
            if (s.width < 1) throw ConfigError("net config: dense width must be >= 1");
        } else {
            if (i != 0) throw ConfigError("net config: a conv layer is only allowed as the first hidden layer");
            if (s.channels < 1) throw ConfigError("net config: conv channels must be >= 1");
            if (s.kernel < 1 || s.kernel > input.height || s.kernel > input.width)
                throw ConfigError("net config: conv kernel must fit inside the input");
        }
    }
}

LossTag loss_tag_from_string(const std::string& s) {
    if (s == "xent") return LossTag::Xent;
    if (s == "cw-margin" || s == "margin") return LossTag::CwMargin;
    throw ConfigError("unknown loss tag: " + s);
}

DiffNet DiffNet::build(const NetConfig& cfg) {
    cfg.validate();
    DiffNet net;
    net.cfg_ = cfg;

    int cur_h = cfg.input.height, cur_w = cfg.input.width, cur_c = cfg.input.channels;
    int cur_size = cfg.input.size();

    auto add_dense = [&](int out, bool relu_after) {
        Layer l{};
        l.kind = LayerKind::Dense;
        l.relu_after = relu_after;
        l.in_size = cur_size;
        l.out_size = out;
        l.w_block = net.params_.size();
        net.params_.emplace_back(static_cast<std::size_t>(out) * cur_size, 0.0f);
        l.b_block = net.params_.size();
        net.params_.emplace_back(static_cast<std::size_t>(out), 0.0f);
        net.layers_.push_back(l);
        cur_size = out;
        cur_h = 1; cur_w = 1; cur_c = out;
    };

    for (const LayerSpec& s : cfg.hidden) {
        if (s.kind == LayerKind::Dense) {
            add_dense(s.width, true);
        } else {
            Layer l{};
            l.kind = LayerKind::Conv;
            l.relu_after = true;
            l.in_h = cur_h; l.in_w = cur_w; l.in_c = cur_c;
            l.k = s.kernel;
            l.out_c = s.channels;
            l.out_h = cur_h - s.kernel + 1;
            l.out_w = cur_w - s.kernel + 1;
            l.in_size = cur_size;
            l.out_size = l.out_h * l.out_w * l.out_c;
            l.w_block = net.params_.size();
            net.params_.emplace_back(static_cast<std::size_t>(l.out_c) * l.in_c * l.k * l.k, 0.0f);
            l.b_block = net.params_.size();
            net.params_.emplace_back(static_cast<std::size_t>(l.out_c), 0.0f);
            net.layers_.push_back(l);
            cur_h = l.out_h; cur_w = l.out_w; cur_c = l.out_c;
            cur_size = l.out_size;
        }
    }

    net.feature_dim_ = cur_size;
    add_dense(cfg.num_classes, false);   // classifier layer

    // symmetric uniform init scaled by fan-in, biases zero
    Rng rng(cfg.seed);
    for (const Layer& l : net.layers_) {
        int fan_in = (l.kind == LayerKind::Dense) ? l.in_size : l.in_c * l.k * l.k;
        float s = 1.0f / std::sqrt(static_cast<float>(fan_in));
        for (float& w : net.params_[l.w_block])
            w = static_cast<float>(rng.uniform(-s, s));
    }
    return net;
}

std::vector<MatF> DiffNet::forward_acts(const Batch& batch, std::vector<MatF>* preacts) const {
    if (!(batch.dims == cfg_.input))
        throw InputError("forward: batch shape does not match net config");
    if (batch.count < 1) throw InputError("forward: empty batch");

    std::vector<MatF> acts;
    acts.reserve(layers_.size() + 1);
    MatF in(batch.count, batch.sample_size());
    in.v = batch.x;
    acts.push_back(std::move(in));

    for (const Layer& l : layers_) {
        const MatF& a = acts.back();
        MatF out(batch.count, l.out_size);
        if (l.kind == LayerKind::Dense) {
            const std::vector<float>& W = params_[l.w_block];
            const std::vector<float>& b = params_[l.b_block];
            for (int s = 0; s < batch.count; ++s) {
                const float* x = a.row(s);
                float* o = out.row(s);
                for (int j = 0; j < l.out_size; ++j)
                    o[j] = kern::dot(W.data() + static_cast<std::size_t>(j) * l.in_size, x, l.in_size) + b[j];
            }
        } else {
            const std::vector<float>& W = params_[l.w_block];
            const std::vector<float>& b = params_[l.b_block];
            const int k = l.k;
            for (int s = 0; s < batch.count; ++s) {
                const float* x = a.row(s);   // (in_h, in_w, in_c)
                float* o = out.row(s);       // (out_h, out_w, out_c)
                for (int oy = 0; oy < l.out_h; ++oy)
                    for (int ox = 0; ox < l.out_w; ++ox)
                        for (int oc = 0; oc < l.out_c; ++oc) {
                            float acc = b[oc];
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx)
                                    for (int ic = 0; ic < l.in_c; ++ic)
                                        acc += W[((static_cast<std::size_t>(oc) * l.in_c + ic) * k + ky) * k + kx]
                                             * x[((oy + ky) * l.in_w + (ox + kx)) * l.in_c + ic];
                            o[(oy * l.out_w + ox) * l.out_c + oc] = acc;
                        }
            }
        }
        if (l.relu_after) {
            if (preacts) preacts->push_back(out);
            kern::relu(out.v.data(), out.v.data(), out.v.size());
        }
        for (float v : out.v)
            if (!std::isfinite(v)) throw NumericError("forward: non-finite activation");
        acts.push_back(std::move(out));
    }
    return acts;
}

DiffNet::Forward DiffNet::forward(const Batch& batch) const {
    std::vector<MatF> acts = forward_acts(batch);
    Forward out;
    out.logits = std::move(acts.back());
    out.features = std::move(acts[acts.size() - 2]);
    return out;
}

std::vector<int> DiffNet::predict(const Batch& batch) const {
    Forward f = forward(batch);
    std::vector<int> pred(batch.count);
    for (int s = 0; s < batch.count; ++s) {
        const float* l = f.logits.row(s);
        int best = 0;
        for (int c = 1; c < cfg_.num_classes; ++c)
            if (l[c] > l[best]) best = c;   // ties keep the lowest index
        pred[s] = best;
    }
    return pred;
}

Gradients DiffNet::backward(const Batch& batch, const MatF& dlogits,
                            bool want_params, bool want_inputs, float param_scale) const {
    std::vector<MatF> acts = forward_acts(batch);
    Gradients g;
    if (want_params) {
        g.params.reserve(params_.size());
        for (const auto& p : params_) g.params.emplace_back(p.size(), 0.0f);
    }

    MatF delta = dlogits;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const Layer& l = layers_[li];
        const MatF& a_in = acts[li];
        const MatF& a_out = acts[li + 1];

        if (l.relu_after)
            kern::relu_backward(a_out.v.data(), delta.v.data(), delta.v.data(), delta.v.size());

        MatF d_in(batch.count, l.in_size);
        if (l.kind == LayerKind::Dense) {
            const std::vector<float>& W = params_[l.w_block];
            for (int s = 0; s < batch.count; ++s) {
                const float* x = a_in.row(s);
                const float* d = delta.row(s);
                float* dx = d_in.row(s);
                for (int j = 0; j < l.out_size; ++j) {
                    const float dj = d[j];
                    if (dj != 0.0f) {
                        if (want_params)
                            kern::axpy(dj, x, g.params[l.w_block].data() + static_cast<std::size_t>(j) * l.in_size, l.in_size);
                        if (want_inputs || li > 0)
                            kern::axpy(dj, W.data() + static_cast<std::size_t>(j) * l.in_size, dx, l.in_size);
                    }
                    if (want_params) g.params[l.b_block][j] += dj;
                }
            }
        } else {
            const std::vector<float>& W = params_[l.w_block];
            const int k = l.k;
            for (int s = 0; s < batch.count; ++s) {
                const float* x = a_in.row(s);
                const float* d = delta.row(s);
                float* dx = d_in.row(s);
                for (int oy = 0; oy < l.out_h; ++oy)
                    for (int ox = 0; ox < l.out_w; ++ox)
                        for (int oc = 0; oc < l.out_c; ++oc) {
                            const float dj = d[(oy * l.out_w + ox) * l.out_c + oc];
                            if (dj == 0.0f) continue;
                            if (want_params) g.params[l.b_block][oc] += dj;
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx)
                                    for (int ic = 0; ic < l.in_c; ++ic) {
                                        const std::size_t wi = ((static_cast<std::size_t>(oc) * l.in_c + ic) * k + ky) * k + kx;
                                        const std::size_t xi = ((oy + ky) * l.in_w + (ox + kx)) * l.in_c + ic;
                                        if (want_params) g.params[l.w_block][wi] += dj * x[xi];
                                        dx[xi] += dj * W[wi];
                                    }
                        }
            }
        }
        delta = std::move(d_in);
    }

    if (want_params && param_scale != 1.0f)
        for (auto& blk : g.params)
            for (float& v : blk) v *= param_scale;
    if (want_inputs)
        g.inputs = std::move(delta.v);
    return g;
}

void DiffNet::apply_sgd(const std::vector<std::vector<float>>& grads, float lr) {
    for (std::size_t b = 0; b < params_.size(); ++b)
        kern::axpy(-lr, grads[b].data(), params_[b].data(), params_[b].size());
}

std::uint64_t DiffNet::param_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& blk : params_)
        h = io::fnv1a(blk.data(), blk.size() * sizeof(float), h);
    return h;
}

double xent_loss(const MatF& logits, const std::vector<int>& labels) {
    if (labels.size() != static_cast<std::size_t>(logits.rows))
        throw InputError("xent: label count mismatch");
    double total = 0.0;
    for (int s = 0; s < logits.rows; ++s) {
        const float* l = logits.row(s);
        int y = labels[s];
        if (y < 0 || y >= logits.cols)
            throw InputError("xent: label " + std::to_string(y) + " out of range");
        double m = l[0];
        for (int c = 1; c < logits.cols; ++c) m = std::max(m, static_cast<double>(l[c]));
        double sum = 0.0;
        for (int c = 0; c < logits.cols; ++c) sum += std::exp(static_cast<double>(l[c]) - m);
        total += (m + std::log(sum)) - static_cast<double>(l[y]);
    }
    return total / logits.rows;
}

double loss_dlogits(const MatF& logits, const std::vector<int>& labels, LossTag tag, MatF& dlogits) {
    dlogits = MatF(logits.rows, logits.cols);
    double total = 0.0;
    for (int s = 0; s < logits.rows; ++s) {
        const float* l = logits.row(s);
        float* d = dlogits.row(s);
        int y = labels[s];
        if (y < 0 || y >= logits.cols)
            throw InputError("loss: label " + std::to_string(y) + " out of range");
        if (tag == LossTag::Xent) {
            double m = l[0];
            for (int c = 1; c < logits.cols; ++c) m = std::max(m, static_cast<double>(l[c]));
            double sum = 0.0;
            for (int c = 0; c < logits.cols; ++c) sum += std::exp(static_cast<double>(l[c]) - m);
            total += (m + std::log(sum)) - static_cast<double>(l[y]);
            for (int c = 0; c < logits.cols; ++c) {
                double p = std::exp(static_cast<double>(l[c]) - m) / sum;
                d[c] = static_cast<float>(p - (c == y ? 1.0 : 0.0));
            }
        } else {
            // hinge on the C&W margin z_y - max_{j!=y} z_j, kappa = 0
            int j = -1;
            for (int c = 0; c < logits.cols; ++c)
                if (c != y && (j < 0 || l[c] > l[j])) j = c;
            double margin = static_cast<double>(l[y]) - static_cast<double>(l[j]);
            if (margin > 0.0) {
                total += margin;
                d[y] += 1.0f;
                d[j] -= 1.0f;
            }
        }
    }
    return total / logits.rows;
}

std::vector<std::vector<float>> param_gradient(const DiffNet& net, const Batch& batch, LossTag tag) {
    if (!batch.labeled()) throw InputError("param_gradient: batch must be labeled");
    DiffNet::Forward f = net.forward(batch);
    MatF d;
    loss_dlogits(f.logits, *batch.y, tag, d);
    return net.backward(batch, d, true, false, 1.0f / batch.count).params;
}

std::vector<float> input_gradient(const DiffNet& net, const Batch& batch, LossTag tag) {
    if (!batch.labeled()) throw InputError("input_gradient: batch must be labeled");
    DiffNet::Forward f = net.forward(batch);
    MatF d;
    loss_dlogits(f.logits, *batch.y, tag, d);
    return net.backward(batch, d, false, true).inputs;
}

void sgd_step(DiffNet& net, const std::vector<std::vector<float>>& grads, float lr) {
    if (lr < 0.0f) throw ConfigError("sgd_step: learning rate must be >= 0");
    if (grads.size() != net.params().size())
        throw InputError("sgd_step: gradient block count mismatch");
    for (std::size_t b = 0; b < grads.size(); ++b) {
        if (grads[b].size() != net.params()[b].size())
            throw InputError("sgd_step: gradient shape mismatch at block " + std::to_string(b));
        for (float v : grads[b])
            if (!std::isfinite(v))
                throw NumericError("sgd_step: non-finite gradient in block " + std::to_string(b));
    }
    net.apply_sgd(grads, lr);
}

namespace {
constexpr char kNetMagic[4] = {'A', 'D', 'S', 'H'};
constexpr std::uint16_t kNetVersion = 1;
} // namespace

void save_checkpoint(const DiffNet& net, const std::string& path) {
    io::Writer w;
    w.magic(kNetMagic);
    w.u16(kNetVersion);
    const NetConfig& c = net.config();
    w.i32(c.input.height);
    w.i32(c.input.width);
    w.i32(c.input.channels);
    w.i32(c.num_classes);
    w.u64(c.seed);
    w.u32(static_cast<std::uint32_t>(c.hidden.size()));
    for (const LayerSpec& s : c.hidden) {
        w.u8(s.kind == LayerKind::Dense ? 0 : 1);
        w.i32(s.width);
        w.i32(s.channels);
        w.i32(s.kernel);
    }
    w.u32(static_cast<std::uint32_t>(net.params().size()));
    for (const auto& blk : net.params()) {
        w.u64(blk.size());
        w.f32s(blk);
    }
    w.save(path);
}

DiffNet load_checkpoint(const std::string& path) {
    io::Reader r(path);
    r.expect_magic(kNetMagic, "checkpoint");
    if (r.u16() != kNetVersion) throw DataFormatError("checkpoint: unsupported version in " + path);
    NetConfig c;
    c.input.height = r.i32();
    c.input.width = r.i32();
    c.input.channels = r.i32();
    c.num_classes = r.i32();
    c.seed = r.u64();
    std::uint32_t nh = r.u32();
    for (std::uint32_t i = 0; i < nh; ++i) {
        LayerSpec s;
        s.kind = r.u8() == 0 ? LayerKind::Dense : LayerKind::Conv;
        s.width = r.i32();
        s.channels = r.i32();
        s.kernel = r.i32();
        c.hidden.push_back(s);
    }
    DiffNet net = DiffNet::build(c);
    std::uint32_t nb = r.u32();
    if (nb != net.params().size()) throw DataFormatError("checkpoint: block count mismatch in " + path);
    for (auto& blk : net.params()) {
        std::uint64_t len = r.u64();
        if (len != blk.size()) throw DataFormatError("checkpoint: block length mismatch in " + path);
        r.f32s(blk, len);
    }
    if (!r.at_end()) throw DataFormatError("checkpoint: trailing bytes in " + path);
    return net;
}

} // namespace advshield
