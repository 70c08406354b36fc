#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advshield/batch.hpp"

namespace advshield {

struct MatF {
    int rows = 0;
    int cols = 0;
    std::vector<float> v;

    MatF() = default;
    MatF(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0f) {}
    float& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    float at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
    const float* row(int r) const { return v.data() + static_cast<std::size_t>(r) * cols; }
    float* row(int r) { return v.data() + static_cast<std::size_t>(r) * cols; }
};

enum class LayerKind { Dense, Conv };

struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    int width = 0;      // dense output width
    int channels = 0;   // conv output channels
    int kernel = 0;     // conv kernel size (square, stride 1, valid padding)

    static LayerSpec dense(int w) { return {LayerKind::Dense, w, 0, 0}; }
    static LayerSpec conv(int c, int k) { return {LayerKind::Conv, 0, c, k}; }
};

struct NetConfig {
    Shape input;
    std::vector<LayerSpec> hidden;   // a conv layer is only allowed first
    int num_classes = 2;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class LossTag { Xent, CwMargin };

LossTag loss_tag_from_string(const std::string& s);

struct Gradients {
    std::vector<std::vector<float>> params;   // same block layout as DiffNet::params()
    std::vector<float> inputs;                // count * input size, per-sample loss gradient
};

// Small feed-forward classifier with exact reverse-mode gradients w.r.t.
// parameters and inputs, exposing the penultimate activations Z.
class DiffNet {
public:
    static DiffNet build(const NetConfig& cfg);

    const NetConfig& config() const { return cfg_; }
    int num_classes() const { return cfg_.num_classes; }
    int feature_dim() const { return feature_dim_; }

    std::vector<std::vector<float>>& params() { return params_; }
    const std::vector<std::vector<float>>& params() const { return params_; }

    struct Forward {
        MatF logits;     // B x C
        MatF features;   // B x n, activations feeding the final linear layer
    };

    Forward forward(const Batch& batch) const;
    std::vector<int> predict(const Batch& batch) const;

    // Backprop from per-sample dlogits (B x C). Parameter gradients are the
    // sum over the batch scaled by `param_scale`; input gradients are per
    // sample (unscaled).
    Gradients backward(const Batch& batch, const MatF& dlogits,
                       bool want_params, bool want_inputs,
                       float param_scale = 1.0f) const;

    void apply_sgd(const std::vector<std::vector<float>>& grads, float lr);

    std::uint64_t param_hash() const;

private:
    struct Layer {
        LayerKind kind;
        bool relu_after;
        int in_size, out_size;
        // conv geometry
        int in_h = 0, in_w = 0, in_c = 0;
        int out_h = 0, out_w = 0, out_c = 0, k = 0;
        std::size_t w_block = 0, b_block = 0;
    };

    NetConfig cfg_;
    std::vector<Layer> layers_;                 // hidden layers + final dense
    std::vector<std::vector<float>> params_;    // alternating W, b per layer
    int feature_dim_ = 0;

    // acts[0]=input, acts[i]=output of layer i-1; optionally collects the
    // pre-activation values of layers with a rectifier
    std::vector<MatF> forward_acts(const Batch& batch, std::vector<MatF>* preacts = nullptr) const;

    friend struct DiffNetTestAccess;
};

// Mean cross-entropy over the batch, computed with max-shifted log-sum-exp
// and 64-bit accumulation.
double xent_loss(const MatF& logits, const std::vector<int>& labels);

// Per-sample dlogits for the given loss; also returns the mean loss value.
double loss_dlogits(const MatF& logits, const std::vector<int>& labels, LossTag tag, MatF& dlogits);

// Gradient of the mean loss w.r.t. every parameter block.
std::vector<std::vector<float>> param_gradient(const DiffNet& net, const Batch& batch, LossTag tag);

// Per-sample gradient of the loss w.r.t. input pixels.
std::vector<float> input_gradient(const DiffNet& net, const Batch& batch, LossTag tag);

// theta <- theta - lr * grad; throws NumericError naming the offending block
// on non-finite gradients.
void sgd_step(DiffNet& net, const std::vector<std::vector<float>>& grads, float lr);

void save_checkpoint(const DiffNet& net, const std::string& path);
DiffNet load_checkpoint(const std::string& path);

} // namespace advshield
