#include "vpgrid/nn.hpp"

#include "vpgrid/error.hpp"
#include "vpgrid/rng.hpp"
#include "vpgrid/scenegen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <type_traits>

namespace vpgrid::nn {

Tensor::Tensor(std::vector<int> dims, double fill) : shape(std::move(dims)) {
    data.assign(element_count(shape), fill);
}

std::size_t element_count(std::span<const int> shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) {
            throw DomainError("negative tensor dimension");
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string describe(const LayerSpec& spec) {
    return std::visit(
        [](const auto& s) -> std::string {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Conv>) {
                return "Conv(" + std::to_string(s.out_channels) + "," + std::to_string(s.kernel) + "," +
                       std::to_string(s.stride) + "," + std::to_string(s.padding) + ")";
            } else if constexpr (std::is_same_v<T, ReLU>) {
                return "ReLU";
            } else if constexpr (std::is_same_v<T, MaxPool>) {
                return "MaxPool(" + std::to_string(s.window) + "," + std::to_string(s.stride) + ")";
            } else if constexpr (std::is_same_v<T, Flatten>) {
                return "Flatten";
            } else {
                return "Dense(" + std::to_string(s.out_features) + ")";
            }
        },
        spec);
}

std::vector<Shape3> infer_shapes(Shape3 input, std::span<const LayerSpec> specs) {
    if (input.c < 1 || input.h < 1 || input.w < 1) {
        throw DomainError("network input dimensions must be positive");
    }
    if (specs.empty() || !std::holds_alternative<Dense>(specs.back())) {
        throw DomainError("network must end in a Dense head");
    }
    std::vector<Shape3> shapes;
    Shape3 cur = input;
    bool flat = false;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        auto fail = [&](const std::string& why) {
            throw DomainError("layer " + std::to_string(i) + " " + describe(specs[i]) + ": " + why);
        };
        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, Conv>) {
                    if (flat) {
                        fail("convolution after Flatten");
                    }
                    if (s.out_channels < 1 || s.kernel < 1 || s.stride < 1 || s.padding < 0) {
                        fail("bad hyperparameters");
                    }
                    const int span_h = cur.h + 2 * s.padding - s.kernel;
                    const int span_w = cur.w + 2 * s.padding - s.kernel;
                    if (span_h < 0 || span_w < 0) {
                        fail("kernel larger than padded input");
                    }
                    cur = {s.out_channels, span_h / s.stride + 1, span_w / s.stride + 1};
                } else if constexpr (std::is_same_v<T, MaxPool>) {
                    if (flat) {
                        fail("pooling after Flatten");
                    }
                    if (s.window < 1 || s.stride < 1) {
                        fail("bad hyperparameters");
                    }
                    if (cur.h < s.window || cur.w < s.window) {
                        fail("window larger than input");
                    }
                    cur = {cur.c, (cur.h - s.window) / s.stride + 1, (cur.w - s.window) / s.stride + 1};
                } else if constexpr (std::is_same_v<T, Flatten>) {
                    cur = {static_cast<int>(cur.size()), 1, 1};
                    flat = true;
                } else if constexpr (std::is_same_v<T, Dense>) {
                    if (!flat) {
                        fail("Dense requires a preceding Flatten");
                    }
                    if (s.out_features < 1) {
                        fail("bad hyperparameters");
                    }
                    cur = {s.out_features, 1, 1};
                }
            },
            specs[i]);
        shapes.push_back(cur);
    }
    return shapes;
}

std::vector<LayerSpec> reference_architecture(int head_classes) {
    return {Conv{8, 3, 1, 1},  ReLU{}, MaxPool{2, 2}, Conv{16, 3, 1, 1}, ReLU{},     MaxPool{2, 2},
            Conv{32, 3, 1, 1}, ReLU{}, MaxPool{2, 2}, Flatten{},         Dense{128}, ReLU{},
            Dense{head_classes}};
}

Network::Network(Shape3 input, std::vector<LayerSpec> specs) : input_(input) {
    const auto shapes = infer_shapes(input, specs);
    Shape3 in = input;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        Layer layer{specs[i], in, shapes[i], {}, {}};
        if (const auto* c = std::get_if<Conv>(&specs[i])) {
            layer.weights = Tensor({c->out_channels, in.c, c->kernel, c->kernel});
            layer.bias = Tensor({c->out_channels});
        } else if (const auto* d = std::get_if<Dense>(&specs[i])) {
            layer.weights = Tensor({d->out_features, static_cast<int>(in.size())});
            layer.bias = Tensor({d->out_features});
        }
        layers_.push_back(std::move(layer));
        in = shapes[i];
    }
}

Network::Network(Shape3 input, std::vector<LayerSpec> specs, std::uint64_t init_seed)
    : Network(input, std::move(specs)) {
    Rng rng(init_seed);
    for (Layer& layer : layers_) {
        if (!layer.has_params()) {
            continue;
        }
        const std::size_t fan_in = layer.weights.size() / static_cast<std::size_t>(layer.weights.shape[0]);
        const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (double& w : layer.weights.data) {
            w = std_dev * rng.normal();
        }
    }
    round_to_storage_precision();
}

Network Network::zeros(Shape3 input, std::vector<LayerSpec> specs) {
    return Network(input, std::move(specs));
}

std::vector<LayerSpec> Network::specs() const {
    std::vector<LayerSpec> out;
    for (const Layer& l : layers_) {
        out.push_back(l.spec);
    }
    return out;
}

std::size_t Network::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const Layer& l : layers_) {
        n += l.weights.size() + l.bias.size();
    }
    return n;
}

void Network::round_to_storage_precision() {
    for (Layer& l : layers_) {
        for (double& v : l.weights.data) {
            v = static_cast<float>(v);
        }
        for (double& v : l.bias.data) {
            v = static_cast<float>(v);
        }
    }
}

Gradients Gradients::zeros_like(const Network& net) {
    Gradients g;
    for (const Layer& l : net.layers()) {
        g.weights.emplace_back(l.weights.shape);
        g.bias.emplace_back(l.bias.shape);
    }
    return g;
}

void Gradients::add(const Gradients& other) {
    for (std::size_t i = 0; i < weights.size(); ++i) {
        for (std::size_t j = 0; j < weights[i].size(); ++j) {
            weights[i].data[j] += other.weights[i].data[j];
        }
        for (std::size_t j = 0; j < bias[i].size(); ++j) {
            bias[i].data[j] += other.bias[i].data[j];
        }
    }
}

void Gradients::scale(double factor) {
    for (auto* group : {&weights, &bias}) {
        for (Tensor& t : *group) {
            for (double& v : t.data) {
                v *= factor;
            }
        }
    }
}

namespace {

// Activations of one sample: acts[0] is the input, acts[i + 1] the output of
// layer i. pool_winner[i] holds, for a MaxPool layer, the input offset that
// won each output.
struct Trace {
    std::vector<std::vector<double>> acts;
    std::vector<std::vector<int>> pool_winner;
};

std::vector<double> pad_input(const Layer& layer, const Conv& c, const double* in) {
    const int hp = layer.in.h + 2 * c.padding;
    const int wp = layer.in.w + 2 * c.padding;
    std::vector<double> padded(static_cast<std::size_t>(layer.in.c) * hp * wp, 0.0);
    for (int ch = 0; ch < layer.in.c; ++ch) {
        for (int y = 0; y < layer.in.h; ++y) {
            const double* src = in + (static_cast<std::size_t>(ch) * layer.in.h + y) * layer.in.w;
            double* dst = padded.data() + (static_cast<std::size_t>(ch) * hp + y + c.padding) * wp + c.padding;
            std::copy(src, src + layer.in.w, dst);
        }
    }
    return padded;
}

void conv_forward(const Layer& layer, const Conv& c, const double* in, double* out) {
    const std::vector<double> padded = pad_input(layer, c, in);
    const int hp = layer.in.h + 2 * c.padding;
    const int wp = layer.in.w + 2 * c.padding;
    const int oh = layer.out.h;
    const int ow = layer.out.w;
    const int k = c.kernel;
    const int s = c.stride;
    const double* w = layer.weights.data.data();
    for (int oc = 0; oc < layer.out.c; ++oc) {
        double* o = out + static_cast<std::size_t>(oc) * oh * ow;
        std::fill(o, o + static_cast<std::size_t>(oh) * ow, layer.bias.data[oc]);
        for (int ic = 0; ic < layer.in.c; ++ic) {
            const double* plane = padded.data() + static_cast<std::size_t>(ic) * hp * wp;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const double wv = w[((static_cast<std::size_t>(oc) * layer.in.c + ic) * k + ky) * k + kx];
                    for (int oy = 0; oy < oh; ++oy) {
                        const double* row = plane + static_cast<std::size_t>(oy * s + ky) * wp + kx;
                        double* orow = o + static_cast<std::size_t>(oy) * ow;
                        for (int ox = 0; ox < ow; ++ox) {
                            orow[ox] += wv * row[ox * s];
                        }
                    }
                }
            }
        }
    }
}

void conv_backward(const Layer& layer, const Conv& c, const double* in, const double* dout, Tensor& dw,
                   Tensor& db, double* din) {
    const std::vector<double> padded = pad_input(layer, c, in);
    const int hp = layer.in.h + 2 * c.padding;
    const int wp = layer.in.w + 2 * c.padding;
    const int oh = layer.out.h;
    const int ow = layer.out.w;
    const int k = c.kernel;
    const int s = c.stride;
    const double* w = layer.weights.data.data();
    std::vector<double> dpadded;
    if (din != nullptr) {
        dpadded.assign(padded.size(), 0.0);
    }
    for (int oc = 0; oc < layer.out.c; ++oc) {
        const double* g = dout + static_cast<std::size_t>(oc) * oh * ow;
        double gsum = 0.0;
        for (int i = 0; i < oh * ow; ++i) {
            gsum += g[i];
        }
        db.data[oc] += gsum;
        for (int ic = 0; ic < layer.in.c; ++ic) {
            const std::size_t plane_off = static_cast<std::size_t>(ic) * hp * wp;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const std::size_t widx = ((static_cast<std::size_t>(oc) * layer.in.c + ic) * k + ky) * k + kx;
                    const double wv = w[widx];
                    double acc = 0.0;
                    for (int oy = 0; oy < oh; ++oy) {
                        const std::size_t row_off = plane_off + static_cast<std::size_t>(oy * s + ky) * wp + kx;
                        const double* row = padded.data() + row_off;
                        const double* grow = g + static_cast<std::size_t>(oy) * ow;
                        for (int ox = 0; ox < ow; ++ox) {
                            acc += grow[ox] * row[ox * s];
                        }
                        if (din != nullptr) {
                            double* drow = dpadded.data() + row_off;
                            for (int ox = 0; ox < ow; ++ox) {
                                drow[ox * s] += wv * grow[ox];
                            }
                        }
                    }
                    dw.data[widx] += acc;
                }
            }
        }
    }
    if (din != nullptr) {
        for (int ch = 0; ch < layer.in.c; ++ch) {
            for (int y = 0; y < layer.in.h; ++y) {
                const double* src =
                    dpadded.data() + (static_cast<std::size_t>(ch) * hp + y + c.padding) * wp + c.padding;
                std::copy(src, src + layer.in.w, din + (static_cast<std::size_t>(ch) * layer.in.h + y) * layer.in.w);
            }
        }
    }
}

void pool_forward(const Layer& layer, const MaxPool& p, const double* in, double* out, std::vector<int>& winner) {
    winner.resize(layer.out.size());
    std::size_t o = 0;
    for (int ch = 0; ch < layer.out.c; ++ch) {
        const std::size_t plane = static_cast<std::size_t>(ch) * layer.in.h * layer.in.w;
        for (int oy = 0; oy < layer.out.h; ++oy) {
            for (int ox = 0; ox < layer.out.w; ++ox, ++o) {
                int best = -1;
                double best_v = -std::numeric_limits<double>::infinity();
                for (int wy = 0; wy < p.window; ++wy) {
                    for (int wx = 0; wx < p.window; ++wx) {
                        const int idx = static_cast<int>(plane) + (oy * p.stride + wy) * layer.in.w + ox * p.stride + wx;
                        if (best < 0 || in[idx] > best_v) {
                            best = idx;
                            best_v = in[idx];
                        }
                    }
                }
                out[o] = best_v;
                winner[o] = best;
            }
        }
    }
}

void dense_forward(const Layer& layer, const double* in, double* out) {
    const int n_out = layer.out.c;
    const auto n_in = static_cast<int>(layer.in.size());
    for (int j = 0; j < n_out; ++j) {
        const double* wrow = layer.weights.data.data() + static_cast<std::size_t>(j) * n_in;
        double acc = layer.bias.data[j];
        for (int i = 0; i < n_in; ++i) {
            acc += wrow[i] * in[i];
        }
        out[j] = acc;
    }
}

void forward_sample(const Network& net, const double* input, Trace& trace) {
    const auto& layers = net.layers();
    trace.acts.resize(layers.size() + 1);
    trace.pool_winner.resize(layers.size());
    trace.acts[0].assign(input, input + net.input_shape().size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Layer& layer = layers[i];
        const double* in = trace.acts[i].data();
        std::vector<double>& out = trace.acts[i + 1];
        out.assign(layer.out.size(), 0.0);
        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, Conv>) {
                    conv_forward(layer, s, in, out.data());
                } else if constexpr (std::is_same_v<T, ReLU>) {
                    for (std::size_t j = 0; j < out.size(); ++j) {
                        out[j] = in[j] > 0.0 ? in[j] : 0.0;
                    }
                } else if constexpr (std::is_same_v<T, MaxPool>) {
                    pool_forward(layer, s, in, out.data(), trace.pool_winner[i]);
                } else if constexpr (std::is_same_v<T, Flatten>) {
                    std::copy(in, in + out.size(), out.begin());
                } else {
                    dense_forward(layer, in, out.data());
                }
            },
            layer.spec);
    }
}

// Adds this sample's parameter gradients into `grads`, given dL/dlogits.
void backward_sample(const Network& net, const Trace& trace, std::vector<double> grad, Gradients& grads) {
    const auto& layers = net.layers();
    for (std::size_t li = layers.size(); li-- > 0;) {
        const Layer& layer = layers[li];
        const double* in = trace.acts[li].data();
        const bool need_input_grad = li > 0;
        std::vector<double> din;
        if (need_input_grad) {
            din.assign(layer.in.size(), 0.0);
        }
        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, Conv>) {
                    conv_backward(layer, s, in, grad.data(), grads.weights[li], grads.bias[li],
                                  need_input_grad ? din.data() : nullptr);
                } else if constexpr (std::is_same_v<T, ReLU>) {
                    if (need_input_grad) {
                        for (std::size_t j = 0; j < din.size(); ++j) {
                            din[j] = in[j] > 0.0 ? grad[j] : 0.0;
                        }
                    }
                } else if constexpr (std::is_same_v<T, MaxPool>) {
                    if (need_input_grad) {
                        const auto& winner = trace.pool_winner[li];
                        for (std::size_t j = 0; j < grad.size(); ++j) {
                            din[winner[j]] += grad[j];
                        }
                    }
                } else if constexpr (std::is_same_v<T, Flatten>) {
                    if (need_input_grad) {
                        din = grad;
                    }
                } else {
                    const int n_out = layer.out.c;
                    const auto n_in = static_cast<int>(layer.in.size());
                    Tensor& dw = grads.weights[li];
                    for (int j = 0; j < n_out; ++j) {
                        const double g = grad[j];
                        grads.bias[li].data[j] += g;
                        if (g == 0.0) {
                            continue;
                        }
                        double* dwrow = dw.data.data() + static_cast<std::size_t>(j) * n_in;
                        const double* wrow = layer.weights.data.data() + static_cast<std::size_t>(j) * n_in;
                        for (int i = 0; i < n_in; ++i) {
                            dwrow[i] += g * in[i];
                        }
                        if (need_input_grad) {
                            for (int i = 0; i < n_in; ++i) {
                                din[i] += wrow[i] * g;
                            }
                        }
                    }
                }
            },
            layer.spec);
        grad = std::move(din);
    }
}

// Cross-entropy of one logit row; writes softmax(row) - onehot scaled by
// `scale` into `dlogits` when given.
double row_cross_entropy(std::span<const double> row, int label, double scale, double* dlogits) {
    const double max_v = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) {
        sum += std::exp(v - max_v);
    }
    const double log_sum = std::log(sum);
    if (dlogits != nullptr) {
        for (std::size_t k = 0; k < row.size(); ++k) {
            const double p = std::exp(row[k] - max_v - log_sum);
            dlogits[k] = (p - (static_cast<int>(k) == label ? 1.0 : 0.0)) * scale;
        }
    }
    return -(row[label] - max_v - log_sum);
}

void check_batch(const Network& net, const Tensor& batch) {
    const Shape3 in = net.input_shape();
    if (batch.shape.size() != 4 || batch.shape[1] != in.c || batch.shape[2] != in.h || batch.shape[3] != in.w) {
        std::string got;
        for (int d : batch.shape) {
            got += (got.empty() ? "" : "x") + std::to_string(d);
        }
        throw DomainError("layer 0 " + describe(net.layers().front().spec) + ": expects input Bx" +
                          std::to_string(in.c) + "x" + std::to_string(in.h) + "x" + std::to_string(in.w) +
                          ", got " + got);
    }
}

void check_labels(std::span<const int> labels, std::size_t batch, int classes) {
    if (labels.size() != batch) {
        throw DomainError("label count does not match batch size");
    }
    for (int l : labels) {
        if (l < 0 || l >= classes) {
            throw DomainError("label " + std::to_string(l) + " outside [0," + std::to_string(classes) + ")");
        }
    }
}

// Loss and accumulated gradients over samples given by pointer, in order.
double accumulate_batch(const Network& net, std::span<const double* const> inputs, std::span<const int> labels,
                        Gradients& grads) {
    const auto batch = static_cast<double>(inputs.size());
    const int classes = net.head_classes();
    Trace trace;
    double loss = 0.0;
    std::vector<double> dlogits(static_cast<std::size_t>(classes));
    for (std::size_t b = 0; b < inputs.size(); ++b) {
        forward_sample(net, inputs[b], trace);
        loss += row_cross_entropy(trace.acts.back(), labels[b], 1.0 / batch, dlogits.data());
        backward_sample(net, trace, dlogits, grads);
    }
    return loss / batch;
}

std::vector<const double*> sample_pointers(const Tensor& batch) {
    const std::size_t per = batch.size() / static_cast<std::size_t>(batch.shape[0]);
    std::vector<const double*> ptrs;
    for (int b = 0; b < batch.shape[0]; ++b) {
        ptrs.push_back(batch.data.data() + b * per);
    }
    return ptrs;
}

double batch_loss(const Network& net, const Tensor& batch, std::span<const int> labels) {
    return softmax_cross_entropy(forward(net, batch), labels).loss;
}

} // namespace

Tensor forward(const Network& net, const Tensor& batch) {
    check_batch(net, batch);
    const int b_count = batch.shape[0];
    const int classes = net.head_classes();
    Tensor logits({b_count, classes});
    Trace trace;
    const auto ptrs = sample_pointers(batch);
    for (int b = 0; b < b_count; ++b) {
        forward_sample(net, ptrs[b], trace);
        std::copy(trace.acts.back().begin(), trace.acts.back().end(),
                  logits.data.begin() + static_cast<std::ptrdiff_t>(b) * classes);
    }
#ifndef NDEBUG
    for (double v : logits.data) {
        if (!std::isfinite(v)) {
            throw DomainError("non-finite logit");
        }
    }
#endif
    return logits;
}

std::vector<double> softmax(std::span<const double> logits) {
    const double max_v = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(logits[i] - max_v);
        sum += p[i];
    }
    for (double& v : p) {
        v /= sum;
    }
    return p;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.shape.size() != 2) {
        throw DomainError("logits must be a [B, K] tensor");
    }
    const int batch = logits.shape[0];
    const int classes = logits.shape[1];
    check_labels(labels, static_cast<std::size_t>(batch), classes);
    LossResult r{0.0, Tensor(logits.shape)};
    for (int b = 0; b < batch; ++b) {
        const std::span<const double> row(logits.data.data() + static_cast<std::ptrdiff_t>(b) * classes,
                                          static_cast<std::size_t>(classes));
        r.loss += row_cross_entropy(row, labels[b], 1.0 / batch,
                                    r.dlogits.data.data() + static_cast<std::ptrdiff_t>(b) * classes);
    }
    r.loss /= batch;
    return r;
}

BackwardResult backward(const Network& net, const Tensor& batch, std::span<const int> labels) {
    check_batch(net, batch);
    check_labels(labels, static_cast<std::size_t>(batch.shape[0]), net.head_classes());
    BackwardResult r{0.0, Gradients::zeros_like(net)};
    const auto ptrs = sample_pointers(batch);
    r.loss = accumulate_batch(net, ptrs, labels, r.grads);
    return r;
}

ActivationPattern activation_pattern(const Network& net, const Tensor& batch) {
    check_batch(net, batch);
    ActivationPattern pattern;
    Trace trace;
    for (const double* sample : sample_pointers(batch)) {
        forward_sample(net, sample, trace);
        for (std::size_t i = 0; i < net.layers().size(); ++i) {
            const LayerSpec& spec = net.layers()[i].spec;
            if (std::holds_alternative<ReLU>(spec)) {
                for (double v : trace.acts[i]) {
                    pattern.push_back(v > 0.0 ? 1 : (v < 0.0 ? -1 : 0));
                }
            } else if (std::holds_alternative<MaxPool>(spec)) {
                pattern.insert(pattern.end(), trace.pool_winner[i].begin(), trace.pool_winner[i].end());
            }
        }
    }
    return pattern;
}

GradCheckResult grad_check(const Network& net, const Tensor& batch, std::span<const int> labels,
                           const GradCheckOptions& options) {
    if (!(options.eps > 0.0)) {
        throw DomainError("grad_check eps must be positive");
    }
    const BackwardResult analytic = backward(net, batch, labels);
    const ActivationPattern base_pattern = activation_pattern(net, batch);

    struct ParamRef {
        std::size_t layer;
        bool is_bias;
        std::size_t index;
    };
    std::vector<ParamRef> params;
    for (std::size_t li = 0; li < net.layers().size(); ++li) {
        for (std::size_t j = 0; j < net.layers()[li].weights.size(); ++j) {
            params.push_back({li, false, j});
        }
        for (std::size_t j = 0; j < net.layers()[li].bias.size(); ++j) {
            params.push_back({li, true, j});
        }
    }
    if (options.max_parameters > 0 && options.max_parameters < params.size()) {
        Rng rng(options.seed);
        for (std::size_t i = 0; i < options.max_parameters; ++i) {
            const int j = rng.uniform_int(static_cast<int>(i), static_cast<int>(params.size() - 1));
            std::swap(params[i], params[static_cast<std::size_t>(j)]);
        }
        params.resize(options.max_parameters);
    }

    Network probe = net;
    GradCheckResult result;
    for (const ParamRef& p : params) {
        Layer& layer = probe.layers()[p.layer];
        double& value = p.is_bias ? layer.bias.data[p.index] : layer.weights.data[p.index];
        const double original = value;

        value = original + options.eps;
        const double loss_plus = batch_loss(probe, batch, labels);
        const bool kink_plus = activation_pattern(probe, batch) != base_pattern;
        value = original - options.eps;
        const double loss_minus = batch_loss(probe, batch, labels);
        const bool kink_minus = activation_pattern(probe, batch) != base_pattern;
        value = original;

        if (kink_plus || kink_minus) {
            ++result.excluded_kinks;
            continue;
        }
        const double numeric = (loss_plus - loss_minus) / (2.0 * options.eps);
        const Tensor& g = p.is_bias ? analytic.grads.bias[p.layer] : analytic.grads.weights[p.layer];
        const double a = g.data[p.index];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric) / denom);
        ++result.checked;
    }
    return result;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) {
        throw DomainError("learning rate must be positive");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw DomainError("momentum must lie in [0,1)");
    }
    if (batch_size < 1 || epochs < 0) {
        throw DomainError("batch size must be positive and epochs non-negative");
    }
    if (jitter < 0) {
        throw DomainError("jitter must be non-negative");
    }
}

namespace {

// Localization relabelling under jitter; absent for existence training.
struct JitterRelabel {
    std::span<const PixelPoint> vps;
    const GridSpec* grid = nullptr;
};

TrainResult run_training(Network net, std::span<const ImageRaster> images, std::span<const int> labels,
                         const TrainConfig& cfg, const JitterRelabel& relabel) {
    cfg.validate();
    if (images.empty()) {
        throw DomainError("training split is empty");
    }
    check_labels(labels, images.size(), net.head_classes());
    const Shape3 in = net.input_shape();
    for (const ImageRaster& img : images) {
        if (in.c != 1 || img.width() != in.w || img.height() != in.h) {
            throw DomainError("training image size does not match the network input");
        }
    }

    std::vector<Tensor> velocity_w;
    std::vector<Tensor> velocity_b;
    for (const Layer& l : net.layers()) {
        velocity_w.emplace_back(l.weights.shape);
        velocity_b.emplace_back(l.bias.shape);
    }

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(images.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    TrainResult result{std::move(net), {}};
    Network& model = result.net;
    std::vector<ImageRaster> shifted;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.shuffle) {
            for (std::size_t i = order.size() - 1; i > 0; --i) {
                std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i)))]);
            }
        }
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const double*> inputs;
            std::vector<int> batch_labels;
            shifted.clear();
            shifted.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                const std::size_t idx = order[i];
                if (cfg.jitter <= 0) {
                    inputs.push_back(images[idx].pixels().data());
                    batch_labels.push_back(labels[idx]);
                    continue;
                }
                int dx = rng.uniform_int(-cfg.jitter, cfg.jitter);
                int dy = rng.uniform_int(-cfg.jitter, cfg.jitter);
                int label = labels[idx];
                if (relabel.grid != nullptr) {
                    const PixelPoint vp = relabel.vps[idx];
                    const GridSpec& g = *relabel.grid;
                    // Keep the shifted VP inside the frame.
                    dx = std::clamp(dx, static_cast<int>(std::floor(vp.x - g.width())) + 1,
                                    static_cast<int>(std::floor(vp.x)));
                    dy = std::clamp(dy, static_cast<int>(std::floor(vp.y - g.height())) + 1,
                                    static_cast<int>(std::floor(vp.y)));
                    label = linearize(pixel_to_cell({vp.x - dx, vp.y - dy}, g), g);
                }
                shifted.push_back(vpgrid::jitter(images[idx], dx, dy).image);
                inputs.push_back(shifted.back().pixels().data());
                batch_labels.push_back(label);
            }
            Gradients grads = Gradients::zeros_like(model);
            const double loss = accumulate_batch(model, inputs, batch_labels, grads);
            epoch_loss += loss * static_cast<double>(stop - start);

            for (std::size_t li = 0; li < model.layers().size(); ++li) {
                Layer& layer = model.layers()[li];
                auto step = [&](Tensor& param, Tensor& velocity, const Tensor& grad) {
                    for (std::size_t j = 0; j < param.size(); ++j) {
                        velocity.data[j] = cfg.momentum * velocity.data[j] - cfg.learning_rate * grad.data[j];
                        param.data[j] += velocity.data[j];
                    }
                };
                step(layer.weights, velocity_w[li], grads.weights[li]);
                step(layer.bias, velocity_b[li], grads.bias[li]);
            }
        }
        result.loss_curve.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    model.round_to_storage_precision();
    return result;
}

} // namespace

TrainResult train_samples(Network net, std::span<const ImageRaster> images, std::span<const int> labels,
                          const TrainConfig& cfg) {
    return run_training(std::move(net), images, labels, cfg, {});
}

TrainResult train_samples(Network net, const LabelledSet& set, const GridSpec& grid, const TrainConfig& cfg) {
    JitterRelabel relabel;
    if (set.task == Task::localization) {
        if (set.vps.size() != set.images.size()) {
            throw DomainError("localization set needs one VP per image");
        }
        relabel = {set.vps, &grid};
    }
    return run_training(std::move(net), set.images, set.labels, cfg, relabel);
}

Task parse_task(const std::string& name) {
    if (name == "existence") {
        return Task::existence;
    }
    if (name == "localization") {
        return Task::localization;
    }
    throw DomainError("unknown task '" + name + "'");
}

const char* to_string(Task task) noexcept {
    return task == Task::existence ? "existence" : "localization";
}

LabelledSet load_split(const DatasetManifest& manifest, const std::filesystem::path& manifest_dir, Split split,
                       Task task, const GridSpec& grid) {
    LabelledSet set;
    set.task = task;
    for (const ManifestEntry* e : manifest.select(split)) {
        if (task == Task::localization && !e->has_vp) {
            continue;
        }
        ImageRaster img = read_pgm(manifest_dir / e->path);
        if (img.width() != manifest.width || img.height() != manifest.height) {
            throw DomainError("image " + e->path + " does not match the manifest size");
        }
        set.images.push_back(std::move(img));
        if (task == Task::existence) {
            set.labels.push_back(e->has_vp ? 1 : 0);
        } else {
            set.labels.push_back(linearize(pixel_to_cell(*e->vp, grid), grid));
            set.vps.push_back(*e->vp);
        }
    }
    return set;
}

TrainResult train(Network net, const DatasetManifest& manifest, const std::filesystem::path& manifest_dir,
                  Task task, const GridSpec& grid, const TrainConfig& cfg) {
    const int expected = task == Task::existence ? 2 : grid.class_count();
    if (net.head_classes() != expected) {
        throw DomainError("network head has " + std::to_string(net.head_classes()) + " classes, task needs " +
                          std::to_string(expected));
    }
    const LabelledSet set = load_split(manifest, manifest_dir, Split::train, task, grid);
    if (set.images.empty()) {
        throw DomainError("training split has no usable samples");
    }
    return train_samples(std::move(net), set, grid, cfg);
}

Tensor image_batch(std::span<const ImageRaster> images) {
    if (images.empty()) {
        throw DomainError("empty image batch");
    }
    const int w = images.front().width();
    const int h = images.front().height();
    Tensor t({static_cast<int>(images.size()), 1, h, w});
    auto out = t.data.begin();
    for (const ImageRaster& img : images) {
        if (img.width() != w || img.height() != h) {
            throw DomainError("batch images differ in size");
        }
        out = std::copy(img.pixels().begin(), img.pixels().end(), out);
    }
    return t;
}

double predict_existence(const Network& net, const ImageRaster& img) {
    if (net.head_classes() != 2) {
        throw DomainError("existence prediction needs a 2-class head");
    }
    const Tensor logits = forward(net, image_batch(std::span(&img, 1)));
    return softmax(logits.data)[1];
}

RankedPrediction predict_localization(const Network& net, const ImageRaster& img, const GridSpec& grid,
                                      std::size_t top_k) {
    if (net.head_classes() != grid.class_count()) {
        throw DomainError("network head has " + std::to_string(net.head_classes()) + " classes, grid has " +
                          std::to_string(grid.class_count()));
    }
    const Tensor logits = forward(net, image_batch(std::span(&img, 1)));
    return RankedPrediction::from_scores(softmax(logits.data), grid, top_k);
}

namespace {

constexpr char kMagic[4] = {'V', 'P', 'G', '1'};

enum LayerTag : std::int32_t { kConv = 0, kReLU = 1, kMaxPool = 2, kFlatten = 3, kDense = 4 };

class ByteWriter {
public:
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(const char* p, std::size_t n) { bytes.insert(bytes.end(), p, p + n); }

    std::vector<std::uint8_t> bytes;

private:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
};

class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> bytes, std::size_t start) : bytes_(bytes), pos_(start) {}

    std::size_t offset() const noexcept { return pos_; }
    bool at_end() const noexcept { return pos_ == bytes_.size(); }

    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    float f32() { return std::bit_cast<float>(u32()); }

    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw ParseError("model file truncated", pos_);
        }
    }

private:
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_;
};

void write_tensor(ByteWriter& out, const Tensor& t) {
    out.i32(static_cast<std::int32_t>(t.shape.size()));
    for (int d : t.shape) {
        out.i32(d);
    }
    for (double v : t.data) {
        if (!std::isfinite(v)) {
            throw DomainError("cannot save a model with non-finite parameters");
        }
        out.f32(static_cast<float>(v));
    }
}

void read_tensor(ByteReader& in, Tensor& t) {
    const std::size_t off = in.offset();
    const std::int32_t rank = in.i32();
    if (rank != static_cast<std::int32_t>(t.shape.size())) {
        throw ParseError("tensor rank disagrees with the layer", off);
    }
    for (int expected : t.shape) {
        const std::size_t dim_off = in.offset();
        if (in.i32() != expected) {
            throw ParseError("tensor shape disagrees with the layer", dim_off);
        }
    }
    in.need(t.size() * 4);
    for (double& v : t.data) {
        v = in.f32();
    }
}

} // namespace

std::vector<std::uint8_t> encode_model(const Network& net) {
    ByteWriter out;
    out.raw(kMagic, sizeof kMagic);
    out.i32(net.input_shape().c);
    out.i32(net.input_shape().h);
    out.i32(net.input_shape().w);
    out.i32(static_cast<std::int32_t>(net.layers().size()));
    for (const Layer& l : net.layers()) {
        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, Conv>) {
                    out.i32(kConv);
                    out.i32(s.out_channels);
                    out.i32(s.kernel);
                    out.i32(s.stride);
                    out.i32(s.padding);
                } else if constexpr (std::is_same_v<T, ReLU>) {
                    out.i32(kReLU);
                } else if constexpr (std::is_same_v<T, MaxPool>) {
                    out.i32(kMaxPool);
                    out.i32(s.window);
                    out.i32(s.stride);
                } else if constexpr (std::is_same_v<T, Flatten>) {
                    out.i32(kFlatten);
                } else {
                    out.i32(kDense);
                    out.i32(s.out_features);
                }
            },
            l.spec);
    }
    for (const Layer& l : net.layers()) {
        if (l.has_params()) {
            write_tensor(out, l.weights);
            write_tensor(out, l.bias);
        }
    }
    return std::move(out.bytes);
}

Network decode_model(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
        throw ParseError("bad model magic (expected VPG1)", 0);
    }
    ByteReader in(bytes, 4);
    Shape3 input;
    input.c = in.i32();
    input.h = in.i32();
    input.w = in.i32();
    const std::size_t count_off = in.offset();
    const std::int32_t count = in.i32();
    if (count < 1 || count > 4096) {
        throw ParseError("implausible layer count", count_off);
    }
    std::vector<LayerSpec> specs;
    for (std::int32_t i = 0; i < count; ++i) {
        const std::size_t tag_off = in.offset();
        switch (in.i32()) {
        case kConv: {
            Conv c;
            c.out_channels = in.i32();
            c.kernel = in.i32();
            c.stride = in.i32();
            c.padding = in.i32();
            specs.emplace_back(c);
            break;
        }
        case kReLU:
            specs.emplace_back(ReLU{});
            break;
        case kMaxPool: {
            MaxPool p;
            p.window = in.i32();
            p.stride = in.i32();
            specs.emplace_back(p);
            break;
        }
        case kFlatten:
            specs.emplace_back(Flatten{});
            break;
        case kDense:
            specs.emplace_back(Dense{in.i32()});
            break;
        default:
            throw ParseError("unknown layer tag", tag_off);
        }
    }
    Network net = [&] {
        try {
            return Network::zeros(input, specs);
        } catch (const DomainError& e) {
            throw ParseError(std::string("inconsistent architecture: ") + e.what(), count_off);
        }
    }();
    for (Layer& l : net.layers()) {
        if (l.has_params()) {
            read_tensor(in, l.weights);
            read_tensor(in, l.bias);
        }
    }
    if (!in.at_end()) {
        throw ParseError("trailing bytes after model", in.offset());
    }
    return net;
}

void save_model(const Network& net, const std::filesystem::path& path) {
    write_file_bytes(path, encode_model(net));
}

Network load_model(const std::filesystem::path& path) {
    return decode_model(read_file_bytes(path));
}

} // namespace vpgrid::nn
