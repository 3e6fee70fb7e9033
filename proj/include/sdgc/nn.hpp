#pragma once

// Minimal dense-network substrate: MLP forward, reverse-mode gradients, SGD,
// and the binary checkpoint format shared by every trainable component.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sdgc/errors.hpp"
#include "sdgc/ndarray.hpp"
#include "sdgc/rng.hpp"

namespace sdgc {

enum class Activation { relu, tanh, identity, sigmoid };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::identity: return "identity";
        case Activation::sigmoid: return "sigmoid";
    }
    return "?";
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "identity") return Activation::identity;
    if (s == "sigmoid") return Activation::sigmoid;
    throw config_error("unknown activation '" + s + "'");
}

inline double apply_activation(Activation a, double x) {
    switch (a) {
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::tanh: return std::tanh(x);
        case Activation::identity: return x;
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-x));
    }
    return x;
}

// Derivative expressed through the post-activation value y = f(x).
inline double activation_deriv_from_output(Activation a, double y) {
    switch (a) {
        case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
        case Activation::tanh: return 1.0 - y * y;
        case Activation::identity: return 1.0;
        case Activation::sigmoid: return y * (1.0 - y);
    }
    return 1.0;
}

struct MlpModel {
    std::vector<std::size_t> widths;   // layer_count + 1 entries
    std::vector<NdArray> weights;      // (out, in) per layer
    std::vector<NdArray> biases;       // (out) per layer
    Activation hidden_act = Activation::tanh;
    Activation output_act = Activation::identity;
    std::uint64_t seed = 0;

    std::size_t layer_count() const { return weights.size(); }
    std::size_t input_width() const { return widths.front(); }
    std::size_t output_width() const { return widths.back(); }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
        return n;
    }

    Activation layer_activation(std::size_t l) const {
        return l + 1 == layer_count() ? output_act : hidden_act;
    }
};

// Weights uniform in +-sqrt(6/(fan_in+fan_out)), biases zero, seeded.
inline MlpModel make_mlp(std::vector<std::size_t> widths, Activation hidden,
                         Activation output, std::uint64_t seed) {
    if (widths.size() < 2) throw std::invalid_argument("make_mlp: need at least one layer");
    for (std::size_t w : widths) {
        if (w == 0) throw std::invalid_argument("make_mlp: zero layer width");
    }
    MlpModel m;
    m.widths = std::move(widths);
    m.hidden_act = hidden;
    m.output_act = output;
    m.seed = seed;
    Rng rng = Rng::split(seed, {0x6d6c70 /*"mlp"*/});
    for (std::size_t l = 0; l + 1 < m.widths.size(); ++l) {
        const std::size_t in = m.widths[l];
        const std::size_t out = m.widths[l + 1];
        NdArray w(Shape{out, in});
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
        m.weights.push_back(std::move(w));
        m.biases.push_back(NdArray(Shape{out}));
    }
    return m;
}

namespace detail {

// y (rows, out) = x (rows, in) * W^T + b, then activation.
inline void dense_forward(const NdArray& x, const NdArray& w, const NdArray& b,
                          Activation act, std::size_t rows, NdArray& y) {
    const std::size_t in = w.shape().dims[1];
    const std::size_t out = w.shape().dims[0];
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * in;
        double* yr = y.data() + r * out;
        for (std::size_t o = 0; o < out; ++o) {
            const double* wrow = w.data() + o * in;
            double acc = b[o];
            for (std::size_t i = 0; i < in; ++i) acc += wrow[i] * xr[i];
            yr[o] = apply_activation(act, acc);
        }
    }
}

inline std::size_t batch_rows(const NdArray& input, std::size_t in_width, const char* where) {
    if (input.shape().rank() == 0 || input.size() == 0) {
        throw std::invalid_argument(std::string(where) + ": empty input");
    }
    const std::size_t last = input.shape().dims.back();
    if (last != in_width) {
        throw std::invalid_argument(std::string(where) + ": input width " + std::to_string(last) +
                                    " does not match model input width " + std::to_string(in_width) +
                                    " (input shape " + input.shape().str() + ")");
    }
    return input.size() / in_width;
}

}  // namespace detail

// Deterministic batched inference. Leading dimensions are treated as batch.
inline NdArray forward(const MlpModel& model, const NdArray& input) {
    const std::size_t rows = detail::batch_rows(input, model.input_width(), "forward");
    std::vector<std::size_t> out_dims = input.shape().dims;
    out_dims.back() = model.output_width();

    NdArray cur = input;
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        NdArray next(Shape{rows, model.widths[l + 1]});
        detail::dense_forward(cur, model.weights[l], model.biases[l],
                              model.layer_activation(l), rows, next);
        cur = std::move(next);
    }
    return NdArray(Shape(out_dims), std::move(cur.values()));
}

struct MlpGradients {
    std::vector<NdArray> d_weights;
    std::vector<NdArray> d_biases;
    NdArray d_input;  // same shape as the forward input
};

// Reverse-mode gradients of sum(upstream .* output) w.r.t. every parameter
// and the input. `upstream` must match the forward-output shape.
inline MlpGradients grad(const MlpModel& model, const NdArray& input, const NdArray& upstream) {
    const std::size_t rows = detail::batch_rows(input, model.input_width(), "grad");
    if (upstream.size() != rows * model.output_width()) {
        throw std::invalid_argument("grad: upstream shape " + upstream.shape().str() +
                                    " does not match forward output (" + std::to_string(rows) +
                                    " rows x " + std::to_string(model.output_width()) + ")");
    }

    const std::size_t L = model.layer_count();
    std::vector<NdArray> acts(L + 1);  // post-activation values, acts[0] = input
    acts[0] = input;
    for (std::size_t l = 0; l < L; ++l) {
        acts[l + 1] = NdArray(Shape{rows, model.widths[l + 1]});
        detail::dense_forward(acts[l], model.weights[l], model.biases[l],
                              model.layer_activation(l), rows, acts[l + 1]);
    }

    MlpGradients g;
    g.d_weights.resize(L);
    g.d_biases.resize(L);
    NdArray delta = upstream;  // dL/d(post-activation) of current layer
    for (std::size_t li = L; li-- > 0;) {
        const std::size_t in = model.widths[li];
        const std::size_t out = model.widths[li + 1];
        const Activation act = model.layer_activation(li);
        // through the activation
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < out; ++o) {
                const double y = acts[li + 1][r * out + o];
                delta[r * out + o] *= activation_deriv_from_output(act, y);
            }
        }
        NdArray dw(Shape{out, in});
        NdArray db(Shape{out});
        NdArray dx(Shape{rows, in});
        for (std::size_t r = 0; r < rows; ++r) {
            const double* xr = acts[li].data() + r * in;
            const double* dr = delta.data() + r * out;
            double* dxr = dx.data() + r * in;
            for (std::size_t o = 0; o < out; ++o) {
                const double d = dr[o];
                if (d == 0.0) continue;
                db[o] += d;
                const double* wrow = model.weights[li].data() + o * in;
                double* dwrow = dw.data() + o * in;
                for (std::size_t i = 0; i < in; ++i) {
                    dwrow[i] += d * xr[i];
                    dxr[i] += d * wrow[i];
                }
            }
        }
        g.d_weights[li] = std::move(dw);
        g.d_biases[li] = std::move(db);
        delta = std::move(dx);
    }
    std::vector<double> din = std::move(delta.values());
    g.d_input = NdArray(input.shape(), std::move(din));
    return g;
}

struct SgdConfig {
    double learning_rate = 1e-3;
    std::size_t max_steps = 1000;
    std::size_t batch_size = 16;
};

// max_steps = 0 is the degenerate no-op training run.
inline void validate(const SgdConfig& cfg) {
    if (!(cfg.learning_rate > 0.0)) throw config_error("sgd: learning rate must be > 0");
    if (cfg.batch_size == 0) throw config_error("sgd: batch size must be positive");
}

// In-place p <- p - lr*g. Non-finite gradients are rejected with the offending
// parameter's flat index.
inline void sgd_step(MlpModel& model, const MlpGradients& grads, double learning_rate) {
    if (grads.d_weights.size() != model.layer_count()) {
        throw std::invalid_argument("sgd_step: gradient set does not match model topology");
    }
    std::size_t flat = 0;
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        if (grads.d_weights[l].shape() != model.weights[l].shape() ||
            grads.d_biases[l].shape() != model.biases[l].shape()) {
            throw std::invalid_argument("sgd_step: gradient shape mismatch at layer " + std::to_string(l));
        }
        for (std::size_t i = 0; i < grads.d_weights[l].size(); ++i, ++flat) {
            if (!std::isfinite(grads.d_weights[l][i])) {
                throw divergence_error("sgd_step: non-finite gradient at parameter index " +
                                       std::to_string(flat) + " (layer " + std::to_string(l) + " weight)");
            }
        }
        for (std::size_t i = 0; i < grads.d_biases[l].size(); ++i, ++flat) {
            if (!std::isfinite(grads.d_biases[l][i])) {
                throw divergence_error("sgd_step: non-finite gradient at parameter index " +
                                       std::to_string(flat) + " (layer " + std::to_string(l) + " bias)");
            }
        }
    }
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        for (std::size_t i = 0; i < model.weights[l].size(); ++i) {
            model.weights[l][i] -= learning_rate * grads.d_weights[l][i];
        }
        for (std::size_t i = 0; i < model.biases[l].size(); ++i) {
            model.biases[l][i] -= learning_rate * grads.d_biases[l][i];
        }
    }
}

inline void sgd_step(MlpModel& model, const MlpGradients& grads, const SgdConfig& cfg) {
    validate(cfg);
    sgd_step(model, grads, cfg.learning_rate);
}

// ---------------------------------------------------------------------------
// Checkpoint format. Little-endian throughout:
//   "SDGC" | version u32 | [version 2 only: branch char[8], T u32, beta1 f64,
//   beta_t f64] | layer count u32 | widths u32 x (layers+1) | params f64,
//   weights row-major then bias, per layer.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class ByteReader {
public:
    ByteReader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        double d;
        std::memcpy(&d, &v, 8);
        return d;
    }

    std::string raw(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool exhausted() const { return pos_ == bytes_.size(); }

    void expect_exhausted() const {
        if (!exhausted()) throw config_error("checkpoint '" + path_ + "': trailing bytes");
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw config_error("checkpoint '" + path_ + "': truncated");
    }
    const std::string& bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw config_error("cannot write '" + path + "'");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw config_error("short write to '" + path + "'");
}

inline void serialize_body(std::string& out, const MlpModel& m) {
    put_u32(out, static_cast<std::uint32_t>(m.layer_count()));
    for (std::size_t w : m.widths) put_u32(out, static_cast<std::uint32_t>(w));
    for (std::size_t l = 0; l < m.layer_count(); ++l) {
        for (std::size_t i = 0; i < m.weights[l].size(); ++i) put_f64(out, m.weights[l][i]);
        for (std::size_t i = 0; i < m.biases[l].size(); ++i) put_f64(out, m.biases[l][i]);
    }
}

inline MlpModel deserialize_body(ByteReader& r, Activation hidden, Activation output) {
    const std::uint32_t layers = r.u32();
    if (layers == 0) throw config_error("checkpoint: zero layers");
    MlpModel m;
    m.hidden_act = hidden;
    m.output_act = output;
    for (std::uint32_t i = 0; i <= layers; ++i) {
        const std::uint32_t w = r.u32();
        if (w == 0) throw config_error("checkpoint: zero layer width");
        m.widths.push_back(w);
    }
    for (std::uint32_t l = 0; l < layers; ++l) {
        NdArray w(Shape{m.widths[l + 1], m.widths[l]});
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = r.f64();
        NdArray b(Shape{m.widths[l + 1]});
        for (std::size_t i = 0; i < b.size(); ++i) b[i] = r.f64();
        m.weights.push_back(std::move(w));
        m.biases.push_back(std::move(b));
    }
    return m;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'S', 'D', 'G', 'C'};

inline void save_model(const std::string& path, const MlpModel& m) {
    std::string out(kCheckpointMagic, 4);
    detail::put_u32(out, 1);
    detail::serialize_body(out, m);
    detail::write_file_bytes(path, out);
}

inline MlpModel load_model(const std::string& path, Activation hidden, Activation output) {
    const std::string bytes = detail::read_file_bytes(path);
    detail::ByteReader r(bytes, path);
    if (r.raw(4) != std::string(kCheckpointMagic, 4)) throw config_error("'" + path + "': bad magic");
    const std::uint32_t version = r.u32();
    if (version != 1) throw config_error("'" + path + "': expected version 1, got " + std::to_string(version));
    MlpModel m = detail::deserialize_body(r, hidden, output);
    r.expect_exhausted();
    return m;
}

}  // namespace sdgc
