#include "wsret/encoder.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "wsret/error.hpp"
#include "wsret/rng.hpp"

namespace wsret {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

constexpr int kKernel = 3;
constexpr int kTaps = kKernel * kKernel * kKernel;

struct ConvShape {
    int cin, cout, din, dout, stride;
    int in_vox() const { return din * din * din; }
    int out_vox() const { return dout * dout * dout; }
};

int down_size(int d) { return (d - 1) / 2 + 1; }  // k=3, s=2, p=1

void im2col(const double* in, const ConvShape& s, RowMat& cols) {
    cols.setZero(s.cin * kTaps, s.out_vox());
    for (int c = 0; c < s.cin; ++c) {
        const double* src = in + static_cast<std::size_t>(c) * s.in_vox();
        for (int kz = 0; kz < kKernel; ++kz)
            for (int ky = 0; ky < kKernel; ++ky)
                for (int kx = 0; kx < kKernel; ++kx) {
                    double* row = cols.row(((c * kKernel + kz) * kKernel + ky) * kKernel + kx).data();
                    for (int oz = 0; oz < s.dout; ++oz) {
                        const int iz = oz * s.stride - 1 + kz;
                        if (iz < 0 || iz >= s.din) continue;
                        for (int oy = 0; oy < s.dout; ++oy) {
                            const int iy = oy * s.stride - 1 + ky;
                            if (iy < 0 || iy >= s.din) continue;
                            const double* line = src + (static_cast<std::size_t>(iz) * s.din + iy) * s.din;
                            double* dst = row + (static_cast<std::size_t>(oz) * s.dout + oy) * s.dout;
                            for (int ox = 0; ox < s.dout; ++ox) {
                                const int ix = ox * s.stride - 1 + kx;
                                if (ix >= 0 && ix < s.din) dst[ox] = line[ix];
                            }
                        }
                    }
                }
    }
}

void col2im_add(const RowMat& cols, const ConvShape& s, double* din) {
    for (int c = 0; c < s.cin; ++c) {
        double* dst = din + static_cast<std::size_t>(c) * s.in_vox();
        for (int kz = 0; kz < kKernel; ++kz)
            for (int ky = 0; ky < kKernel; ++ky)
                for (int kx = 0; kx < kKernel; ++kx) {
                    const double* row = cols.row(((c * kKernel + kz) * kKernel + ky) * kKernel + kx).data();
                    for (int oz = 0; oz < s.dout; ++oz) {
                        const int iz = oz * s.stride - 1 + kz;
                        if (iz < 0 || iz >= s.din) continue;
                        for (int oy = 0; oy < s.dout; ++oy) {
                            const int iy = oy * s.stride - 1 + ky;
                            if (iy < 0 || iy >= s.din) continue;
                            double* line = dst + (static_cast<std::size_t>(iz) * s.din + iy) * s.din;
                            const double* src = row + (static_cast<std::size_t>(oz) * s.dout + oy) * s.dout;
                            for (int ox = 0; ox < s.dout; ++ox) {
                                const int ix = ox * s.stride - 1 + kx;
                                if (ix >= 0 && ix < s.din) line[ix] += src[ox];
                            }
                        }
                    }
                }
    }
}

std::vector<double> conv_forward(const std::vector<double>& in, const ConvShape& s, const Tensor& w, const Tensor& b) {
    RowMat cols;
    im2col(in.data(), s, cols);
    std::vector<double> out(static_cast<std::size_t>(s.cout) * s.out_vox());
    MapMat o(out.data(), s.cout, s.out_vox());
    o.noalias() = CMapMat(w.data.data(), s.cout, s.cin * kTaps) * cols;
    for (int c = 0; c < s.cout; ++c) o.row(c).array() += b.data[c];
    return out;
}

// d_out is [cout][out_vox]; d_in may be null.
void conv_backward(const std::vector<double>& in, const ConvShape& s, const Tensor& w, const double* d_out,
                   std::vector<double>& d_w, std::vector<double>& d_b, std::vector<double>* d_in) {
    RowMat cols;
    im2col(in.data(), s, cols);
    CMapMat dout(d_out, s.cout, s.out_vox());
    MapMat(d_w.data(), s.cout, s.cin * kTaps).noalias() += dout * cols.transpose();
    for (int c = 0; c < s.cout; ++c) d_b[c] += dout.row(c).sum();
    if (d_in) {
        const RowMat dcols = CMapMat(w.data.data(), s.cout, s.cin * kTaps).transpose() * dout;
        d_in->assign(static_cast<std::size_t>(s.cin) * s.in_vox(), 0.0);
        col2im_add(dcols, s, d_in->data());
    }
}

struct Layout {
    int n_down;
    int n_res;
    int down_w(int b) const { return 2 * b; }
    int res_w1(int r) const { return 2 * n_down + 4 * r; }
    int fc_w() const { return 2 * n_down + 4 * n_res; }
};

Layout layout_of(const EncoderConfig& c) { return {static_cast<int>(c.channels.size()), c.residual_blocks}; }

ConvShape down_shape(const EncoderConfig& cfg, int b) {
    int d = cfg.input_res;
    for (int i = 0; i < b; ++i) d = down_size(d);
    return {b == 0 ? 1 : cfg.channels[b - 1], cfg.channels[b], d, down_size(d), 2};
}

ConvShape res_shape(const EncoderConfig& cfg) {
    const int d = cfg.feature_res();
    return {cfg.channels.back(), cfg.channels.back(), d, d, 1};
}

Tensor make_tensor(std::string name, std::vector<int> shape, double fill = 0.0) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return {std::move(name), std::move(shape), std::vector<double>(n, fill)};
}

double to_float_precision(double v) { return static_cast<double>(static_cast<float>(v)); }

std::vector<double> grid_input(const VoxelObject& obj, const EncoderConfig& cfg) {
    const auto dims = obj.occupancy.dims();
    if (dims[0] != cfg.input_res || dims[1] != cfg.input_res || dims[2] != cfg.input_res)
        throw Error("resolution mismatch");
    const auto v = obj.occupancy.values();
    return std::vector<double>(v.begin(), v.end());
}

// Pre-normalisation conv output of downscale block b.
std::vector<double> down_pre(const std::vector<double>& x, const EncoderParams& p, int b) {
    const Layout L = layout_of(p.config);
    return conv_forward(x, down_shape(p.config, b), p.params[L.down_w(b)], p.params[L.down_w(b) + 1]);
}

void normalize_relu(std::vector<double>& z, const Tensor& rms, int vox) {
    for (std::size_t c = 0; c < rms.data.size(); ++c) {
        const double inv = 1.0 / rms.data[c];
        double* p = z.data() + c * static_cast<std::size_t>(vox);
        for (int i = 0; i < vox; ++i) p[i] = std::max(0.0, p[i] * inv);
    }
}

}  // namespace

void EncoderConfig::validate() const {
    if (input_res < 2) throw Error("encoder: input_res must be >= 2");
    if (channels.empty()) throw Error("encoder: need at least one downscale block");
    for (int c : channels)
        if (c < 1) throw Error("encoder: channel counts must be positive");
    if (residual_blocks < 0) throw Error("encoder: residual_blocks must be >= 0");
    if (embed_dim < 1) throw Error("encoder: embed_dim must be positive");
}

int EncoderConfig::feature_res() const {
    int d = input_res;
    for (std::size_t i = 0; i < channels.size(); ++i) d = down_size(d);
    return d;
}

int EncoderConfig::flat_features() const {
    const int d = feature_res();
    return channels.back() * d * d * d;
}

std::string EncoderConfig::describe() const {
    std::string s = "encoder:res=" + std::to_string(input_res) + ":channels=";
    for (std::size_t i = 0; i < channels.size(); ++i) s += (i ? "," : "") + std::to_string(channels[i]);
    s += ":res_blocks=" + std::to_string(residual_blocks) + ":embed=" + std::to_string(embed_dim) +
         ":seed=" + std::to_string(seed);
    return s;
}

std::size_t EncoderParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : params) n += t.data.size();
    return n;
}

bool EncoderParams::all_finite() const {
    for (const auto* group : {&params, &buffers, &adam_m, &adam_v})
        for (const auto& t : *group)
            for (double v : t.data)
                if (!std::isfinite(v)) return false;
    return true;
}

EncoderParams init_encoder(const EncoderConfig& cfg) {
    cfg.validate();
    EncoderParams p;
    p.config = cfg;
    Rng rng(mix_seed({cfg.seed, 0x656e636fULL}));
    auto kaiming = [&](Tensor& t, int fan_in, double gain_sq) {
        const double bound = std::sqrt(3.0 * gain_sq / fan_in);
        for (auto& v : t.data) v = to_float_precision(rng.uniform(-bound, bound));
    };

    for (std::size_t b = 0; b < cfg.channels.size(); ++b) {
        const int cin = b == 0 ? 1 : cfg.channels[b - 1], cout = cfg.channels[b];
        Tensor w = make_tensor("down" + std::to_string(b) + ".weight", {cout, cin, kKernel, kKernel, kKernel});
        kaiming(w, cin * kTaps, 2.0);
        p.params.push_back(std::move(w));
        p.params.push_back(make_tensor("down" + std::to_string(b) + ".bias", {cout}));
        p.buffers.push_back(make_tensor("down" + std::to_string(b) + ".rms", {cout}, 1.0));
    }
    const int c = cfg.channels.back();
    for (int r = 0; r < cfg.residual_blocks; ++r) {
        for (int j = 1; j <= 2; ++j) {
            const std::string prefix = "res" + std::to_string(r) + ".conv" + std::to_string(j);
            Tensor w = make_tensor(prefix + ".weight", {c, c, kKernel, kKernel, kKernel});
            kaiming(w, c * kTaps, 2.0);
            p.params.push_back(std::move(w));
            p.params.push_back(make_tensor(prefix + ".bias", {c}));
        }
    }
    const int fan_in = cfg.flat_features() + 3;
    Tensor fc = make_tensor("fc.weight", {cfg.embed_dim, fan_in});
    kaiming(fc, fan_in, 1.0);
    p.params.push_back(std::move(fc));
    p.params.push_back(make_tensor("fc.bias", {cfg.embed_dim}));

    for (const auto& t : p.params) {
        p.adam_m.push_back(make_tensor(t.name, t.shape));
        p.adam_v.push_back(make_tensor(t.name, t.shape));
    }
    return p;
}

void calibrate_normalization(EncoderParams& params, std::span<const VoxelObject> objects) {
    if (objects.empty()) return;
    const auto& cfg = params.config;
    for (std::size_t b = 0; b < cfg.channels.size(); ++b) {
        const ConvShape s = down_shape(cfg, static_cast<int>(b));
        std::vector<double> sumsq(static_cast<std::size_t>(s.cout), 0.0);
        for (const auto& obj : objects) {
            std::vector<double> x = grid_input(obj, cfg);
            for (std::size_t bb = 0; bb < b; ++bb) {
                x = down_pre(x, params, static_cast<int>(bb));
                normalize_relu(x, params.buffers[bb], down_shape(cfg, static_cast<int>(bb)).out_vox());
            }
            const auto z = down_pre(x, params, static_cast<int>(b));
            for (int c = 0; c < s.cout; ++c)
                for (int i = 0; i < s.out_vox(); ++i) {
                    const double v = z[static_cast<std::size_t>(c) * s.out_vox() + i];
                    sumsq[c] += v * v;
                }
        }
        const double count = static_cast<double>(objects.size()) * s.out_vox();
        for (int c = 0; c < s.cout; ++c)
            params.buffers[b].data[c] = to_float_precision(std::max(std::sqrt(sumsq[c] / count), 1e-6));
    }
}

EncoderGrads zero_grads(const EncoderParams& params) {
    EncoderGrads g;
    for (const auto& t : params.params) g.emplace_back(t.data.size(), 0.0);
    return g;
}

std::vector<double> encode(const VoxelObject& obj, const EncoderParams& params, EncoderCache* cache) {
    const auto& cfg = params.config;
    const Layout L = layout_of(cfg);
    EncoderCache local;
    EncoderCache& c = cache ? *cache : local;
    c = EncoderCache{};

    c.acts.push_back(grid_input(obj, cfg));
    for (int b = 0; b < L.n_down; ++b) {
        auto z = down_pre(c.acts.back(), params, b);
        normalize_relu(z, params.buffers[b], down_shape(cfg, b).out_vox());
        c.acts.push_back(std::move(z));
    }
    const ConvShape rs = res_shape(cfg);
    for (int r = 0; r < L.n_res; ++r) {
        const int w1 = L.res_w1(r);
        auto h = conv_forward(c.acts.back(), rs, params.params[w1], params.params[w1 + 1]);
        for (auto& v : h) v = std::max(0.0, v);
        auto y = conv_forward(h, rs, params.params[w1 + 2], params.params[w1 + 3]);
        const auto& x = c.acts.back();
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(0.0, y[i] + x[i]);
        c.res_hidden.push_back(std::move(h));
        c.acts.push_back(std::move(y));
    }

    c.fc_input = c.acts.back();
    for (float s : obj.scale) c.fc_input.push_back(s);
    const Tensor& w = params.params[L.fc_w()];
    const Tensor& bias = params.params[L.fc_w() + 1];
    const int fan_in = static_cast<int>(c.fc_input.size());
    Eigen::Map<const Eigen::VectorXd> u(c.fc_input.data(), fan_in);
    c.pre_norm.resize(static_cast<std::size_t>(cfg.embed_dim));
    Eigen::Map<Eigen::VectorXd> e(c.pre_norm.data(), cfg.embed_dim);
    e.noalias() = CMapMat(w.data.data(), cfg.embed_dim, fan_in) * u;
    e += Eigen::Map<const Eigen::VectorXd>(bias.data.data(), cfg.embed_dim);

    c.norm = std::max(e.norm(), 1e-12);
    c.output.resize(c.pre_norm.size());
    for (std::size_t i = 0; i < c.output.size(); ++i) c.output[i] = c.pre_norm[i] / c.norm;
    return c.output;
}

void encode_backward(const EncoderCache& c, const EncoderParams& params, std::span<const double> upstream,
                     EncoderGrads& grads) {
    const auto& cfg = params.config;
    const Layout L = layout_of(cfg);
    if (upstream.size() != static_cast<std::size_t>(cfg.embed_dim)) throw Error("encoder backward: upstream size");
    if (grads.size() != params.params.size()) throw Error("encoder backward: gradient layout mismatch");

    // Through f = e / |e|: de = (I - f f^T) df / |e|.
    double proj = 0.0;
    for (int i = 0; i < cfg.embed_dim; ++i) proj += c.output[i] * upstream[i];
    Eigen::VectorXd de(cfg.embed_dim);
    for (int i = 0; i < cfg.embed_dim; ++i) de[i] = (upstream[i] - c.output[i] * proj) / c.norm;

    const int fan_in = static_cast<int>(c.fc_input.size());
    const Tensor& w = params.params[L.fc_w()];
    MapMat(grads[L.fc_w()].data(), cfg.embed_dim, fan_in).noalias() +=
        de * Eigen::Map<const Eigen::RowVectorXd>(c.fc_input.data(), fan_in);
    Eigen::Map<Eigen::VectorXd>(grads[L.fc_w() + 1].data(), cfg.embed_dim) += de;
    const Eigen::VectorXd du = CMapMat(w.data.data(), cfg.embed_dim, fan_in).transpose() * de;
    std::vector<double> dx(du.data(), du.data() + cfg.flat_features());

    const ConvShape rs = res_shape(cfg);
    for (int r = L.n_res - 1; r >= 0; --r) {
        const int w1 = L.res_w1(r);
        const auto& y = c.acts[static_cast<std::size_t>(L.n_down + r + 1)];
        const auto& x = c.acts[static_cast<std::size_t>(L.n_down + r)];
        const auto& h = c.res_hidden[static_cast<std::size_t>(r)];
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (y[i] <= 0.0) dx[i] = 0.0;
        std::vector<double> dh;
        conv_backward(h, rs, params.params[w1 + 2], dx.data(), grads[w1 + 2], grads[w1 + 3], &dh);
        for (std::size_t i = 0; i < dh.size(); ++i)
            if (h[i] <= 0.0) dh[i] = 0.0;
        std::vector<double> dx1;
        conv_backward(x, rs, params.params[w1], dh.data(), grads[w1], grads[w1 + 1], &dx1);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dx1[i];
    }

    for (int b = L.n_down - 1; b >= 0; --b) {
        const ConvShape s = down_shape(cfg, b);
        const auto& y = c.acts[static_cast<std::size_t>(b + 1)];
        const auto& rms = params.buffers[static_cast<std::size_t>(b)].data;
        for (int ch = 0; ch < s.cout; ++ch) {
            const double inv = 1.0 / rms[ch];
            for (int i = 0; i < s.out_vox(); ++i) {
                const std::size_t idx = static_cast<std::size_t>(ch) * s.out_vox() + i;
                dx[idx] = y[idx] > 0.0 ? dx[idx] * inv : 0.0;
            }
        }
        std::vector<double> dprev;
        conv_backward(c.acts[static_cast<std::size_t>(b)], s, params.params[L.down_w(b)], dx.data(), grads[L.down_w(b)],
                      grads[L.down_w(b) + 1], b > 0 ? &dprev : nullptr);
        dx = std::move(dprev);
    }
}

EncoderGrads encode_backward(const VoxelObject& obj, const EncoderParams& params, std::span<const double> upstream) {
    EncoderCache cache;
    encode(obj, params, &cache);
    EncoderGrads g = zero_grads(params);
    encode_backward(cache, params, upstream, g);
    return g;
}

void add_grads(EncoderGrads& into, const EncoderGrads& other) {
    if (into.size() != other.size()) throw Error("gradient layout mismatch");
    for (std::size_t t = 0; t < into.size(); ++t) {
        if (into[t].size() != other[t].size()) throw Error("gradient layout mismatch");
        for (std::size_t i = 0; i < into[t].size(); ++i) into[t][i] += other[t][i];
    }
}

void adam_step(EncoderParams& p, const EncoderGrads& grads, const AdamConfig& cfg) {
    if (grads.size() != p.params.size()) throw Error("adam: gradient layout mismatch");
    for (std::size_t t = 0; t < grads.size(); ++t) {
        if (grads[t].size() != p.params[t].data.size()) throw Error("adam: gradient layout mismatch");
        for (double g : grads[t])
            if (!std::isfinite(g)) throw Error("non-finite gradient");
    }
    ++p.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
    for (std::size_t t = 0; t < grads.size(); ++t) {
        auto& w = p.params[t].data;
        auto& m = p.adam_m[t].data;
        auto& v = p.adam_v[t].data;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double g = grads[t][i];
            m[i] = to_float_precision(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g);
            v[i] = to_float_precision(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g);
            const double m_hat = m[i] / bc1, v_hat = v[i] / bc2;
            w[i] = to_float_precision(w[i] - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
        }
    }
}

}  // namespace wsret
