#include "heatsim/nbe_net.hpp"

#include "heatsim/digest.hpp"
#include "heatsim/rng.hpp"

#include <Eigen/Dense>
#include "json.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace heatsim {

using MatF = Eigen::MatrixXf;
using json = nlohmann::json;

BundleShape BundleShape::from(const SummaryConfig& cfg) {
    BundleShape s;
    s.chi_c = static_cast<int>(cfg.thresholds.size());
    s.chi_h = cfg.L;
    s.chi_w = cfg.max_lag + 1;
    s.atdf_len = cfg.max_lag + 1;
    s.qp_h = static_cast<int>(cfg.alphas.size());
    s.qp_w = cfg.L;
    s.iqr_len = cfg.L;
    s.mado_side = cfg.mado_side();
    return s;
}

std::size_t BundleShape::flat_len() const {
    return static_cast<std::size_t>(chi_c) * chi_h * chi_w + atdf_len +
           static_cast<std::size_t>(qp_h) * qp_w + iqr_len +
           static_cast<std::size_t>(mado_side) * mado_side;
}

namespace {
constexpr int kBranchCh = 32;
constexpr int kBranches = 5;
constexpr int kHead1 = 128, kHead2 = 64, kOut = 8;
} // namespace

// Activations live as (channels) x (count*H*W) matrices, pixel-major per
// sample, so convolutions over a whole batch are single GEMMs.
struct NetKernels {
    using Conv = EstimatorNet::Conv;
    using Dense = EstimatorNet::Dense;

    static void im2col(const Conv& c, const MatF& a, int count, MatF& col) {
        const int HW = c.H * c.W, K = c.cin * c.kh * c.kw;
        const int ph = (c.kh - 1) / 2, pw = (c.kw - 1) / 2;
        col.setZero(K, static_cast<Eigen::Index>(count) * HW);
        for (int ch = 0; ch < c.cin; ++ch)
            for (int dy = 0; dy < c.kh; ++dy)
                for (int dx = 0; dx < c.kw; ++dx) {
                    const int kr = (ch * c.kh + dy) * c.kw + dx;
                    for (int b = 0; b < count; ++b) {
                        const Eigen::Index base = static_cast<Eigen::Index>(b) * HW;
                        for (int y = 0; y < c.H; ++y) {
                            const int sy = y + dy - ph;
                            if (sy < 0 || sy >= c.H) continue;
                            for (int x = 0; x < c.W; ++x) {
                                const int sx = x + dx - pw;
                                if (sx < 0 || sx >= c.W) continue;
                                col(kr, base + y * c.W + x) = a(ch, base + sy * c.W + sx);
                            }
                        }
                    }
                }
    }

    static void col2im(const Conv& c, const MatF& dcol, int count, MatF& da) {
        const int HW = c.H * c.W;
        const int ph = (c.kh - 1) / 2, pw = (c.kw - 1) / 2;
        da.setZero(c.cin, static_cast<Eigen::Index>(count) * HW);
        for (int ch = 0; ch < c.cin; ++ch)
            for (int dy = 0; dy < c.kh; ++dy)
                for (int dx = 0; dx < c.kw; ++dx) {
                    const int kr = (ch * c.kh + dy) * c.kw + dx;
                    for (int b = 0; b < count; ++b) {
                        const Eigen::Index base = static_cast<Eigen::Index>(b) * HW;
                        for (int y = 0; y < c.H; ++y) {
                            const int sy = y + dy - ph;
                            if (sy < 0 || sy >= c.H) continue;
                            for (int x = 0; x < c.W; ++x) {
                                const int sx = x + dx - pw;
                                if (sx < 0 || sx >= c.W) continue;
                                da(ch, base + sy * c.W + sx) += dcol(kr, base + y * c.W + x);
                            }
                        }
                    }
                }
    }

    static void conv_relu(const Conv& c, const MatF& a, int count, MatF& col, MatF& y) {
        im2col(c, a, count, col);
        Eigen::Map<const MatF> wm(c.w.data(), c.cout, c.cin * c.kh * c.kw);
        y.noalias() = wm * col;
        y.colwise() += Eigen::Map<const Eigen::VectorXf>(c.b.data(), c.cout);
        y = y.cwiseMax(0.0f);
    }

    struct Cache {
        MatF a0, col1, y1, col2, y2; // y1, y2 post activation
    };

    // full forward; feat is the concatenated pooled features, p the sigmoid head
    static void forward(const EstimatorNet& net, const float* x, int count,
                        std::vector<Cache>& bc, MatF& feat, MatF& f1, MatF& f2, MatF& p) {
        const std::size_t flat = net.shape_.flat_len();
        bc.resize(kBranches);
        feat.resize(kBranches * kBranchCh, count);
        std::size_t off = 0;
        for (int br = 0; br < kBranches; ++br) {
            const Conv& c1 = net.convs_[2 * br];
            const Conv& c2 = net.convs_[2 * br + 1];
            const int HW = c1.H * c1.W;
            Cache& cc = bc[br];
            cc.a0.resize(c1.cin, static_cast<Eigen::Index>(count) * HW);
            for (int b = 0; b < count; ++b) {
                const float* xb = x + static_cast<std::size_t>(b) * flat + off;
                for (int ch = 0; ch < c1.cin; ++ch)
                    for (int q = 0; q < HW; ++q)
                        cc.a0(ch, static_cast<Eigen::Index>(b) * HW + q) = xb[ch * HW + q];
            }
            conv_relu(c1, cc.a0, count, cc.col1, cc.y1);
            conv_relu(c2, cc.y1, count, cc.col2, cc.y2);
            for (int b = 0; b < count; ++b)
                feat.block(br * kBranchCh, b, kBranchCh, 1) =
                    cc.y2.middleCols(static_cast<Eigen::Index>(b) * HW, HW).rowwise().mean();
            off += static_cast<std::size_t>(c1.cin) * HW;
        }
        auto dense_relu = [count](const Dense& d, const MatF& in, MatF& out) {
            Eigen::Map<const MatF> wm(d.w.data(), d.out, d.in);
            out.noalias() = wm * in;
            out.colwise() += Eigen::Map<const Eigen::VectorXf>(d.b.data(), d.out);
            out = out.cwiseMax(0.0f);
            (void)count;
        };
        dense_relu(net.d1_, feat, f1);
        dense_relu(net.d2_, f1, f2);
        Eigen::Map<const MatF> w3(net.d3_.w.data(), net.d3_.out, net.d3_.in);
        p.noalias() = w3 * f2;
        p.colwise() += Eigen::Map<const Eigen::VectorXf>(net.d3_.b.data(), net.d3_.out);
        p = p.unaryExpr([](float z) { return 1.0f / (1.0f + std::exp(-z)); });
    }
};

void EstimatorNet::build(std::uint64_t seed) {
    auto conv = [](int cin, int cout, int kh, int kw, int H, int W) {
        Conv c;
        c.cin = cin;
        c.cout = cout;
        c.kh = kh;
        c.kw = kw;
        c.H = H;
        c.W = W;
        c.w.assign(static_cast<std::size_t>(cout) * cin * kh * kw, 0.0f);
        c.b.assign(cout, 0.0f);
        return c;
    };
    convs_.clear();
    convs_.push_back(conv(shape_.chi_c, 16, 3, 3, shape_.chi_h, shape_.chi_w));
    convs_.push_back(conv(16, kBranchCh, 3, 3, shape_.chi_h, shape_.chi_w));
    convs_.push_back(conv(1, 16, 3, 3, shape_.mado_side, shape_.mado_side));
    convs_.push_back(conv(16, kBranchCh, 3, 3, shape_.mado_side, shape_.mado_side));
    convs_.push_back(conv(1, 16, 3, 3, shape_.qp_h, shape_.qp_w));
    convs_.push_back(conv(16, kBranchCh, 3, 3, shape_.qp_h, shape_.qp_w));
    convs_.push_back(conv(1, 16, 1, 3, 1, shape_.atdf_len));
    convs_.push_back(conv(16, kBranchCh, 1, 3, 1, shape_.atdf_len));
    convs_.push_back(conv(1, 16, 1, 3, 1, shape_.iqr_len));
    convs_.push_back(conv(16, kBranchCh, 1, 3, 1, shape_.iqr_len));

    auto dense = [](int in, int out) {
        Dense d;
        d.in = in;
        d.out = out;
        d.w.assign(static_cast<std::size_t>(out) * in, 0.0f);
        d.b.assign(out, 0.0f);
        return d;
    };
    d1_ = dense(kBranches * kBranchCh, kHead1);
    d2_ = dense(kHead1, kHead2);
    d3_ = dense(kHead2, kOut);

    Rng rng(seed, "nbe_init");
    for (auto& c : convs_) {
        const double sd = std::sqrt(2.0 / (c.cin * c.kh * c.kw));
        for (auto& v : c.w) v = static_cast<float>(sd * rng.normal());
    }
    for (Dense* d : {&d1_, &d2_}) {
        const double sd = std::sqrt(2.0 / d->in);
        for (auto& v : d->w) v = static_cast<float>(sd * rng.normal());
    }
    // near-zero head starts predictions at the box midpoint
    for (auto& v : d3_.w) v = static_cast<float>(0.01 * rng.normal());

    adam_.clear();
    for (auto* t : tensors()) {
        Adam a;
        a.m.assign(t->size(), 0.0f);
        a.v.assign(t->size(), 0.0f);
        adam_.push_back(std::move(a));
    }
    adam_t_ = 0;
}

EstimatorNet::EstimatorNet(const BundleShape& shape, const PriorBox& box, std::uint64_t seed)
    : shape_(shape), box_(box) {
    build(seed);
}

std::vector<std::vector<float>*> EstimatorNet::tensors() {
    std::vector<std::vector<float>*> out;
    for (auto& c : convs_) {
        out.push_back(&c.w);
        out.push_back(&c.b);
    }
    for (Dense* d : {&d1_, &d2_, &d3_}) {
        out.push_back(&d->w);
        out.push_back(&d->b);
    }
    return out;
}

std::vector<const std::vector<float>*> EstimatorNet::tensors() const {
    auto mut = const_cast<EstimatorNet*>(this)->tensors();
    return {mut.begin(), mut.end()};
}

std::size_t EstimatorNet::parameter_count() const {
    std::size_t n = 0;
    for (auto* t : tensors()) n += t->size();
    return n;
}

std::array<double, 8> EstimatorNet::predict_normalized(const float* flat) const {
    std::vector<NetKernels::Cache> bc;
    MatF feat, f1, f2, p;
    NetKernels::forward(*this, flat, 1, bc, feat, f1, f2, p);
    std::array<double, 8> out{};
    for (int j = 0; j < kOut; ++j) out[j] = static_cast<double>(p(j, 0));
    return out;
}

DepParams EstimatorNet::predict(const std::vector<double>& flat) const {
    if (flat.size() != shape_.flat_len())
        throw std::invalid_argument("EstimatorNet::predict: bundle length mismatch");
    std::vector<float> xf(flat.begin(), flat.end());
    return box_.denormalize(predict_normalized(xf.data()));
}

double EstimatorNet::eval_batch(const float* x, const float* y_norm, int count) const {
    std::vector<NetKernels::Cache> bc;
    MatF feat, f1, f2, p;
    NetKernels::forward(*this, x, count, bc, feat, f1, f2, p);
    double loss = 0.0;
    for (int b = 0; b < count; ++b)
        for (int j = 0; j < kOut; ++j) {
            const double d = p(j, b) - y_norm[static_cast<std::size_t>(b) * kOut + j];
            loss += d * d;
        }
    return loss / (static_cast<double>(count) * kOut);
}

double EstimatorNet::train_batch(const float* x, const float* y_norm, int count, double lr) {
    std::vector<NetKernels::Cache> bc;
    MatF feat, f1, f2, p;
    NetKernels::forward(*this, x, count, bc, feat, f1, f2, p);

    MatF y(kOut, count);
    for (int b = 0; b < count; ++b)
        for (int j = 0; j < kOut; ++j) y(j, b) = y_norm[static_cast<std::size_t>(b) * kOut + j];
    const double loss = (p - y).squaredNorm() / (static_cast<double>(count) * kOut);

    // gradients in tensors() order
    std::vector<std::vector<float>> grads;
    grads.reserve(adam_.size());
    for (auto* t : tensors()) grads.emplace_back(t->size(), 0.0f);
    const int ng_per_conv = 2;
    auto gconvw = [&](int ci) -> std::vector<float>& { return grads[ng_per_conv * ci]; };
    auto gconvb = [&](int ci) -> std::vector<float>& { return grads[ng_per_conv * ci + 1]; };
    const std::size_t dbase = ng_per_conv * convs_.size();

    const float scale = 2.0f / (static_cast<float>(count) * kOut);
    MatF dz = (p - y).cwiseProduct(p).cwiseProduct(MatF::Ones(kOut, count) - p) * scale;

    auto dense_backward = [&](const Dense& d, const MatF& in, const MatF& dout,
                              std::vector<float>& gw, std::vector<float>& gb, MatF* din) {
        Eigen::Map<MatF> gwm(gw.data(), d.out, d.in);
        gwm.noalias() = dout * in.transpose();
        Eigen::Map<Eigen::VectorXf> gbm(gb.data(), d.out);
        gbm = dout.rowwise().sum();
        if (din) {
            Eigen::Map<const MatF> wm(d.w.data(), d.out, d.in);
            din->noalias() = wm.transpose() * dout;
        }
    };

    MatF df2, df1, dfeat;
    dense_backward(d3_, f2, dz, grads[dbase + 4], grads[dbase + 5], &df2);
    df2 = df2.cwiseProduct((f2.array() > 0.0f).cast<float>().matrix());
    dense_backward(d2_, f1, df2, grads[dbase + 2], grads[dbase + 3], &df1);
    df1 = df1.cwiseProduct((f1.array() > 0.0f).cast<float>().matrix());
    dense_backward(d1_, feat, df1, grads[dbase + 0], grads[dbase + 1], &dfeat);

    MatF dy2, dcol2, da1, dy1;
    for (int br = 0; br < kBranches; ++br) {
        const Conv& c1 = convs_[2 * br];
        const Conv& c2 = convs_[2 * br + 1];
        const int HW = c1.H * c1.W;
        NetKernels::Cache& cc = bc[br];
        dy2.resize(kBranchCh, static_cast<Eigen::Index>(count) * HW);
        for (int b = 0; b < count; ++b)
            dy2.middleCols(static_cast<Eigen::Index>(b) * HW, HW) =
                (dfeat.block(br * kBranchCh, b, kBranchCh, 1) / static_cast<float>(HW))
                    .replicate(1, HW);
        dy2 = dy2.cwiseProduct((cc.y2.array() > 0.0f).cast<float>().matrix());
        {
            Eigen::Map<MatF> gw(gconvw(2 * br + 1).data(), c2.cout, c2.cin * c2.kh * c2.kw);
            gw.noalias() = dy2 * cc.col2.transpose();
            Eigen::Map<Eigen::VectorXf> gb(gconvb(2 * br + 1).data(), c2.cout);
            gb = dy2.rowwise().sum();
            Eigen::Map<const MatF> wm(c2.w.data(), c2.cout, c2.cin * c2.kh * c2.kw);
            dcol2.noalias() = wm.transpose() * dy2;
        }
        NetKernels::col2im(c2, dcol2, count, da1);
        dy1 = da1.cwiseProduct((cc.y1.array() > 0.0f).cast<float>().matrix());
        {
            Eigen::Map<MatF> gw(gconvw(2 * br).data(), c1.cout, c1.cin * c1.kh * c1.kw);
            gw.noalias() = dy1 * cc.col1.transpose();
            Eigen::Map<Eigen::VectorXf> gb(gconvb(2 * br).data(), c1.cout);
            gb = dy1.rowwise().sum();
        }
    }

    // Adam step
    ++adam_t_;
    const float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
    const float bc1 = 1.0f - std::pow(b1, static_cast<float>(adam_t_));
    const float bc2 = 1.0f - std::pow(b2, static_cast<float>(adam_t_));
    auto ts = tensors();
    for (std::size_t k = 0; k < ts.size(); ++k) {
        auto& w = *ts[k];
        auto& g = grads[k];
        auto& a = adam_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            a.m[i] = b1 * a.m[i] + (1.0f - b1) * g[i];
            a.v[i] = b2 * a.v[i] + (1.0f - b2) * g[i] * g[i];
            w[i] -= static_cast<float>(lr) * (a.m[i] / bc1) /
                    (std::sqrt(a.v[i] / bc2) + eps);
        }
    }
    return loss;
}

void EstimatorNet::reset_optimizer() {
    for (auto& a : adam_) {
        std::fill(a.m.begin(), a.m.end(), 0.0f);
        std::fill(a.v.begin(), a.v.end(), 0.0f);
    }
    adam_t_ = 0;
}

std::uint64_t EstimatorNet::weights_digest() const {
    Fnv64 f;
    for (auto* t : tensors()) f.update(t->data(), t->size() * sizeof(float));
    return f.value();
}

void EstimatorNet::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("EstimatorNet::save: cannot open " + path);
    const char magic[8] = {'H', 'S', 'N', 'B', 'E', 'v', '1', '\0'};
    out.write(magic, 8);
    const int32_t dims[8] = {shape_.chi_c, shape_.chi_h, shape_.chi_w, shape_.atdf_len,
                             shape_.qp_h,  shape_.qp_w,  shape_.iqr_len, shape_.mado_side};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    out.write(reinterpret_cast<const char*>(box_.lo.data()), sizeof(double) * 8);
    out.write(reinterpret_cast<const char*>(box_.hi.data()), sizeof(double) * 8);
    const auto ts = tensors();
    const std::uint32_t nt = static_cast<std::uint32_t>(ts.size());
    out.write(reinterpret_cast<const char*>(&nt), sizeof(nt));
    for (auto* t : ts) {
        const std::uint64_t sz = t->size();
        out.write(reinterpret_cast<const char*>(&sz), sizeof(sz));
        out.write(reinterpret_cast<const char*>(t->data()), sizeof(float) * sz);
    }
    if (!out) throw std::runtime_error("EstimatorNet::save: write failed for " + path);

    json manifest;
    manifest["format"] = "heatsim-estimator-net";
    manifest["version"] = 1;
    manifest["shape"] = {{"chi_c", shape_.chi_c},   {"chi_h", shape_.chi_h},
                         {"chi_w", shape_.chi_w},   {"atdf_len", shape_.atdf_len},
                         {"qp_h", shape_.qp_h},     {"qp_w", shape_.qp_w},
                         {"iqr_len", shape_.iqr_len}, {"mado_side", shape_.mado_side}};
    manifest["prior_box"] = {{"lo", box_.lo}, {"hi", box_.hi}};
    manifest["parameter_count"] = parameter_count();
    manifest["weights_digest"] = digest_hex(weights_digest());
    std::ofstream mj(path + ".json");
    mj << manifest.dump(2) << "\n";
}

EstimatorNet EstimatorNet::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("EstimatorNet::load: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (std::memcmp(magic, "HSNBEv1\0", 8) != 0)
        throw std::runtime_error("EstimatorNet::load: bad magic in " + path);
    int32_t dims[8];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    EstimatorNet net;
    net.shape_ = {dims[0], dims[1], dims[2], dims[3], dims[4], dims[5], dims[6], dims[7]};
    in.read(reinterpret_cast<char*>(net.box_.lo.data()), sizeof(double) * 8);
    in.read(reinterpret_cast<char*>(net.box_.hi.data()), sizeof(double) * 8);
    net.build(0);
    std::uint32_t nt = 0;
    in.read(reinterpret_cast<char*>(&nt), sizeof(nt));
    auto ts = net.tensors();
    if (nt != ts.size()) throw std::runtime_error("EstimatorNet::load: tensor count mismatch");
    for (auto* t : ts) {
        std::uint64_t sz = 0;
        in.read(reinterpret_cast<char*>(&sz), sizeof(sz));
        if (sz != t->size()) throw std::runtime_error("EstimatorNet::load: tensor size mismatch");
        in.read(reinterpret_cast<char*>(t->data()), sizeof(float) * sz);
    }
    if (!in) throw std::runtime_error("EstimatorNet::load: truncated file " + path);
    net.reset_optimizer();
    return net;
}

} // namespace heatsim
