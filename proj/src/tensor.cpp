#include "fixsynth/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

#include "fixsynth/error.hpp"
#include "fixsynth/rng.hpp"

namespace fixsynth {

std::size_t shape_numel(const Shape& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
    if (shape_numel(shape_) != data.size()) {
        throw ValidationError("tensor shape " + shape_to_string(shape_) + " holds " +
                              std::to_string(shape_numel(shape_)) + " elements but data has " +
                              std::to_string(data.size()));
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

double Tensor::item() const {
    if (numel() != 1) throw ValidationError("item() on tensor of shape " + shape_to_string(shape_));
    return (*data_)[0];
}

Tensor Tensor::with_requires_grad(bool flag) const {
    Tensor t = *this;
    t.requires_grad_ = flag;
    return t;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw ValidationError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
}

bool Tensor::bitwise_equal(const Tensor& other) const noexcept {
    if (shape_ != other.shape_ || numel() != other.numel()) return false;
    return std::equal(data_->begin(), data_->end(), other.data_->begin(),
                      [](double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; });
}

// ---------------------------------------------------------------------------
// Op names

namespace {

constexpr std::pair<OpKind, std::string_view> kOpNames[] = {
    {OpKind::linear, "linear"},
    {OpKind::conv2d, "conv2d"},
    {OpKind::conv1d, "conv1d"},
    {OpKind::transposed_conv2d, "transposed_conv2d"},
    {OpKind::upsample2d_nearest, "upsample2d_nearest"},
    {OpKind::upsample1d_nearest, "upsample1d_nearest"},
    {OpKind::leaky_relu, "leaky_relu"},
    {OpKind::tanh, "tanh"},
    {OpKind::softplus, "softplus"},
    {OpKind::dropout, "dropout"},
    {OpKind::add, "add"},
    {OpKind::matmul, "matmul"},
    {OpKind::mse_loss, "mse_loss"},
    {OpKind::reshape, "reshape"},
    {OpKind::scale, "scale"},
    {OpKind::mean, "mean"},
};

}  // namespace

std::string_view op_name(OpKind kind) noexcept {
    for (const auto& [k, name] : kOpNames)
        if (k == kind) return name;
    return "unknown";
}

OpKind parse_op(std::string_view name) {
    for (const auto& [k, n] : kOpNames)
        if (n == name) return k;
    throw ValidationError("unknown op kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

[[noreturn]] void dim_error(OpKind kind, const std::string& what) {
    throw ValidationError(std::string(op_name(kind)) + ": " + what);
}

void expect_rank(OpKind kind, const Tensor& t, std::size_t rank, std::string_view role) {
    if (t.rank() != rank) {
        dim_error(kind, std::string(role) + " must have rank " + std::to_string(rank) + ", got shape " +
                            shape_to_string(t.shape()));
    }
}

// Geometry shared by conv2d, conv1d (height 1) and transposed_conv2d.
struct ConvGeom {
    std::size_t batch, cin, cout, h, w, kh, kw, sh, sw, ph, pw, oh, ow;
};

// Output column range [lo, hi) for which ow*s + k - p lands inside [0, width).
inline void valid_range(std::size_t k, std::size_t s, std::size_t p, std::size_t width, std::size_t out,
                        std::size_t& lo, std::size_t& hi) {
    const long kk = static_cast<long>(k), pp = static_cast<long>(p), ss = static_cast<long>(s);
    long l = 0;
    if (pp > kk) l = (pp - kk + ss - 1) / ss;
    long h = (static_cast<long>(width) - 1 + pp - kk);
    h = h < 0 ? 0 : h / ss + 1;
    lo = static_cast<std::size_t>(std::min<long>(l, static_cast<long>(out)));
    hi = static_cast<std::size_t>(std::clamp<long>(h, static_cast<long>(lo), static_cast<long>(out)));
}

ConvGeom conv_geom(OpKind kind, const Tensor& x, const Tensor& w, const Tensor* b, const OpAttrs& a) {
    if (a.stride == 0) dim_error(kind, "stride must be >= 1");
    ConvGeom g{};
    const bool one_d = kind == OpKind::conv1d;
    const bool transposed = kind == OpKind::transposed_conv2d;
    expect_rank(kind, x, one_d ? 3 : 4, "input");
    expect_rank(kind, w, one_d ? 3 : 4, "weight");
    g.batch = x.dim(0);
    g.cin = x.dim(1);
    g.h = one_d ? 1 : x.dim(2);
    g.w = one_d ? x.dim(2) : x.dim(3);
    if (transposed) {
        if (w.dim(0) != g.cin)
            dim_error(kind, "weight in-channels " + std::to_string(w.dim(0)) + " != input channels " +
                                std::to_string(g.cin));
        g.cout = w.dim(1);
    } else {
        if (w.dim(1) != g.cin)
            dim_error(kind, "weight in-channels " + std::to_string(w.dim(1)) + " != input channels " +
                                std::to_string(g.cin));
        g.cout = w.dim(0);
    }
    g.kh = one_d ? 1 : w.dim(2);
    g.kw = one_d ? w.dim(2) : w.dim(3);
    g.sh = one_d ? 1 : a.stride;
    g.sw = a.stride;
    g.ph = one_d ? 0 : a.padding;
    g.pw = a.padding;
    if (b != nullptr && (b->rank() != 1 || b->dim(0) != g.cout))
        dim_error(kind, "bias shape " + shape_to_string(b->shape()) + " does not match " + std::to_string(g.cout) +
                            " output channels");
    if (transposed) {
        const long oh = static_cast<long>((g.h - 1) * g.sh + g.kh) - 2 * static_cast<long>(g.ph);
        const long ow = static_cast<long>((g.w - 1) * g.sw + g.kw) - 2 * static_cast<long>(g.pw);
        if (g.h == 0 || g.w == 0 || oh <= 0 || ow <= 0) dim_error(kind, "empty output for input " + shape_to_string(x.shape()));
        g.oh = static_cast<std::size_t>(oh);
        g.ow = static_cast<std::size_t>(ow);
    } else {
        if (g.h + 2 * g.ph < g.kh || g.w + 2 * g.pw < g.kw)
            dim_error(kind, "kernel " + shape_to_string(w.shape()) + " larger than padded input " +
                                shape_to_string(x.shape()));
        g.oh = (g.h + 2 * g.ph - g.kh) / g.sh + 1;
        g.ow = (g.w + 2 * g.pw - g.kw) / g.sw + 1;
    }
    return g;
}

Shape conv_out_shape(OpKind kind, const ConvGeom& g) {
    if (kind == OpKind::conv1d) return {g.batch, g.cout, g.ow};
    return {g.batch, g.cout, g.oh, g.ow};
}

// Convolutions run as im2col + GEMM. `Patches` describes unfolding an image of
// `channels` x h x w into columns, one per position of an oh x ow output grid.
struct Patches {
    std::size_t batch, channels, h, w, kh, kw, sh, sw, ph, pw, oh, ow;
    std::size_t rows() const { return channels * kh * kw; }
    std::size_t cols() const { return batch * oh * ow; }
};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using CMapRow = Eigen::Map<const RowMat>;

CMapRow mat(const Tensor& t) {
    return CMapRow(t.data().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

MapRow mat(std::vector<double>& buf, const Tensor& like) {
    return MapRow(buf.data(), static_cast<Eigen::Index>(like.dim(0)), static_cast<Eigen::Index>(like.dim(1)));
}

RowMat im2col(const Patches& p, const double* img) {
    RowMat cols = RowMat::Zero(static_cast<Eigen::Index>(p.rows()), static_cast<Eigen::Index>(p.cols()));
    const std::size_t plane = p.h * p.w, grid = p.oh * p.ow;
    for (std::size_t c = 0; c < p.channels; ++c)
        for (std::size_t ky = 0; ky < p.kh; ++ky) {
            std::size_t oy_lo, oy_hi;
            valid_range(ky, p.sh, p.ph, p.h, p.oh, oy_lo, oy_hi);
            for (std::size_t kx = 0; kx < p.kw; ++kx) {
                std::size_t ox_lo, ox_hi;
                valid_range(kx, p.sw, p.pw, p.w, p.ow, ox_lo, ox_hi);
                double* row = cols.data() + ((c * p.kh + ky) * p.kw + kx) * p.cols();
                for (std::size_t n = 0; n < p.batch; ++n) {
                    const double* src = img + (n * p.channels + c) * plane;
                    for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                        const double* sr = src + (oy * p.sh + ky - p.ph) * p.w + kx - p.pw;
                        double* dr = row + n * grid + oy * p.ow;
                        for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) dr[ox] = sr[ox * p.sw];
                    }
                }
            }
        }
    return cols;
}

// Adjoint of im2col: scatter-add columns back into an image.
void col2im_add(const Patches& p, const RowMat& cols, double* img) {
    const std::size_t plane = p.h * p.w, grid = p.oh * p.ow;
    for (std::size_t c = 0; c < p.channels; ++c)
        for (std::size_t ky = 0; ky < p.kh; ++ky) {
            std::size_t oy_lo, oy_hi;
            valid_range(ky, p.sh, p.ph, p.h, p.oh, oy_lo, oy_hi);
            for (std::size_t kx = 0; kx < p.kw; ++kx) {
                std::size_t ox_lo, ox_hi;
                valid_range(kx, p.sw, p.pw, p.w, p.ow, ox_lo, ox_hi);
                const double* row = cols.data() + ((c * p.kh + ky) * p.kw + kx) * p.cols();
                for (std::size_t n = 0; n < p.batch; ++n) {
                    double* dst = img + (n * p.channels + c) * plane;
                    for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                        double* dr = dst + (oy * p.sh + ky - p.ph) * p.w + kx - p.pw;
                        const double* sr = row + n * grid + oy * p.ow;
                        for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) dr[ox * p.sw] += sr[ox];
                    }
                }
            }
        }
}

// [batch, channels, plane] <-> [channels, batch * plane]
RowMat to_channel_major(const double* x, std::size_t batch, std::size_t channels, std::size_t plane) {
    RowMat m(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(batch * plane));
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < channels; ++c)
            std::copy_n(x + (n * channels + c) * plane, plane, m.data() + c * batch * plane + n * plane);
    return m;
}

void from_channel_major(const RowMat& m, std::size_t batch, std::size_t channels, std::size_t plane, double* x) {
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < channels; ++c)
            std::copy_n(m.data() + c * batch * plane + n * plane, plane, x + (n * channels + c) * plane);
}

Patches conv_patches(const ConvGeom& g) {
    return {g.batch, g.cin, g.h, g.w, g.kh, g.kw, g.sh, g.sw, g.ph, g.pw, g.oh, g.ow};
}

// The transposed convolution's output is the "image" and its input the grid.
Patches tconv_patches(const ConvGeom& g) {
    return {g.batch, g.cout, g.oh, g.ow, g.kh, g.kw, g.sh, g.sw, g.ph, g.pw, g.h, g.w};
}

void add_bias(double* y, const double* b, std::size_t batch, std::size_t channels, std::size_t plane) {
    if (!b) return;
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < channels; ++c) {
            double* yp = y + (n * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) yp[i] += b[c];
        }
}

void bias_grad(const double* gy, double* gb, std::size_t batch, std::size_t channels, std::size_t plane) {
    if (!gb) return;
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < channels; ++c) {
            const double* gp = gy + (n * channels + c) * plane;
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) s += gp[i];
            gb[c] += s;
        }
}

void conv_forward(const ConvGeom& g, const double* x, const double* w, const double* b, double* y) {
    const Patches p = conv_patches(g);
    const RowMat cols = im2col(p, x);
    const CMapRow wm(w, static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(p.rows()));
    RowMat out(static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(p.cols()));
    out.noalias() = wm * cols;
    from_channel_major(out, g.batch, g.cout, g.oh * g.ow, y);
    add_bias(y, b, g.batch, g.cout, g.oh * g.ow);
}

void conv_backward(const ConvGeom& g, const double* x, const double* w, const double* gy, double* gx, double* gw,
                   double* gb) {
    const Patches p = conv_patches(g);
    const RowMat gym = to_channel_major(gy, g.batch, g.cout, g.oh * g.ow);
    const auto rows = static_cast<Eigen::Index>(p.rows());
    if (gw) {
        const RowMat cols = im2col(p, x);
        MapRow gwm(gw, static_cast<Eigen::Index>(g.cout), rows);
        gwm.noalias() += gym * cols.transpose();
    }
    if (gx) {
        const CMapRow wm(w, static_cast<Eigen::Index>(g.cout), rows);
        RowMat gcols(rows, static_cast<Eigen::Index>(p.cols()));
        gcols.noalias() = wm.transpose() * gym;
        col2im_add(p, gcols, gx);
    }
    bias_grad(gy, gb, g.batch, g.cout, g.oh * g.ow);
}

// Transposed convolution is the adjoint of a strided convolution: the forward
// pass is the convolution's input-gradient path and vice versa.
void tconv_forward(const ConvGeom& g, const double* x, const double* w, const double* b, double* y) {
    const Patches p = tconv_patches(g);
    const RowMat xm = to_channel_major(x, g.batch, g.cin, g.h * g.w);
    const CMapRow wm(w, static_cast<Eigen::Index>(g.cin), static_cast<Eigen::Index>(p.rows()));
    RowMat cols(static_cast<Eigen::Index>(p.rows()), static_cast<Eigen::Index>(p.cols()));
    cols.noalias() = wm.transpose() * xm;
    std::fill(y, y + g.batch * g.cout * g.oh * g.ow, 0.0);
    col2im_add(p, cols, y);
    add_bias(y, b, g.batch, g.cout, g.oh * g.ow);
}

void tconv_backward(const ConvGeom& g, const double* x, const double* w, const double* gy, double* gx, double* gw,
                    double* gb) {
    const Patches p = tconv_patches(g);
    const RowMat gcols = im2col(p, gy);
    const auto rows = static_cast<Eigen::Index>(p.rows());
    if (gw) {
        const RowMat xm = to_channel_major(x, g.batch, g.cin, g.h * g.w);
        MapRow gwm(gw, static_cast<Eigen::Index>(g.cin), rows);
        gwm.noalias() += xm * gcols.transpose();
    }
    if (gx) {
        const CMapRow wm(w, static_cast<Eigen::Index>(g.cin), rows);
        RowMat gxm(static_cast<Eigen::Index>(g.cin), static_cast<Eigen::Index>(p.cols()));
        gxm.noalias() = wm * gcols;
        const std::size_t plane = g.h * g.w;
        for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t c = 0; c < g.cin; ++c) {
                double* dst = gx + (n * g.cin + c) * plane;
                const double* src = gxm.data() + c * g.batch * plane + n * plane;
                for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
            }
    }
    bias_grad(gy, gb, g.batch, g.cout, g.oh * g.ow);
}

// Nearest-neighbour upsampling of the trailing `dims` axes (1 or 2).
Shape upsample_shape(OpKind kind, const Tensor& x, std::size_t dims, std::size_t f) {
    if (f == 0) dim_error(kind, "factor must be >= 1");
    if (x.rank() < dims) dim_error(kind, "input rank too small: " + shape_to_string(x.shape()));
    Shape s = x.shape();
    for (std::size_t d = 0; d < dims; ++d) s[s.size() - 1 - d] *= f;
    return s;
}

double sigmoid(double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

double softplus_value(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

std::vector<double> dropout_mask(std::size_t n, double rate, std::uint64_t seed) {
    std::vector<double> mask(n);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = static_cast<double>(rng::mix(seed, i) >> 11) * 0x1.0p-53;
        mask[i] = u >= rate ? keep_scale : 0.0;
    }
    return mask;
}

bool dropout_active(const OpAttrs& a) { return a.training && a.rate > 0.0; }

struct Forward {
    Tensor value;
    std::vector<double> saved;
};

Forward forward(OpKind kind, std::span<const Tensor* const> in, const OpAttrs& a) {
    auto need = [&](std::size_t lo, std::size_t hi) {
        if (in.size() < lo || in.size() > hi)
            dim_error(kind, "expected " + std::to_string(lo) + (lo == hi ? "" : "-" + std::to_string(hi)) +
                                " inputs, got " + std::to_string(in.size()));
    };
    switch (kind) {
        case OpKind::linear: {
            need(2, 3);
            const Tensor &x = *in[0], &w = *in[1];
            expect_rank(kind, x, 2, "input");
            expect_rank(kind, w, 2, "weight");
            const std::size_t batch = x.dim(0), fin = x.dim(1), fout = w.dim(0);
            if (w.dim(1) != fin)
                dim_error(kind, "weight " + shape_to_string(w.shape()) + " incompatible with input " +
                                    shape_to_string(x.shape()));
            const Tensor* b = in.size() == 3 ? in[2] : nullptr;
            if (b && (b->rank() != 1 || b->dim(0) != fout))
                dim_error(kind, "bias shape " + shape_to_string(b->shape()) + " != [" + std::to_string(fout) + "]");
            std::vector<double> y(batch * fout, 0.0);
            MapRow ym(y.data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(fout));
            ym.noalias() += mat(x) * mat(w).transpose();
            if (b)
                for (std::size_t i = 0; i < batch; ++i)
                    for (std::size_t o = 0; o < fout; ++o) y[i * fout + o] += (*b)[o];
            return {Tensor({batch, fout}, std::move(y)), {}};
        }
        case OpKind::conv2d:
        case OpKind::conv1d:
        case OpKind::transposed_conv2d: {
            need(2, 3);
            const Tensor* b = in.size() == 3 ? in[2] : nullptr;
            const ConvGeom g = conv_geom(kind, *in[0], *in[1], b, a);
            Shape s = conv_out_shape(kind, g);
            std::vector<double> y(shape_numel(s));
            const double* bd = b ? b->data().data() : nullptr;
            if (kind == OpKind::transposed_conv2d)
                tconv_forward(g, in[0]->data().data(), in[1]->data().data(), bd, y.data());
            else
                conv_forward(g, in[0]->data().data(), in[1]->data().data(), bd, y.data());
            return {Tensor(std::move(s), std::move(y)), {}};
        }
        case OpKind::upsample2d_nearest:
        case OpKind::upsample1d_nearest: {
            need(1, 1);
            const Tensor& x = *in[0];
            const std::size_t dims = kind == OpKind::upsample2d_nearest ? 2 : 1;
            Shape s = upsample_shape(kind, x, dims, a.factor);
            const std::size_t f = a.factor;
            const std::size_t w = x.shape().back();
            const std::size_t h = dims == 2 ? x.shape()[x.rank() - 2] : 1;
            const std::size_t planes = x.numel() / (h * w);
            std::vector<double> y(shape_numel(s));
            const double* xd = x.data().data();
            const std::size_t oh = h * (dims == 2 ? f : 1), ow = w * f;
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t r = 0; r < oh; ++r) {
                    const double* xr = xd + p * h * w + (dims == 2 ? r / f : r) * w;
                    double* yr = y.data() + p * oh * ow + r * ow;
                    for (std::size_t c = 0; c < ow; ++c) yr[c] = xr[c / f];
                }
            return {Tensor(std::move(s), std::move(y)), {}};
        }
        case OpKind::leaky_relu:
        case OpKind::tanh:
        case OpKind::softplus:
        case OpKind::scale: {
            need(1, 1);
            const Tensor& x = *in[0];
            std::vector<double> y(x.data().begin(), x.data().end());
            switch (kind) {
                case OpKind::leaky_relu:
                    for (double& v : y) v = v >= 0.0 ? v : a.slope * v;
                    break;
                case OpKind::tanh:
                    for (double& v : y) v = std::tanh(v);
                    break;
                case OpKind::softplus:
                    for (double& v : y) v = softplus_value(v);
                    break;
                default:
                    for (double& v : y) v *= a.alpha;
            }
            return {Tensor(x.shape(), std::move(y)), {}};
        }
        case OpKind::dropout: {
            need(1, 1);
            const Tensor& x = *in[0];
            if (a.rate < 0.0 || a.rate >= 1.0) dim_error(kind, "rate must lie in [0, 1)");
            if (!dropout_active(a)) return {x.with_requires_grad(false), {}};
            auto mask = dropout_mask(x.numel(), a.rate, a.mask_seed);
            std::vector<double> y(x.numel());
            for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * mask[i];
            return {Tensor(x.shape(), std::move(y)), std::move(mask)};
        }
        case OpKind::add: {
            need(2, 2);
            if (in[0]->shape() != in[1]->shape())
                dim_error(kind, "shape mismatch " + shape_to_string(in[0]->shape()) + " vs " +
                                    shape_to_string(in[1]->shape()));
            std::vector<double> y(in[0]->numel());
            for (std::size_t i = 0; i < y.size(); ++i) y[i] = (*in[0])[i] + (*in[1])[i];
            return {Tensor(in[0]->shape(), std::move(y)), {}};
        }
        case OpKind::matmul: {
            need(2, 2);
            const Tensor &l = *in[0], &r = *in[1];
            expect_rank(kind, l, 2, "left operand");
            expect_rank(kind, r, 2, "right operand");
            if (l.dim(1) != r.dim(0))
                dim_error(kind, "inner dimensions differ: " + shape_to_string(l.shape()) + " x " +
                                    shape_to_string(r.shape()));
            const std::size_t m = l.dim(0), k = l.dim(1), n = r.dim(1);
            std::vector<double> y(m * n, 0.0);
            MapRow(y.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() += mat(l) * mat(r);
            (void)k;
            return {Tensor({m, n}, std::move(y)), {}};
        }
        case OpKind::mse_loss: {
            need(2, 2);
            if (in[0]->shape() != in[1]->shape())
                dim_error(kind, "prediction " + shape_to_string(in[0]->shape()) + " vs target " +
                                    shape_to_string(in[1]->shape()));
            double s = 0.0;
            for (std::size_t i = 0; i < in[0]->numel(); ++i) {
                const double d = (*in[0])[i] - (*in[1])[i];
                s += d * d;
            }
            return {Tensor::scalar(s / static_cast<double>(in[0]->numel())), {}};
        }
        case OpKind::reshape: {
            need(1, 1);
            if (shape_numel(a.shape) != in[0]->numel())
                dim_error(kind, "cannot view " + shape_to_string(in[0]->shape()) + " as " + shape_to_string(a.shape));
            return {in[0]->reshaped(a.shape).with_requires_grad(false), {}};
        }
        case OpKind::mean: {
            need(1, 1);
            double s = 0.0;
            for (double v : in[0]->data()) s += v;
            return {Tensor::scalar(s / static_cast<double>(in[0]->numel())), {}};
        }
    }
    dim_error(kind, "unsupported op");
}

// Accumulates input gradients for one node.
void backward_node(OpKind kind, std::span<const Tensor* const> in, const OpAttrs& a, const Tensor& out,
                   const std::vector<double>& saved, const std::vector<double>& gy,
                   std::span<std::vector<double>*> gin) {
    switch (kind) {
        case OpKind::linear: {
            const Tensor &x = *in[0], &w = *in[1];
            const auto batch = static_cast<Eigen::Index>(x.dim(0)), fout = static_cast<Eigen::Index>(w.dim(0));
            const CMapRow gym(gy.data(), batch, fout);
            if (gin[0]) mat(*gin[0], x).noalias() += gym * mat(w);
            if (gin[1]) mat(*gin[1], w).noalias() += gym.transpose() * mat(x);
            if (gin.size() == 3 && gin[2])
                for (Eigen::Index i = 0; i < batch; ++i)
                    for (Eigen::Index o = 0; o < fout; ++o) (*gin[2])[o] += gym(i, o);
            return;
        }
        case OpKind::conv2d:
        case OpKind::conv1d:
        case OpKind::transposed_conv2d: {
            const Tensor* b = in.size() == 3 ? in[2] : nullptr;
            const ConvGeom g = conv_geom(kind, *in[0], *in[1], b, a);
            double* gx = gin[0] ? gin[0]->data() : nullptr;
            double* gw = gin[1] ? gin[1]->data() : nullptr;
            double* gb = (gin.size() == 3 && gin[2]) ? gin[2]->data() : nullptr;
            if (kind == OpKind::transposed_conv2d)
                tconv_backward(g, in[0]->data().data(), in[1]->data().data(), gy.data(), gx, gw, gb);
            else
                conv_backward(g, in[0]->data().data(), in[1]->data().data(), gy.data(), gx, gw, gb);
            return;
        }
        case OpKind::upsample2d_nearest:
        case OpKind::upsample1d_nearest: {
            if (!gin[0]) return;
            const Tensor& x = *in[0];
            const bool two = kind == OpKind::upsample2d_nearest;
            const std::size_t f = a.factor, w = x.shape().back();
            const std::size_t h = two ? x.shape()[x.rank() - 2] : 1;
            const std::size_t planes = x.numel() / (h * w);
            const std::size_t oh = h * (two ? f : 1), ow = w * f;
            double* gx = gin[0]->data();
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t r = 0; r < oh; ++r) {
                    double* gr = gx + p * h * w + (two ? r / f : r) * w;
                    const double* yr = gy.data() + p * oh * ow + r * ow;
                    for (std::size_t c = 0; c < ow; ++c) gr[c / f] += yr[c];
                }
            return;
        }
        case OpKind::leaky_relu: {
            if (!gin[0]) return;
            for (std::size_t i = 0; i < gy.size(); ++i) (*gin[0])[i] += (*in[0])[i] >= 0.0 ? gy[i] : a.slope * gy[i];
            return;
        }
        case OpKind::tanh: {
            if (!gin[0]) return;
            for (std::size_t i = 0; i < gy.size(); ++i) (*gin[0])[i] += gy[i] * (1.0 - out[i] * out[i]);
            return;
        }
        case OpKind::softplus: {
            if (!gin[0]) return;
            for (std::size_t i = 0; i < gy.size(); ++i) (*gin[0])[i] += gy[i] * sigmoid((*in[0])[i]);
            return;
        }
        case OpKind::scale: {
            if (!gin[0]) return;
            for (std::size_t i = 0; i < gy.size(); ++i) (*gin[0])[i] += a.alpha * gy[i];
            return;
        }
        case OpKind::dropout: {
            if (!gin[0]) return;
            if (saved.empty()) {
                for (std::size_t i = 0; i < gy.size(); ++i) (*gin[0])[i] += gy[i];
            } else {
                for (std::size_t i = 0; i < gy.size(); ++i) (*gin[0])[i] += saved[i] * gy[i];
            }
            return;
        }
        case OpKind::add:
        case OpKind::reshape: {
            for (auto* g : gin)
                if (g)
                    for (std::size_t i = 0; i < gy.size(); ++i) (*g)[i] += gy[i];
            return;
        }
        case OpKind::matmul: {
            const Tensor &l = *in[0], &r = *in[1];
            const CMapRow gym(gy.data(), static_cast<Eigen::Index>(l.dim(0)), static_cast<Eigen::Index>(r.dim(1)));
            if (gin[0]) mat(*gin[0], l).noalias() += gym * mat(r).transpose();
            if (gin[1]) mat(*gin[1], r).noalias() += mat(l).transpose() * gym;
            return;
        }
        case OpKind::mse_loss: {
            const double c = 2.0 * gy[0] / static_cast<double>(in[0]->numel());
            for (std::size_t i = 0; i < in[0]->numel(); ++i) {
                const double d = c * ((*in[0])[i] - (*in[1])[i]);
                if (gin[0]) (*gin[0])[i] += d;
                if (gin[1]) (*gin[1])[i] -= d;
            }
            return;
        }
        case OpKind::mean: {
            if (!gin[0]) return;
            const double c = gy[0] / static_cast<double>(in[0]->numel());
            for (double& v : *gin[0]) v += c;
            return;
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Gradients / Tape

const Tensor& Gradients::at(NodeId id) const {
    if (!has(id)) throw ValidationError("no gradient recorded for node " + std::to_string(id));
    return *grads_[id];
}

void Tape::check_live() const {
    if (consumed_) throw ValidationError("tape already consumed by backward(); call reset()");
}

NodeId Tape::leaf(Tensor value) {
    check_live();
    Node n;
    n.requires_grad = value.requires_grad();
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

NodeId Tape::apply(OpKind kind, std::span<const NodeId> inputs, const OpAttrs& attrs) {
    check_live();
    std::vector<const Tensor*> in;
    in.reserve(inputs.size());
    bool rg = false;
    for (NodeId id : inputs) {
        if (id >= nodes_.size()) throw ValidationError("unknown input node " + std::to_string(id));
        in.push_back(&nodes_[id].value);
        rg = rg || nodes_[id].requires_grad;
    }
    Forward f = forward(kind, in, attrs);
    Node n;
    n.op = kind;
    n.inputs.assign(inputs.begin(), inputs.end());
    n.attrs = attrs;
    n.value = std::move(f.value).with_requires_grad(rg);
    n.saved = std::move(f.saved);
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

const Tensor& Tape::value(NodeId id) const { return nodes_.at(id).value; }
bool Tape::requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
std::span<const NodeId> Tape::inputs(NodeId id) const { return nodes_.at(id).inputs; }

Gradients Tape::backward(NodeId loss) {
    check_live();
    if (loss >= nodes_.size()) throw ValidationError("unknown loss node " + std::to_string(loss));
    if (nodes_[loss].value.numel() != 1)
        throw ValidationError("backward requires a scalar loss, got shape " +
                              shape_to_string(nodes_[loss].value.shape()));
    std::vector<std::vector<double>> acc(loss + 1);
    acc[loss] = {1.0};
    for (NodeId id = loss + 1; id-- > 0;) {
        Node& node = nodes_[id];
        if (!node.op || !node.requires_grad || acc[id].empty()) continue;
        std::vector<const Tensor*> in;
        std::vector<std::vector<double>*> gin;
        for (NodeId src : node.inputs) {
            in.push_back(&nodes_[src].value);
            if (nodes_[src].requires_grad) {
                if (acc[src].empty()) acc[src].assign(nodes_[src].value.numel(), 0.0);
                gin.push_back(&acc[src]);
            } else {
                gin.push_back(nullptr);
            }
        }
        backward_node(*node.op, in, node.attrs, node.value, node.saved, acc[id], gin);
        if (id != loss) std::vector<double>().swap(acc[id]);
    }
    std::vector<std::optional<Tensor>> out(nodes_.size());
    for (NodeId id = 0; id < acc.size(); ++id) {
        const Node& node = nodes_[id];
        if (node.op || !node.requires_grad) continue;
        if (acc[id].empty()) acc[id].assign(node.value.numel(), 0.0);
        out[id] = Tensor(node.value.shape(), std::move(acc[id]));
    }
    for (NodeId id = acc.size(); id < nodes_.size(); ++id)
        if (!nodes_[id].op && nodes_[id].requires_grad) out[id] = Tensor::zeros(nodes_[id].value.shape());
    consumed_ = true;
    return Gradients(std::move(out));
}

void Tape::reset() {
    nodes_.clear();
    consumed_ = false;
}

Tensor evaluate(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs) {
    std::vector<const Tensor*> in;
    for (const auto& t : inputs) in.push_back(&t);
    return forward(kind, in, attrs).value;
}

// ---------------------------------------------------------------------------

namespace ops {

NodeId linear(Tape& t, NodeId x, NodeId w, NodeId b) { return t.apply(OpKind::linear, {x, w, b}); }

NodeId conv2d(Tape& t, NodeId x, NodeId w, NodeId b, std::size_t stride, std::size_t padding) {
    OpAttrs a;
    a.stride = stride;
    a.padding = padding;
    return t.apply(OpKind::conv2d, {x, w, b}, a);
}

NodeId conv1d(Tape& t, NodeId x, NodeId w, NodeId b, std::size_t stride, std::size_t padding) {
    OpAttrs a;
    a.stride = stride;
    a.padding = padding;
    return t.apply(OpKind::conv1d, {x, w, b}, a);
}

NodeId transposed_conv2d(Tape& t, NodeId x, NodeId w, NodeId b, std::size_t stride, std::size_t padding) {
    OpAttrs a;
    a.stride = stride;
    a.padding = padding;
    return t.apply(OpKind::transposed_conv2d, {x, w, b}, a);
}

NodeId upsample2d(Tape& t, NodeId x, std::size_t factor) {
    OpAttrs a;
    a.factor = factor;
    return t.apply(OpKind::upsample2d_nearest, {x}, a);
}

NodeId upsample1d(Tape& t, NodeId x, std::size_t factor) {
    OpAttrs a;
    a.factor = factor;
    return t.apply(OpKind::upsample1d_nearest, {x}, a);
}

NodeId leaky_relu(Tape& t, NodeId x, double slope) {
    OpAttrs a;
    a.slope = slope;
    return t.apply(OpKind::leaky_relu, {x}, a);
}

NodeId tanh(Tape& t, NodeId x) { return t.apply(OpKind::tanh, {x}); }
NodeId softplus(Tape& t, NodeId x) { return t.apply(OpKind::softplus, {x}); }

NodeId dropout(Tape& t, NodeId x, double rate, bool training, std::uint64_t mask_seed) {
    OpAttrs a;
    a.rate = rate;
    a.training = training;
    a.mask_seed = mask_seed;
    return t.apply(OpKind::dropout, {x}, a);
}

NodeId add(Tape& t, NodeId a, NodeId b) { return t.apply(OpKind::add, {a, b}); }
NodeId matmul(Tape& t, NodeId a, NodeId b) { return t.apply(OpKind::matmul, {a, b}); }
NodeId mse_loss(Tape& t, NodeId prediction, NodeId target) { return t.apply(OpKind::mse_loss, {prediction, target}); }

NodeId reshape(Tape& t, NodeId x, Shape shape) {
    OpAttrs a;
    a.shape = std::move(shape);
    return t.apply(OpKind::reshape, {x}, a);
}

NodeId scale(Tape& t, NodeId x, double alpha) {
    OpAttrs a;
    a.alpha = alpha;
    return t.apply(OpKind::scale, {x}, a);
}

NodeId mean(Tape& t, NodeId x) { return t.apply(OpKind::mean, {x}); }

NodeId sub(Tape& t, NodeId a, NodeId b) { return add(t, a, scale(t, b, -1.0)); }

}  // namespace ops

}  // namespace fixsynth
