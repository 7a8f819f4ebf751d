#include "tgd/nn.hpp"

#include <cmath>
#include <random>

#include "tgd/errors.hpp"

namespace tgd::nn {

namespace {

template <typename T>
Tensor<T> like(const Tensor<T>& x, int channels, int h, int w) {
  Tensor<T> t;
  t.batch = x.batch;
  t.height = h;
  t.width = w;
  t.m = Mat<T>::Zero(channels, static_cast<Eigen::Index>(x.batch) * h * w);
  return t;
}

template <typename T>
Mat<T> im2col(const Tensor<T>& x) {
  const int c = x.channels(), b = x.batch, h = x.height, w = x.width;
  const Eigen::Index plane = x.plane();
  Mat<T> col = Mat<T>::Zero(static_cast<Eigen::Index>(c) * 9, x.m.cols());
  for (int ci = 0; ci < c; ++ci) {
    const T* src = x.m.row(ci).data();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = col.row(static_cast<Eigen::Index>(ci) * 9 + ky * 3 + kx).data();
        const int dy = ky - 1, dx = kx - 1;
        const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
        for (int bi = 0; bi < b; ++bi)
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            const T* s = src + bi * plane + static_cast<Eigen::Index>(sy) * w + dx;
            T* d = dst + bi * plane + static_cast<Eigen::Index>(y) * w;
            for (int xx = x_lo; xx < x_hi; ++xx) d[xx] = s[xx];
          }
      }
  }
  return col;
}

template <typename T>
void col2im_add(const Mat<T>& col, Tensor<T>& gx) {
  const int c = gx.channels(), b = gx.batch, h = gx.height, w = gx.width;
  const Eigen::Index plane = gx.plane();
  for (int ci = 0; ci < c; ++ci) {
    T* dst = gx.m.row(ci).data();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = col.row(static_cast<Eigen::Index>(ci) * 9 + ky * 3 + kx).data();
        const int dy = ky - 1, dx = kx - 1;
        const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
        for (int bi = 0; bi < b; ++bi)
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            T* d = dst + bi * plane + static_cast<Eigen::Index>(sy) * w + dx;
            const T* s = src + bi * plane + static_cast<Eigen::Index>(y) * w;
            for (int xx = x_lo; xx < x_hi; ++xx) d[xx] += s[xx];
          }
      }
  }
}

template <typename T>
using MapW = Eigen::Map<const Mat<T>>;

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> t = like(a, a.channels() + b.channels(), a.height, a.width);
  t.m.topRows(a.channels()) = a.m;
  t.m.bottomRows(b.channels()) = b.m;
  return t;
}


}  // namespace

template <typename T>
Tensor<T> conv3x3(const Tensor<T>& x, const T* weight, const T* bias, int cout) {
  const Mat<T> col = im2col(x);
  const MapW<T> w(weight, cout, static_cast<Eigen::Index>(x.channels()) * 9);
  Tensor<T> out = like(x, cout, x.height, x.width);
  out.m.noalias() = w * col;
  for (int co = 0; co < cout; ++co) out.m.row(co).array() += bias[co];
  return out;
}

template <typename T>
void conv3x3_backward(const Tensor<T>& x, const T* weight, const Tensor<T>& grad_out, T* grad_weight,
                      T* grad_bias, Tensor<T>* grad_x) {
  const int cout = grad_out.channels();
  const Eigen::Index k = static_cast<Eigen::Index>(x.channels()) * 9;
  const Mat<T> col = im2col(x);
  Eigen::Map<Mat<T>> gw(grad_weight, cout, k);
  gw.noalias() += grad_out.m * col.transpose();
  for (int co = 0; co < cout; ++co) grad_bias[co] += grad_out.m.row(co).sum();
  if (grad_x) {
    const MapW<T> w(weight, cout, k);
    const Mat<T> gcol = w.transpose() * grad_out.m;
    *grad_x = like(x, x.channels(), x.height, x.width);
    col2im_add(gcol, *grad_x);
  }
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> y = x;
  y.m.array() = x.m.array() / (T(1) + (-x.m.array()).exp());
  return y;
}

template <typename T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  Tensor<T> g = grad_out;
  const auto s = (T(1) / (T(1) + (-x.m.array()).exp())).eval();
  g.m.array() *= s * (T(1) + x.m.array() * (T(1) - s));
  return g;
}

template <typename T>
Tensor<T> avgpool2(const Tensor<T>& x) {
  const int h = x.height / 2, w = x.width / 2;
  Tensor<T> out = like(x, x.channels(), h, w);
  const Eigen::Index in_plane = x.plane(), out_plane = out.plane();
  for (int c = 0; c < x.channels(); ++c) {
    const T* s = x.m.row(c).data();
    T* d = out.m.row(c).data();
    for (int b = 0; b < x.batch; ++b)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const T* p = s + b * in_plane + static_cast<Eigen::Index>(2 * y) * x.width + 2 * xx;
          d[b * out_plane + static_cast<Eigen::Index>(y) * w + xx] =
              T(0.25) * (p[0] + p[1] + p[x.width] + p[x.width + 1]);
        }
  }
  return out;
}

template <typename T>
Tensor<T> avgpool2_backward(const Tensor<T>& grad_out) {
  Tensor<T> up = upsample2(grad_out);
  up.m *= T(0.25);
  return up;
}

template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
  const int h = x.height * 2, w = x.width * 2;
  Tensor<T> out = like(x, x.channels(), h, w);
  const Eigen::Index in_plane = x.plane(), out_plane = out.plane();
  for (int c = 0; c < x.channels(); ++c) {
    const T* s = x.m.row(c).data();
    T* d = out.m.row(c).data();
    for (int b = 0; b < x.batch; ++b)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          d[b * out_plane + static_cast<Eigen::Index>(y) * w + xx] =
              s[b * in_plane + static_cast<Eigen::Index>(y / 2) * x.width + xx / 2];
  }
  return out;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& grad_out) {
  Tensor<T> g = avgpool2(grad_out);
  g.m *= T(4);
  return g;
}

template <typename T>
UNet<T>::UNet(UNetShape shape) : shape_(std::move(shape)) {
  if (shape_.base_width < 1 || shape_.multipliers.empty())
    throw ParameterError("network needs a positive base width and at least one level");
  const int L = levels();
  stem_ = add_conv(shape_.in_channels, width_at(0));
  down_.resize(L);
  up_.resize(L);
  for (int l = 0; l < L; ++l) {
    if (l > 0) down_[l] = add_conv(width_at(l - 1), width_at(l));
    enc_res_.push_back({add_conv(width_at(l), width_at(l)), add_conv(width_at(l), width_at(l))});
  }
  dec_res_.resize(L);
  for (int l = L - 2; l >= 0; --l) {
    up_[l] = add_conv(width_at(l + 1) + width_at(l), width_at(l));
    dec_res_[l] = {add_conv(width_at(l), width_at(l)), add_conv(width_at(l), width_at(l))};
  }
  head_ = add_conv(width_at(0), 1);
  params_.assign(n_params_, T(0));
}

template <typename T>
Conv UNet<T>::add_conv(int cin, int cout) {
  Conv c{cin, cout, n_params_, n_params_ + static_cast<std::size_t>(cout) * cin * 9};
  n_params_ = c.bias_offset + static_cast<std::size_t>(cout);
  return c;
}

template <typename T>
void UNet<T>::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::fill(params_.begin(), params_.end(), T(0));
  auto fill = [&](const Conv& c) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(c.cin) * 9.0);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < static_cast<std::size_t>(c.cout) * c.cin * 9; ++i)
      params_[c.weight_offset + i] = static_cast<T>(u(rng));
  };
  fill(stem_);
  for (int l = 0; l < levels(); ++l) {
    if (l > 0) fill(down_[l]);
    fill(enc_res_[l].first);
    fill(enc_res_[l].second);
  }
  for (int l = levels() - 2; l >= 0; --l) {
    fill(up_[l]);
    fill(dec_res_[l].first);
    fill(dec_res_[l].second);
  }
  // head_ stays zero: the score starts at its analytic skip term.
}

template <typename T>
Tensor<T> UNet<T>::forward(const Tensor<T>& input, Cache* cache) const {
  if (input.channels() != shape_.in_channels)
    throw ShapeError("network expects " + std::to_string(shape_.in_channels) + " input channels");
  if (input.height % size_multiple() || input.width % size_multiple())
    throw ShapeError("patch size must be divisible by " + std::to_string(size_multiple()));
  const int L = levels();
  const T* p = params_.data();
  auto conv = [&](const Tensor<T>& x, const Conv& c) {
    return conv3x3(x, p + c.weight_offset, p + c.bias_offset, c.cout);
  };
  Cache local;
  Cache& k = cache ? *cache : local;
  k.enc_in.assign(L, {});
  k.enc_mid.assign(L, {});
  k.enc_mid_act.assign(L, {});
  k.enc_out.assign(L, {});
  k.pooled.assign(L, {});
  k.down_pre.assign(L, {});
  k.concat.assign(L, {});
  k.up_pre.assign(L, {});
  k.dec_in.assign(L, {});
  k.dec_mid.assign(L, {});
  k.dec_mid_act.assign(L, {});
  k.input = input;

  auto resblock = [&](const Tensor<T>& h, const ResBlock& rb, Tensor<T>& mid, Tensor<T>& mid_act) {
    mid = conv(h, rb.first);
    mid_act = silu(mid);
    Tensor<T> out = conv(mid_act, rb.second);
    out.m += h.m;
    return out;
  };

  k.stem_pre = conv(input, stem_);
  k.enc_in[0] = silu(k.stem_pre);
  k.enc_out[0] = resblock(k.enc_in[0], enc_res_[0], k.enc_mid[0], k.enc_mid_act[0]);
  for (int l = 1; l < L; ++l) {
    k.pooled[l] = avgpool2(k.enc_out[l - 1]);
    k.down_pre[l] = conv(k.pooled[l], down_[l]);
    k.enc_in[l] = silu(k.down_pre[l]);
    k.enc_out[l] = resblock(k.enc_in[l], enc_res_[l], k.enc_mid[l], k.enc_mid_act[l]);
  }
  Tensor<T> d = k.enc_out[L - 1];
  for (int l = L - 2; l >= 0; --l) {
    k.concat[l] = concat_channels(upsample2(d), k.enc_out[l]);
    k.up_pre[l] = conv(k.concat[l], up_[l]);
    k.dec_in[l] = silu(k.up_pre[l]);
    d = resblock(k.dec_in[l], dec_res_[l], k.dec_mid[l], k.dec_mid_act[l]);
  }
  k.head_in = d;
  k.head_act = silu(d);
  return conv(k.head_act, head_);
}

template <typename T>
void UNet<T>::backward(const Cache& k, const Tensor<T>& grad_out, std::vector<T>& grad,
                       Tensor<T>* grad_input) const {
  if (grad.size() != n_params_) grad.assign(n_params_, T(0));
  const int L = levels();
  const T* p = params_.data();
  T* g = grad.data();
  auto conv_back = [&](const Tensor<T>& x, const Conv& c, const Tensor<T>& go, bool want_input) {
    Tensor<T> gx;
    conv3x3_backward(x, p + c.weight_offset, go, g + c.weight_offset, g + c.bias_offset,
                     want_input ? &gx : nullptr);
    return gx;
  };
  // Returns gradient w.r.t. the resblock input h.
  auto resblock_back = [&](const Tensor<T>& h, const ResBlock& rb, const Tensor<T>& mid,
                           const Tensor<T>& mid_act, const Tensor<T>& go) {
    Tensor<T> g_mid_act = conv_back(mid_act, rb.second, go, true);
    Tensor<T> g_mid = silu_backward(mid, g_mid_act);
    Tensor<T> gh = conv_back(h, rb.first, g_mid, true);
    gh.m += go.m;
    return gh;
  };

  Tensor<T> gd = silu_backward(k.head_in, conv_back(k.head_act, head_, grad_out, true));
  std::vector<Tensor<T>> g_enc_out(L);
  for (int l = 0; l <= L - 2; ++l) {
    Tensor<T> g_in = resblock_back(k.dec_in[l], dec_res_[l], k.dec_mid[l], k.dec_mid_act[l], gd);
    Tensor<T> g_up_pre = silu_backward(k.up_pre[l], g_in);
    Tensor<T> g_cat = conv_back(k.concat[l], up_[l], g_up_pre, true);
    const int c_up = width_at(l + 1);
    Tensor<T> g_u;
    g_u.batch = g_cat.batch;
    g_u.height = g_cat.height;
    g_u.width = g_cat.width;
    g_u.m = g_cat.m.topRows(c_up);
    Tensor<T> g_skip = g_u;
    g_skip.m = g_cat.m.bottomRows(width_at(l));
    g_enc_out[l] = std::move(g_skip);
    gd = upsample2_backward(g_u);
  }
  // gd now holds the gradient flowing into e_{L-1} from the decoder (or the head when L == 1).
  Tensor<T> ge = gd;
  for (int l = L - 1; l >= 0; --l) {
    if (l < L - 1) ge.m += g_enc_out[l].m;
    Tensor<T> g_in = resblock_back(k.enc_in[l], enc_res_[l], k.enc_mid[l], k.enc_mid_act[l], ge);
    if (l > 0) {
      Tensor<T> g_down = silu_backward(k.down_pre[l], g_in);
      Tensor<T> g_pool = conv_back(k.pooled[l], down_[l], g_down, true);
      ge = avgpool2_backward(g_pool);
    } else {
      Tensor<T> g_stem = silu_backward(k.stem_pre, g_in);
      Tensor<T> gx = conv_back(k.input, stem_, g_stem, grad_input != nullptr);
      if (grad_input) *grad_input = std::move(gx);
    }
  }
}

template <typename T>
Mat<T> UNet<T>::pooled_features(const Cache& cache) const {
  const Tensor<T>& e = cache.enc_out[levels() - 1];
  Mat<T> f(e.batch, e.channels());
  for (int b = 0; b < e.batch; ++b)
    for (int c = 0; c < e.channels(); ++c)
      f(b, c) = e.m.row(c).segment(b * e.plane(), e.plane()).mean();
  return f;
}

template <typename T>
Tensor<T> UNet<T>::encode(const Tensor<T>& input) const {
  const T* p = params_.data();
  auto conv = [&](const Tensor<T>& x, const Conv& c) {
    return conv3x3(x, p + c.weight_offset, p + c.bias_offset, c.cout);
  };
  auto resblock = [&](const Tensor<T>& h, const ResBlock& rb) {
    Tensor<T> out = conv(silu(conv(h, rb.first)), rb.second);
    out.m += h.m;
    return out;
  };
  Tensor<T> e = resblock(silu(conv(input, stem_)), enc_res_[0]);
  for (int l = 1; l < levels(); ++l) e = resblock(silu(conv(avgpool2(e), down_[l])), enc_res_[l]);
  return e;
}

#define TGD_INSTANTIATE(T)                                                                      \
  template class UNet<T>;                                                                       \
  template Tensor<T> conv3x3<T>(const Tensor<T>&, const T*, const T*, int);                     \
  template void conv3x3_backward<T>(const Tensor<T>&, const T*, const Tensor<T>&, T*, T*,        \
                                    Tensor<T>*);                                                \
  template Tensor<T> silu<T>(const Tensor<T>&);                                                 \
  template Tensor<T> silu_backward<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> avgpool2<T>(const Tensor<T>&);                                             \
  template Tensor<T> avgpool2_backward<T>(const Tensor<T>&);                                    \
  template Tensor<T> upsample2<T>(const Tensor<T>&);                                            \
  template Tensor<T> upsample2_backward<T>(const Tensor<T>&);

TGD_INSTANTIATE(float)
TGD_INSTANTIATE(double)

#undef TGD_INSTANTIATE

}  // namespace tgd::nn
