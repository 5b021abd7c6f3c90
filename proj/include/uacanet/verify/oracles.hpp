#pragma once

// Naive reference implementations. Each one works directly on the raw
// parameter values with explicit per-pixel loops and shares no code path with
// the matrix-product implementations it is used to check.

#include <vector>

#include "uacanet/attention.hpp"
#include "uacanet/uaca.hpp"

namespace uacanet::oracle {

/// Dense [B,C,H,W] array of doubles.
struct Field {
  std::int64_t b = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  Field() = default;
  Field(std::int64_t b_, std::int64_t c_, std::int64_t h_, std::int64_t w_)
      : b(b_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(b_ * c_ * h_ * w_), 0.0) {}

  template <typename T>
  static Field from(const Tensor<T>& t) {
    Field f(t.dim(0), t.dim(1), t.dim(2), t.dim(3));
    for (std::size_t i = 0; i < f.v.size(); ++i) f.v[i] = static_cast<double>(t.values()[i]);
    return f;
  }

  double& operator()(std::int64_t n, std::int64_t ch, std::int64_t y, std::int64_t x) {
    return v[static_cast<std::size_t>(((n * c + ch) * h + y) * w + x)];
  }
  double operator()(std::int64_t n, std::int64_t ch, std::int64_t y, std::int64_t x) const {
    return v[static_cast<std::size_t>(((n * c + ch) * h + y) * w + x)];
  }
};

/// Largest |a-b| / max(1, |b|) over all elements.
template <typename T>
double max_rel_diff(const Tensor<T>& actual, const Field& expected) {
  if (static_cast<std::size_t>(actual.numel()) != expected.v.size()) return std::numeric_limits<double>::infinity();
  double worst = 0;
  for (std::size_t i = 0; i < expected.v.size(); ++i) {
    const double a = static_cast<double>(actual.values()[i]), e = expected.v[i];
    worst = std::max(worst, std::abs(a - e) / std::max(1.0, std::abs(e)));
  }
  return worst;
}

/// Direct-sum convolution.
template <typename T>
Field conv2d(const Field& x, const Tensor<T>& weight, const Tensor<T>& bias, const Conv2dOptions& opt) {
  const std::int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const std::int64_t oh = conv_out_extent(x.h, kh, opt.stride, opt.pad_h, opt.dilation);
  const std::int64_t ow = conv_out_extent(x.w, kw, opt.stride, opt.pad_w, opt.dilation);
  Field out(x.b, cout, oh, ow);
  for (std::int64_t n = 0; n < x.b; ++n)
    for (std::int64_t co = 0; co < cout; ++co)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          double acc = static_cast<double>(bias[co]);
          for (std::int64_t ci = 0; ci < x.c; ++ci)
            for (std::int64_t i = 0; i < kh; ++i)
              for (std::int64_t j = 0; j < kw; ++j) {
                const std::int64_t iy = oy * opt.stride - opt.pad_h + i * opt.dilation;
                const std::int64_t ix = ox * opt.stride - opt.pad_w + j * opt.dilation;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                acc += static_cast<double>(weight[((co * x.c + ci) * kh + i) * kw + j]) * x(n, ci, iy, ix);
              }
          out(n, co, oy, ox) = acc;
        }
  return out;
}

/// Point-wise projection of one pixel's channel vector.
template <typename T>
std::vector<double> project(const Conv2d<T>& conv, const std::vector<double>& in) {
  const std::int64_t cout = conv.out_channels(), cin = conv.in_channels();
  std::vector<double> out(static_cast<std::size_t>(cout));
  for (std::int64_t o = 0; o < cout; ++o) {
    double acc = conv.has_bias ? static_cast<double>(conv.bias[o]) : 0.0;
    for (std::int64_t i = 0; i < cin; ++i) acc += static_cast<double>(conv.weight[o * cin + i]) * in[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(o)] = acc;
  }
  return out;
}

inline std::vector<double> pixel(const Field& f, std::int64_t n, std::int64_t y, std::int64_t x) {
  std::vector<double> v(static_cast<std::size_t>(f.c));
  for (std::int64_t ch = 0; ch < f.c; ++ch) v[static_cast<std::size_t>(ch)] = f(n, ch, y, x);
  return v;
}

/// Axial attention with a triple loop over lines, query positions and key
/// positions.
template <typename T>
Field axial_attention(const Field& x, const AxialAttention<T>& p) {
  Field out = x;
  const bool horiz = p.axis == Axis::horizontal;
  const std::int64_t lines = horiz ? x.h : x.w;
  const std::int64_t len = horiz ? x.w : x.h;
  for (std::int64_t n = 0; n < x.b; ++n)
    for (std::int64_t line = 0; line < lines; ++line) {
      auto at = [&](std::int64_t pos) {
        return horiz ? pixel(x, n, line, pos) : pixel(x, n, pos, line);
      };
      std::vector<std::vector<double>> q, k, v;
      for (std::int64_t pos = 0; pos < len; ++pos) {
        const auto px = at(pos);
        q.push_back(project(p.query, px));
        k.push_back(project(p.key, px));
        v.push_back(project(p.value, px));
      }
      for (std::int64_t i = 0; i < len; ++i) {
        std::vector<double> logits(static_cast<std::size_t>(len));
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t j = 0; j < len; ++j) {
          double dot = 0;
          for (std::size_t c = 0; c < q[0].size(); ++c) dot += q[i][c] * k[j][c];
          logits[j] = dot;
          mx = std::max(mx, dot);
        }
        double z = 0;
        for (auto& l : logits) z += (l = std::exp(l - mx));
        std::vector<double> att(static_cast<std::size_t>(x.c), 0.0);
        for (std::int64_t j = 0; j < len; ++j)
          for (std::int64_t c = 0; c < x.c; ++c) att[c] += logits[j] / z * v[j][c];
        const auto o = project(p.out_proj, att);
        for (std::int64_t c = 0; c < x.c; ++c) {
          if (horiz) out(n, c, line, i) += o[c];
          else out(n, c, i, line) += o[c];
        }
      }
    }
  return out;
}

template <typename T>
Field paa(const Field& x, const AxialAttention<T>& h, const AxialAttention<T>& v) {
  Field a = axial_attention(x, h);
  const Field b = axial_attention(x, v);
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
  return a;
}

struct Areas {
  double fg, bg, unc;
};

inline Areas area_values(double m) {
  return {m > 0.5 ? m - 0.5 : 0.0, m < 0.5 ? 0.5 - m : 0.0, 0.5 - std::abs(m - 0.5)};
}

/// vectors[a][n][c] = sum over pixels of m_a * x
inline std::vector<std::vector<std::vector<double>>> context_vectors(const Field& x, const std::vector<Field>& maps) {
  std::vector<std::vector<std::vector<double>>> out(maps.size(),
                                                    std::vector<std::vector<double>>(static_cast<std::size_t>(x.b), std::vector<double>(static_cast<std::size_t>(x.c), 0.0)));
  for (std::size_t a = 0; a < maps.size(); ++a)
    for (std::int64_t n = 0; n < x.b; ++n)
      for (std::int64_t c = 0; c < x.c; ++c)
        for (std::int64_t y = 0; y < x.h; ++y)
          for (std::int64_t xx = 0; xx < x.w; ++xx) out[a][n][c] += maps[a](n, 0, y, xx) * x(n, c, y, xx);
  return out;
}

/// Per-pixel scalar dot products followed by an explicit softmax.
template <typename T>
std::vector<Field> similarity_scores(const Field& x, const std::vector<std::vector<std::vector<double>>>& vectors,
                                     const UACAParams<T>& params) {
  std::vector<Field> scores(vectors.size(), Field(x.b, 1, x.h, x.w));
  for (std::int64_t n = 0; n < x.b; ++n) {
    std::vector<std::vector<double>> keys;
    for (const auto& va : vectors) keys.push_back(project(params.phi, va[n]));
    for (std::int64_t y = 0; y < x.h; ++y)
      for (std::int64_t xx = 0; xx < x.w; ++xx) {
        const auto query = project(params.psi, pixel(x, n, y, xx));
        std::vector<double> e(vectors.size());
        double z = 0;
        for (std::size_t a = 0; a < vectors.size(); ++a) {
          double dot = 0;
          for (std::size_t c = 0; c < query.size(); ++c) dot += query[c] * keys[a][c];
          e[a] = dot;
        }
        const double mx = *std::max_element(e.begin(), e.end());
        for (auto& v : e) z += (v = std::exp(v - mx));
        for (std::size_t a = 0; a < vectors.size(); ++a) scores[a](n, 0, y, xx) = e[a] / z;
      }
  }
  return scores;
}

template <typename T>
Field context_aggregate(const std::vector<Field>& scores, const std::vector<std::vector<std::vector<double>>>& vectors,
                        const UACAParams<T>& params) {
  const auto& s0 = scores.at(0);
  const std::int64_t width = params.delta.out_channels();
  Field out(s0.b, width, s0.h, s0.w);
  for (std::int64_t n = 0; n < s0.b; ++n) {
    std::vector<std::vector<double>> values;
    for (const auto& va : vectors) values.push_back(project(params.omega, va[n]));
    for (std::int64_t y = 0; y < s0.h; ++y)
      for (std::int64_t x = 0; x < s0.w; ++x) {
        std::vector<double> mix(values[0].size(), 0.0);
        for (std::size_t a = 0; a < values.size(); ++a)
          for (std::size_t c = 0; c < mix.size(); ++c) mix[c] += scores[a](n, 0, y, x) * values[a][c];
        const auto t = project(params.delta, mix);
        for (std::int64_t c = 0; c < width; ++c) out(n, c, y, x) = t[c];
      }
  }
  return out;
}

/// Area maps of a saliency field, as Fields.
inline std::vector<Field> area_fields(const Field& m, bool with_uncertainty) {
  std::vector<Field> maps(with_uncertainty ? 3 : 2, Field(m.b, 1, m.h, m.w));
  for (std::size_t i = 0; i < m.v.size(); ++i) {
    const auto a = area_values(m.v[i]);
    maps[0].v[i] = a.fg;
    maps[1].v[i] = a.bg;
    if (with_uncertainty) maps[2].v[i] = a.unc;
  }
  return maps;
}

}  // namespace uacanet::oracle
