#pragma once

// Verification checks shared by the selftest command, the unit tests and the
// acceptance suite. Each check returns the worst error it saw so callers can
// apply their own tolerance.

#include <chrono>
#include <filesystem>
#include <functional>

#include "uacanet/checkpoint.hpp"
#include "uacanet/grad_check.hpp"
#include "uacanet/verify/oracles.hpp"

namespace uacanet::verify {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Worst deviation of the three area-map identities over `count` uniform m.
struct AreaIdentityErrors {
  double sum_to_half = 0;     // |m_f + m_b + m_u - 0.5|
  double disjoint = 0;        // |m_f * m_b|
  double reconstruction = 0;  // |0.5 + m_f - m_b - m|
  double negativity = 0;      // max(0, -min(m_f, m_b, m_u))

  double worst() const { return std::max({sum_to_half, disjoint, reconstruction, negativity}); }
};

using AreaFn = std::function<AreaMaps<double>(const Tensor<double>&)>;

inline AreaIdentityErrors area_identity_errors(std::size_t count, std::uint64_t seed,
                                               const AreaFn& fn = [](const Tensor<double>& m) { return area_maps(m); }) {
  std::mt19937_64 rng(seed);
  const auto m = Tensor<double>::uniform({1, 1, 1, static_cast<std::int64_t>(count)}, rng, 0.0, 1.0);
  const auto a = fn(m);
  AreaIdentityErrors e;
  for (std::size_t i = 0; i < count; ++i) {
    const double f = a.fg[i], b = a.bg[i], u = a.unc[i];
    e.sum_to_half = std::max(e.sum_to_half, std::abs(f + b + u - 0.5));
    e.disjoint = std::max(e.disjoint, std::abs(f * b));
    e.reconstruction = std::max(e.reconstruction, std::abs(0.5 + f - b - m[i]));
    e.negativity = std::max(e.negativity, std::max(0.0, -std::min({f, b, u})));
  }
  return e;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  return Tensor<T>::randn(std::move(shape), rng, static_cast<T>(scale));
}

/// Random small UACA instance: features, guidance map in (0,1), parameters.
template <typename T>
struct UacaInstance {
  Tensor<T> x;
  Tensor<T> m;
  UACAParams<T> params;
  bool with_uncertainty = true;
};

template <typename T>
UacaInstance<T> random_uaca_instance(std::mt19937_64& rng, bool with_uncertainty = true) {
  std::uniform_int_distribution<int> side(1, 8), chan(1, 8), batch(1, 2);
  const int b = batch(rng), c = chan(rng), h = side(rng), w = side(rng), width = chan(rng);
  Initializer init(rng());
  UacaInstance<T> inst;
  inst.x = random_tensor<T>({b, c, h, w}, rng, 0.5);
  inst.m = Tensor<T>::uniform({b, 1, h, w}, rng, T(0), T(1));
  inst.params = UACAParams<T>(init, c, width, with_uncertainty);
  inst.with_uncertainty = with_uncertainty;
  return inst;
}

/// Worst |sum_a s_a - 1| over every pixel of `instances` random UACA inputs.
inline double similarity_partition_error(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (std::size_t k = 0; k < instances; ++k) {
    auto inst = random_uaca_instance<float>(rng, k % 4 != 3);
    NoGradGuard no_grad;
    const auto areas = area_maps(inst.m);
    const auto v = context_vectors(inst.x, areas, inst.with_uncertainty);
    const auto s = similarity_scores(inst.x, v, inst.params);
    for (std::int64_t i = 0; i < s[0].numel(); ++i) {
      double total = 0;
      for (const auto& si : s) total += static_cast<double>(si[i]);
      worst = std::max(worst, std::abs(total - 1.0));
    }
  }
  return worst;
}

struct OracleErrors {
  double horizontal = 0;
  double vertical = 0;
  double paa = 0;
  double context_vectors = 0;
  double similarity = 0;
  double aggregate = 0;
  double uaca_context = 0;  // t inside the full uaca_forward

  double worst() const {
    return std::max({horizontal, vertical, paa, context_vectors, similarity, aggregate, uaca_context});
  }
};

/// Matrix-product implementations vs. loop oracles on random instances with
/// spatial size <= 8x8 and <= 8 channels.
inline OracleErrors oracle_errors(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  OracleErrors e;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < instances; ++k) {
    {
      std::uniform_int_distribution<int> side(1, 8), batch(1, 2), rexp(0, 3);
      const std::int64_t r = std::int64_t{1} << rexp(rng);
      const std::int64_t c = r * std::uniform_int_distribution<std::int64_t>(1, 8 / r)(rng);
      Initializer init(rng());
      const auto x = random_tensor<double>({batch(rng), c, side(rng), side(rng)}, rng);
      AxialAttention<double> h(init, c, Axis::horizontal, r), v(init, c, Axis::vertical, r);
      const auto xf = oracle::Field::from(x);
      e.horizontal = std::max(e.horizontal, oracle::max_rel_diff(h(x), oracle::axial_attention(xf, h)));
      e.vertical = std::max(e.vertical, oracle::max_rel_diff(v(x), oracle::axial_attention(xf, v)));
      e.paa = std::max(e.paa, oracle::max_rel_diff(paa(x, h, v), oracle::paa(xf, h, v)));
    }
    {
      auto inst = random_uaca_instance<double>(rng, k % 3 != 2);
      const auto xf = oracle::Field::from(inst.x);
      const auto maps = oracle::area_fields(oracle::Field::from(inst.m), inst.with_uncertainty);
      const auto ov = oracle::context_vectors(xf, maps);
      const auto os = oracle::similarity_scores(xf, ov, inst.params);
      const auto ot = oracle::context_aggregate(os, ov, inst.params);

      const auto areas = area_maps(inst.m);
      const auto v = context_vectors(inst.x, areas, inst.with_uncertainty);
      for (std::size_t a = 0; a < v.size(); ++a) {
        oracle::Field f(xf.b, xf.c, 1, 1);
        for (std::int64_t n = 0; n < xf.b; ++n)
          for (std::int64_t c = 0; c < xf.c; ++c) f(n, c, 0, 0) = ov[a][n][c];
        e.context_vectors = std::max(e.context_vectors, oracle::max_rel_diff(v.items[a], f));
      }
      const auto s = similarity_scores(inst.x, v, inst.params);
      for (std::size_t a = 0; a < s.size(); ++a) e.similarity = std::max(e.similarity, oracle::max_rel_diff(s[a], os[a]));
      e.aggregate = std::max(e.aggregate, oracle::max_rel_diff(context_aggregate(s, v, inst.params), ot));

      // The full stage, given a guidance logit whose sigmoid is m.
      Tensor<double> logit = inst.m.clone();
      for (auto& val : logit.data()) val = std::log(val / (1.0 - val));
      const auto out = uaca_forward(inst.x, logit, inst.params);
      e.uaca_context = std::max(e.uaca_context, oracle::max_rel_diff(out.context, ot));
    }
  }
  return e;
}

/// Named gradient check outcome.
struct GradResult {
  std::string name;
  double error = 0;
};

namespace detail {

/// Random weights scaled so that sum |f_i * R_i| = 1 at the probe point.
/// Keeps the rounding noise of the summed loss near eps regardless of size.
inline Tensor<double> unit_mass_weights(const Tensor<double>& out, std::mt19937_64& rng) {
  auto r = Tensor<double>::randn(out.shape(), rng);
  double mass = 0;
  for (std::int64_t i = 0; i < out.numel(); ++i) mass += std::abs(out[i] * r[i]);
  if (mass > 0)
    for (auto& v : r.data()) v /= mass;
  return r;
}

/// sum(f(x) * R) for a fixed random R, so every output coordinate matters.
inline std::function<Tensor<double>()> weighted(std::function<Tensor<double>()> f, std::mt19937_64& rng) {
  auto weights = std::make_shared<Tensor<double>>(unit_mass_weights(f(), rng));
  return [f = std::move(f), weights] { return sum(mul(f(), *weights)); };
}

/// Values bounded away from 0 so kinks and poles are not straddled by h.
inline Tensor<double> away_from_zero(Shape shape, std::mt19937_64& rng, double lo = 0.05) {
  auto t = Tensor<double>::randn(std::move(shape), rng);
  for (auto& v : t.data()) v = v >= 0 ? v + lo : v - lo;
  return t;
}

/// Sum of each output weighted elementwise by its own fixed random tensor.
inline std::function<Tensor<double>()> weighted_all(std::function<std::vector<Tensor<double>>()> f,
                                                    std::mt19937_64& rng) {
  auto weights = std::make_shared<std::vector<Tensor<double>>>();
  for (const auto& t : f()) weights->push_back(unit_mass_weights(t, rng));
  return [f = std::move(f), weights] {
    const auto outs = f();
    Tensor<double> total = sum(mul(outs[0], (*weights)[0]));
    for (std::size_t i = 1; i < outs.size(); ++i) total = add(total, sum(mul(outs[i], (*weights)[i])));
    return total;
  };
}

}  // namespace detail

/// Gradient checks of every differentiable op in 64-bit mode, one
/// randomised instance per op per seed; reports the worst error per op.
inline std::vector<GradResult> op_grad_checks(std::size_t seeds, std::uint64_t base_seed) {
  std::map<std::string, double> worst;
  auto record = [&](const std::string& name, double err) { worst[name] = std::max(worst[name], err); };
  for (std::size_t s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(base_seed + s);
    std::uniform_int_distribution<int> ext(1, 5);
    const Shape shape{ext(rng), ext(rng), ext(rng), ext(rng)};
    using D = Tensor<double>;
    auto x = detail::away_from_zero(shape, rng);
    auto y = detail::away_from_zero(shape, rng);
    auto pos = D::uniform(shape, rng, 0.2, 0.8);
    auto check = [&](const std::string& name, std::function<D()> f, std::vector<D> wrt) {
      record(name, grad_check_many<double>(detail::weighted(std::move(f), rng), std::move(wrt)).max_rel_error);
    };
    check("add", [&] { return add(x, y); }, {x, y});
    check("sub", [&] { return sub(x, y); }, {x, y});
    check("mul", [&] { return mul(x, y); }, {x, y});
    check("div", [&] { return div(x, y); }, {x, y});
    check("scalar_max", [&] { return scalar_max(x, 0.0); }, {x});
    check("abs", [&] { return abs(x); }, {x});
    check("relu", [&] { return relu(x); }, {x});
    check("sigmoid", [&] { return sigmoid(x); }, {x});
    check("log", [&] { return log(pos); }, {pos});
    check("clamp", [&] { return clamp(pos, 0.1, 0.9); }, {pos});
    check("scalar ops", [&] { return rsub_scalar(mul_scalar(add_scalar(x, 0.3), 1.7), 2.0); }, {x});
    check("mean", [&] { return mean(mul(x, x)); }, {x});
    check("reshape+permute", [&] { return permute(reshape(x, {shape[0], shape[1], shape[2] * shape[3]}), {2, 0, 1}); }, {x});
    {
      auto a = D::randn({shape[0], 1, 3, ext(rng)}, rng);
      auto b = D::randn({1, shape[1], a.dim(3), 4}, rng);
      check("matmul", [&] { return matmul(a, b); }, {a, b});
    }
    check("softmax_last", [&] { return softmax_last(x); }, {x});
    {
      const int k = 1 + static_cast<int>(s % 4);
      std::vector<D> items;
      for (int i = 0; i < k; ++i) items.push_back(D::randn(shape, rng));
      check("softmax_over", [&] {
        auto outs = softmax_over(items);
        D total = mul_scalar(outs[0], 1.0);
        for (std::size_t i = 1; i < outs.size(); ++i) total = add(total, mul_scalar(outs[i], 1.0 + static_cast<double>(i)));
        return total;
      }, items);
    }
    {
      std::uniform_int_distribution<int> kdist(1, 3), stride(1, 2), pad(0, 2), dil(1, 2);
      const std::int64_t kh = kdist(rng), kw = kdist(rng);
      Conv2dOptions opt{stride(rng), pad(rng), pad(rng), dil(rng)};
      const std::int64_t h = std::max<std::int64_t>(shape[2] + 3, opt.dilation * (kh - 1) + 1);
      const std::int64_t w = std::max<std::int64_t>(shape[3] + 3, opt.dilation * (kw - 1) + 1);
      auto in = D::randn({shape[0], shape[1], h, w}, rng);
      auto weight = D::randn({ext(rng), shape[1], kh, kw}, rng);
      auto bias = D::randn({weight.dim(0)}, rng);
      check("conv2d", [&] { return conv2d(in, weight, bias, opt); }, {in, weight, bias});
      auto pw = D::randn({3, shape[1], 1, 1}, rng);
      auto pb = D::randn({3}, rng);
      check("conv2d pointwise", [&] { return conv2d(in, pw, pb); }, {in, pw, pb});
    }
    check("bilinear_resize up", [&] { return bilinear_resize(x, shape[2] * 2 + 1, shape[3] * 3); }, {x});
    check("bilinear_resize down", [&] { return bilinear_resize(x, std::max<std::int64_t>(1, shape[2] / 2), 1); }, {x});
    check("concat_channels", [&] { return concat_channels<double>({x, y, x}); }, {x, y});
    {
      const std::int64_t groups = 1 + static_cast<std::int64_t>(s % 2);
      auto in = D::randn({shape[0], 2 * groups * shape[1], shape[2] + 1, shape[3] + 1}, rng);
      auto gamma = D::randn({in.dim(1)}, rng);
      auto beta = D::randn({in.dim(1)}, rng);
      check("group_norm", [&] { return group_norm(in, groups, gamma, beta); }, {in, gamma, beta});
    }
    {
      auto p = D::uniform({shape[0], 1, shape[2], shape[3]}, rng, 0.05, 0.95);
      auto g = D::zeros(p.shape());
      for (auto& v : g.data()) v = std::uniform_int_distribution<int>(0, 1)(rng);
      record("bce_loss", grad_check_many<double>([&] { return bce_loss(p, g); }, {p}).max_rel_error);
      record("iou_loss", grad_check_many<double>([&] { return iou_loss(p, g); }, {p}).max_rel_error);
      auto l0 = D::randn(p.shape(), rng), l1 = D::randn(p.shape(), rng), l2 = D::randn(p.shape(), rng),
           l3 = D::randn(p.shape(), rng);
      record("total_loss", grad_check_many<double>([&] { return total_loss<double>({l0, l1, l2, l3}, g).total; },
                                                   {l0, l1, l2, l3})
                               .max_rel_error);
    }
    {
      // Area maps at points away from the m = 0.5 kink.
      auto m = D::uniform({shape[0], 1, shape[2], shape[3]}, rng, 0.0, 1.0);
      for (auto& v : m.data()) v = v < 0.5 ? std::min(v, 0.45) : std::max(v, 0.55);
      check("area_maps", [&] {
        auto a = area_maps(m);
        return add(add(mul_scalar(a.fg, 1.3), mul_scalar(a.bg, -0.7)), mul_scalar(a.unc, 2.1));
      }, {m});
    }
  }
  std::vector<GradResult> out;
  for (const auto& [name, err] : worst) out.push_back({name, err});
  return out;
}

/// Gradient checks of the attention blocks and UACA stages (all parameters
/// and the input), 64-bit.
inline std::vector<GradResult> block_grad_checks(std::size_t seeds, std::uint64_t base_seed) {
  std::map<std::string, double> worst;
  auto record = [&](const std::string& name, double err) { worst[name] = std::max(worst[name], err); };
  using D = Tensor<double>;
  auto params_of = [](const auto& block) {
    NamedParams<double> named;
    block.collect("b", named);
    std::vector<D> out;
    for (auto& [n, p] : named) out.push_back(p);
    return out;
  };
  for (std::size_t s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(base_seed + s);
    Initializer init(rng());
    std::uniform_int_distribution<int> side(2, 5);
    {
      auto x = D::randn({1, 8, side(rng), side(rng)}, rng);
      AxialAttention<double> h(init, 8, Axis::horizontal, 4), v(init, 8, Axis::vertical, 4);
      auto wrt = params_of(h);
      auto wv = params_of(v);
      wrt.insert(wrt.end(), wv.begin(), wv.end());
      wrt.push_back(x);
      record("axial+paa", grad_check_many<double>(detail::weighted([&] { return paa(x, h, v); }, rng), wrt).max_rel_error);
    }
    {
      auto x = D::randn({1, 6, 4, 4}, rng);
      PAAEncoder<double> enc(init, 6, 8, true, 4);
      auto wrt = params_of(enc);
      wrt.push_back(x);
      record("paa_encoder", grad_check_many<double>(detail::weighted([&] { return enc(x); }, rng), wrt).max_rel_error);
    }
    {
      auto e2 = D::randn({1, 8, 4, 4}, rng), e3 = D::randn({1, 8, 2, 2}, rng), e4 = D::randn({1, 8, 1, 1}, rng);
      PAADecoder<double> dec(init, 8, true, 4);
      auto wrt = params_of(dec);
      wrt.insert(wrt.end(), {e2, e3, e4});
      record("paa_decoder", grad_check_many<double>(detail::weighted_all([&] {
                                                      auto o = dec(e2, e3, e4);
                                                      return std::vector{o.feature, o.logit};
                                                    }, rng), wrt).max_rel_error);
    }
    {
      auto inst = random_uaca_instance<double>(rng, s % 2 == 0);
      auto guidance = D::randn({inst.x.dim(0), 1, side(rng), side(rng)}, rng);
      auto wrt = params_of(inst.params);
      wrt.push_back(inst.x);
      wrt.push_back(guidance);
      record("uaca_forward", grad_check_many<double>(detail::weighted_all([&] {
                                                       auto o = uaca_forward(inst.x, guidance, inst.params);
                                                       return std::vector{o.feature, o.logit};
                                                     }, rng), wrt).max_rel_error);
    }
  }
  std::vector<GradResult> out;
  for (const auto& [name, err] : worst) out.push_back({name, err});
  return out;
}

/// End-to-end gradient of the summed four-map loss of a tiny model with
/// respect to `samples` randomly chosen scalar parameters.
/// h is smaller than the op-level default: with thousands of ReLU inputs
/// upstream of a backbone weight, a 1e-5 step regularly pushes some of them
/// across zero and the difference quotient mixes two slopes.
inline GradCheckReport model_grad_check(std::size_t samples, std::uint64_t seed, std::int64_t width = 8,
                                        std::int64_t side = 32, double h = 1e-6) {
  ModelConfig cfg;
  cfg.width = width;
  cfg.side = side;
  cfg.backbone_widths = {8, 8, 16, 16};
  UACANet<double> model(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  const auto data = synth_blobs(1, side, seed);
  const auto batch = make_batch<double>(data, side);
  const auto params = model.named_parameters();
  std::vector<Tensor<double>> wrt;
  for (const auto& [n, p] : params) wrt.push_back(p);
  std::int64_t total = 0;
  for (const auto& p : wrt) total += p.numel();
  std::vector<GradCoordinate> coords;
  std::uniform_int_distribution<std::int64_t> pick(0, total - 1);
  for (std::size_t k = 0; k < samples; ++k) {
    std::int64_t flat = pick(rng);
    std::size_t which = 0;
    while (flat >= wrt[which].numel()) flat -= wrt[which++].numel();
    coords.push_back({which, flat});
  }
  return grad_check_many<double>([&] { return total_loss(model.forward(batch.images).logits, batch.masks).total; },
                                 wrt, h, coords);
}

/// Saves, reloads into a fresh model and compares forward outputs bit for bit.
inline bool checkpoint_roundtrip(const std::filesystem::path& dir, std::string* detail_msg = nullptr) {
  ModelConfig cfg;
  cfg.width = 8;
  cfg.side = 32;
  cfg.backbone_widths = {8, 8, 16, 16};
  UACANet<float> model(cfg, 7);
  AdamState<float> adam;
  const auto data = synth_blobs(2, cfg.side, 3);
  const auto batch = make_batch<float>(data, cfg.side);
  train_step(model, batch, adam, PolySchedule{1e-3, 10}, 0);

  std::filesystem::create_directories(dir);
  const auto path = dir / "roundtrip.uack";
  save_checkpoint(path, model, adam, 1);
  UACANet<float> restored(cfg, 99);
  AdamState<float> restored_adam;
  const auto step = load_checkpoint(path, restored, &restored_adam);
  NoGradGuard no_grad;
  const auto a = model.forward(batch.images).logits;
  const auto b = restored.forward(batch.images).logits;
  bool same = step == 1 && restored_adam.step == 1;
  for (std::size_t k = 0; k < 4; ++k) same = same && a[k].values() == b[k].values();
  for (const auto& [name, m] : adam.first_moment) same = same && restored_adam.first_moment.at(name) == m;
  for (const auto& [name, v] : adam.second_moment) same = same && restored_adam.second_moment.at(name) == v;
  if (detail_msg) *detail_msg = same ? "bit-identical" : "outputs or optimizer state differ after reload";
  std::filesystem::remove(path);
  return same;
}

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

/// The self-verification suite run by `uacanet selftest`.
inline std::vector<CheckOutcome> run_selftest(const std::filesystem::path& scratch) {
  std::vector<CheckOutcome> out;
  auto run = [&](const std::string& name, const std::function<std::pair<bool, std::string>()>& fn) {
    const auto t0 = Clock::now();
    CheckOutcome c;
    c.name = name;
    try {
      auto [ok, msg] = fn();
      c.passed = ok;
      c.detail = msg;
    } catch (const std::exception& e) {
      c.passed = false;
      c.detail = std::string("exception: ") + e.what();
    }
    c.seconds = seconds_since(t0);
    out.push_back(c);
  };
  auto fmt = [](double v) {
    std::ostringstream oss;
    oss << std::scientific << std::setprecision(2) << v;
    return oss.str();
  };
  run("area-map identities (10000 samples)", [&] {
    const auto e = area_identity_errors(10000, 1);
    return std::pair{e.worst() <= 1e-6, "max error " + fmt(e.worst())};
  });
  run("similarity partition of unity", [&] {
    const double e = similarity_partition_error(100, 2);
    return std::pair{e <= 1e-6, "max |sum-1| " + fmt(e)};
  });
  run("softmax_over partition", [&] {
    std::mt19937_64 rng(3);
    double worst = 0;
    for (int k = 1; k <= 5; ++k) {
      std::vector<Tensor<double>> items;
      for (int i = 0; i < k; ++i) items.push_back(Tensor<double>::randn({64}, rng, 10.0));
      const auto s = softmax_over(items);
      for (std::int64_t i = 0; i < 64; ++i) {
        double t = 0;
        for (const auto& si : s) t += si[i];
        worst = std::max(worst, std::abs(t - 1.0));
      }
    }
    return std::pair{worst <= 1e-6, "max |sum-1| " + fmt(worst)};
  });
  run("loop-oracle equivalence", [&] {
    const auto e = oracle_errors(10, 4);
    return std::pair{e.worst() <= 1e-5, "max rel diff " + fmt(e.worst())};
  });
  run("op gradient checks", [&] {
    double w = 0;
    std::string name;
    for (const auto& r : op_grad_checks(3, 5))
      if (r.error >= w) w = r.error, name = r.name;
    return std::pair{w < 1e-4, "worst " + fmt(w) + " (" + name + ")"};
  });
  run("block gradient checks", [&] {
    double w = 0;
    std::string name;
    for (const auto& r : block_grad_checks(2, 6))
      if (r.error >= w) w = r.error, name = r.name;
    return std::pair{w < 1e-4, "worst " + fmt(w) + " (" + name + ")"};
  });
  run("end-to-end gradient (8 parameters)", [&] {
    const auto r = model_grad_check(8, 7);
    return std::pair{r.max_rel_error < 1e-3, "max rel error " + fmt(r.max_rel_error)};
  });
  run("checkpoint round-trip", [&] {
    std::string msg;
    const bool ok = checkpoint_roundtrip(scratch, &msg);
    return std::pair{ok, msg};
  });
  return out;
}

}  // namespace uacanet::verify
