// Acceptance run: one [PASS]/[FAIL] line per criterion. Pass criterion
// numbers as arguments to run a subset. Exit status is 0 only if every
// selected criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "rankscope/cli.hpp"
#include "rankscope/losses.hpp"
#include "rankscope/pchip.hpp"
#include "rankscope/svd.hpp"
#include "test_util.hpp"

using namespace rankscope;
using rankscope::testing::check_gradients;
using rankscope::testing::random_tensor;
using rankscope::testing::slurp;
using rankscope::testing::temp_dir;
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

const std::string kSource = RANKSCOPE_SOURCE_DIR;

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Accumulates failed checks; the first few messages end up in the report.
struct Checker {
  Outcome o;
  int failures = 0;
  void require(bool ok, const std::string& what) {
    if (ok) return;
    o.pass = false;
    if (++failures <= 3) o.detail += (o.detail.empty() ? "" : "; ") + what;
  }
  void note(const std::string& s) {
    if (o.pass) o.detail += (o.detail.empty() ? "" : "; ") + s;
  }
};

std::string num(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int run_cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  if (out) *out = o.str();
  if (code != 0) std::cerr << "  [cli " << args.front() << " exited " << code << "] " << e.str();
  return code;
}

std::size_t pick_dim(std::mt19937_64& gen, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(gen);
}

// ---------------------------------------------------------------------------
// 1. Gradient integrity

using Objective = std::function<Tensor(std::vector<Tensor>&)>;
using OpCase = std::function<std::pair<std::vector<Tensor>, Objective>(std::mt19937_64&)>;

std::vector<std::pair<std::string, OpCase>> op_cases() {
  std::vector<std::pair<std::string, OpCase>> c;
  // Each case contracts the op output with a fixed random weight so every
  // output coordinate carries its own cotangent.
  c.emplace_back("matmul", [](std::mt19937_64& g) {
    const auto m = pick_dim(g, 1, 5), k = pick_dim(g, 1, 5), n = pick_dim(g, 1, 5);
    auto w = random_tensor(g, {m, n}, false);
    return std::pair{std::vector{random_tensor(g, {m, k}), random_tensor(g, {k, n})},
                     Objective([w](auto& x) { return sum(mul(matmul(x[0], x[1]), w)); })};
  });
  c.emplace_back("matmul_nt", [](std::mt19937_64& g) {
    const auto m = pick_dim(g, 1, 5), k = pick_dim(g, 1, 5), n = pick_dim(g, 1, 5);
    auto w = random_tensor(g, {m, n}, false);
    return std::pair{std::vector{random_tensor(g, {m, k}), random_tensor(g, {n, k})},
                     Objective([w](auto& x) { return sum(mul(matmul_nt(x[0], x[1]), w)); })};
  });
  c.emplace_back("transpose", [](std::mt19937_64& g) {
    const auto m = pick_dim(g, 1, 5), n = pick_dim(g, 1, 5);
    auto w = random_tensor(g, {n, m}, false);
    return std::pair{std::vector{random_tensor(g, {m, n})},
                     Objective([w](auto& x) { return sum(mul(transpose(x[0]), w)); })};
  });
  c.emplace_back("bmm", [](std::mt19937_64& g) {
    const auto b = pick_dim(g, 1, 3), m = pick_dim(g, 1, 4), k = pick_dim(g, 1, 4), n = pick_dim(g, 1, 4);
    const bool tb = g() % 2;
    auto w = random_tensor(g, {b, m, n}, false);
    return std::pair{std::vector{random_tensor(g, {b, m, k}), tb ? random_tensor(g, {b, n, k}) : random_tensor(g, {b, k, n})},
                     Objective([w, tb](auto& x) { return sum(mul(bmm(x[0], x[1], tb), w)); })};
  });
  c.emplace_back("add/sub/mul/scale/shift", [](std::mt19937_64& g) {
    const auto m = pick_dim(g, 1, 4), n = pick_dim(g, 1, 4);
    auto w = random_tensor(g, {m, n}, false);
    return std::pair{std::vector{random_tensor(g, {m, n}), random_tensor(g, {m, n})}, Objective([w](auto& x) {
                       return sum(mul(shift(mul(add(x[0], x[1]), sub(x[0], scale(x[1], 0.7))), 0.3), w));
                     })};
  });
  c.emplace_back("add_bias", [](std::mt19937_64& g) {
    const auto m = pick_dim(g, 1, 5), n = pick_dim(g, 1, 5);
    auto w = random_tensor(g, {m, n}, false);
    return std::pair{std::vector{random_tensor(g, {m, n}), random_tensor(g, {n})},
                     Objective([w](auto& x) { return sum(mul(add_bias(x[0], x[1]), w)); })};
  });
  c.emplace_back("gelu", [](std::mt19937_64& g) {
    const auto m = pick_dim(g, 1, 6);
    auto w = random_tensor(g, {m, 3}, false);
    return std::pair{std::vector{random_tensor(g, {m, 3}, true, 2.0)},
                     Objective([w](auto& x) { return sum(mul(gelu(x[0]), w)); })};
  });
  c.emplace_back("sum/mean/sum_axis/mean_axis", [](std::mt19937_64& g) {
    const auto a = pick_dim(g, 1, 3), b = pick_dim(g, 1, 4), d = pick_dim(g, 1, 3);
    const std::size_t axis = g() % 3;
    Shape reduced{a, b, d};
    reduced.erase(reduced.begin() + static_cast<std::ptrdiff_t>(axis));
    auto w1 = random_tensor(g, reduced, false), w2 = random_tensor(g, reduced, false);
    return std::pair{std::vector{random_tensor(g, {a, b, d})}, Objective([=](auto& x) {
                       return add(add(sum(mul(sum_axis(x[0], axis), w1)), sum(mul(mean_axis(x[0], axis), w2))),
                                  add(scale(mean(x[0]), 3.0), sum(mean(x[0], {0, 2}))));
                     })};
  });
  c.emplace_back("reshape/split_heads/merge_heads", [](std::mt19937_64& g) {
    const auto b = pick_dim(g, 1, 3), s = pick_dim(g, 1, 3), h = pick_dim(g, 1, 3), dh = pick_dim(g, 1, 3);
    auto w = random_tensor(g, {b * h, s, dh}, false);
    auto w2 = random_tensor(g, {b * s * h * dh}, false);
    return std::pair{std::vector{random_tensor(g, {b * s, h * dh})}, Objective([=](auto& x) {
                       Tensor heads = split_heads(x[0], b, s, h);
                       Tensor back = merge_heads(mul(heads, heads), b, h);
                       return add(sum(mul(heads, w)), sum(mul(reshape(back, {b * s * h * dh}), w2)));
                     })};
  });
  c.emplace_back("layernorm", [](std::mt19937_64& g) {
    const auto m = pick_dim(g, 1, 4), d = pick_dim(g, 2, 6);
    auto w = random_tensor(g, {m, d}, false);
    return std::pair{std::vector{random_tensor(g, {m, d}), random_tensor(g, {d}), random_tensor(g, {d})},
                     Objective([w](auto& x) { return sum(mul(layernorm(x[0], x[1], x[2], 1e-5), w)); })};
  });
  c.emplace_back("softmax/log_softmax", [](std::mt19937_64& g) {
    const auto m = pick_dim(g, 1, 4), n = pick_dim(g, 2, 5);
    auto w1 = random_tensor(g, {m, n}, false), w2 = random_tensor(g, {m, n}, false);
    return std::pair{std::vector{random_tensor(g, {m, n}, true, 2.0)}, Objective([=](auto& x) {
                       return add(sum(mul(softmax(x[0]), w1)), sum(mul(log_softmax(x[0]), w2)));
                     })};
  });
  c.emplace_back("pick", [](std::mt19937_64& g) {
    const auto m = pick_dim(g, 1, 5), n = pick_dim(g, 2, 5);
    std::vector<std::size_t> idx(m);
    for (auto& i : idx) i = g() % n;
    auto w = random_tensor(g, {m}, false);
    return std::pair{std::vector{random_tensor(g, {m, n})},
                     Objective([=](auto& x) { return sum(mul(pick(x[0], idx), w)); })};
  });
  c.emplace_back("cosine_rows", [](std::mt19937_64& g) {
    const auto m = pick_dim(g, 1, 5), d = pick_dim(g, 2, 6);
    auto w = random_tensor(g, {m}, false);
    return std::pair{std::vector{random_tensor(g, {m, d}), random_tensor(g, {m, d})},
                     Objective([w](auto& x) { return sum(mul(cosine_rows(x[0], x[1]), w)); })};
  });
  return c;
}

Outcome gradient_integrity() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  constexpr int kTrials = 20;
  constexpr double kTol = 1e-4;
  double worst = 0.0;
  std::size_t ops = 0;
  for (const auto& [name, make] : op_cases()) {
    ++ops;
    for (int trial = 0; trial < kTrials; ++trial) {
      std::mt19937_64 gen(1000 + trial);
      auto [inputs, f] = make(gen);
      const auto r = check_gradients(inputs, f, 1e-5);
      worst = std::max(worst, r.rel_error);
      c.require(r.rel_error < kTol && r.checked > 0, name + " trial " + std::to_string(trial) + " rel " + num(r.rel_error));
    }
  }

  EncoderConfig arch;
  arch.depth = 2;
  arch.d_model = 6;
  arch.n_heads = 2;
  arch.d_ff = 8;
  arch.n_classes = 3;
  arch.seq_len = 3;
  double worst_loss = 0.0;
  for (int trial = 0; trial < kTrials; ++trial) {
    std::mt19937_64 gen(500 + trial);
    const auto teacher = build_teacher(arch, 100 + trial);
    auto student = factorize_student(teacher, 1 + trial % 6, StudentInit::Random, 200 + trial);
    const auto x = random_tensor(gen, {3, 3, 6}, false);
    ForwardOutput t;
    {
      NoGradGuard ng;
      t = teacher.forward(x, true);
    }
    std::vector<Tensor> params;
    for (auto& p : student.parameters()) params.push_back(p.tensor);
    const auto conv = trial % 2 ? CosineConvention::PerToken : CosineConvention::PerSample;
    const auto r = check_gradients(params, [&](auto&) { return geometric_loss(t, student.forward(x, true), conv); },
                                   1e-5, 8);
    worst_loss = std::max(worst_loss, r.rel_error);
    c.require(r.rel_error < kTol, "geometric loss trial " + std::to_string(trial) + " rel " + num(r.rel_error));
  }
  const double secs = seconds_since(t0);
  c.require(secs < 60.0, "took " + num(secs) + " s");
  c.note(std::to_string(ops) + " op groups x " + std::to_string(kTrials) + " trials, worst rel " + num(worst) +
         "; 2-block geometric loss worst rel " + num(worst_loss));
  return c.o;
}

// ---------------------------------------------------------------------------
// 2. Exact-factorization recovery

Outcome exact_factorization() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  const RunConfig cfg;
  const Model teacher = build_teacher(cfg.model, 7);
  const Model student = factorize_student(teacher, cfg.model.max_rank(), StudentInit::Svd);
  std::mt19937_64 gen(7);
  double worst = 0.0, scale_seen = 0.0;
  for (int b = 0; b < 100; ++b) {
    NoGradGuard ng;
    const auto x = random_tensor(gen, {4, cfg.model.seq_len, cfg.model.d_model}, false);
    const Tensor zt = teacher.forward(x, false).logits, zs = student.forward(x, false).logits;
    for (std::size_t i = 0; i < zt.size(); ++i) {
      worst = std::max(worst, std::abs(zt.values()[i] - zs.values()[i]));
      scale_seen = std::max(scale_seen, std::abs(zt.values()[i]));
    }
  }
  c.require(worst < 1e-6, "max logit difference " + num(worst));

  auto dcfg = cfg.dataset_config();
  dcfg.n_train = 64;
  dcfg.n_val = 256;
  const Dataset ds = generate(dcfg);
  double loss = 0.0;
  {
    NoGradGuard ng;
    loss = geometric_loss(forward_all(teacher, ds.val, true), forward_all(student, ds.val, true),
                          CosineConvention::PerSample)
               .item();
  }
  c.require(loss < 1e-8, "initial geometric loss " + num(loss));
  const double secs = seconds_since(t0);
  c.require(secs < 60.0, "took " + num(secs) + " s");
  c.note("rank " + std::to_string(cfg.model.max_rank()) + ", max logit diff " + num(worst) + " over 100 batches (|logit| up to " + num(scale_seen) + "), loss " +
         num(loss));
  return c.o;
}

// ---------------------------------------------------------------------------
// 3. Eckart-Young

Outcome eckart_young() {
  Checker c;
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Matrix w(8, 8);
    for (auto& v : w.data) v = nd(gen);
    const auto sigma = svd_small(w).sigma;
    const Linear layer(FullLinear{w.to_tensor(), Tensor::zeros({8})});
    for (std::size_t r : {1, 2, 4}) {
      double tail = 0.0;
      for (std::size_t k = r; k < sigma.size(); ++k) tail += sigma[k] * sigma[k];
      const double err = std::abs(frobenius_distance(w, Linear(factorize_svd(layer, r)).effective_weight()) - std::sqrt(tail));
      worst = std::max(worst, err);
      c.require(err < 1e-8, "trial " + std::to_string(trial) + " r=" + std::to_string(r) + " off by " + num(err));
    }
  }
  c.note("150 cases, worst |residual - tail| " + num(worst));
  return c.o;
}

// ---------------------------------------------------------------------------
// 4. PCHIP

Outcome pchip_correctness() {
  Checker c;
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> step(0.2, 5.0), unit(0.0, 1.0), any(-1.0, 1.0);
  auto knots = [&](bool monotone) {
    std::vector<Knot> k;
    double x = any(gen), y = any(gen);
    for (std::size_t i = 0, n = 3 + gen() % 8; i < n; ++i) {
      k.push_back({x, y});
      x += step(gen);
      y = monotone ? y + unit(gen) * unit(gen) : any(gen);
    }
    return k;
  };
  double knot_err = 0.0, line_err = 0.0, drop = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto k = knots(trial % 2 == 0);
    const auto p = fit_pchip(k);
    for (const auto& kn : k) knot_err = std::max(knot_err, std::abs(p(kn.x) - kn.y));

    const auto m = knots(true);
    const auto pm = fit_pchip(m);
    double prev = pm(m.front().x);
    for (int i = 1; i <= 5000; ++i) {
      const double y = pm(m.front().x + (m.back().x - m.front().x) * i / 5000.0);
      drop = std::max(drop, prev - y);
      prev = y;
    }

    auto l = knots(true);
    const double a = any(gen) * 3.0, b = any(gen) * 3.0;
    for (auto& kn : l) kn.y = a * kn.x + b;
    const auto pl = fit_pchip(l);
    for (int i = 0; i <= 1000; ++i) {
      const double x = l.front().x + (l.back().x - l.front().x) * i / 1000.0;
      line_err = std::max(line_err, std::abs(pl(x) - (a * x + b)));
    }
  }
  c.require(knot_err <= 1e-12, "knot error " + num(knot_err));
  c.require(drop <= 1e-9, "monotone curve dropped by " + num(drop));
  c.require(line_err <= 1e-12, "line error " + num(line_err));

  const std::vector<double> grid{2, 4, 8, 16, 24, 32, 48, 64};
  auto g = [](double x) { return 1.0 - std::exp(-x / 8.0); };
  std::vector<Knot> sat;
  for (double x : grid) sat.push_back({x, g(x)});
  const auto ps = fit_pchip(sat);
  double mid = 0.0;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const double x = 0.5 * (grid[i] + grid[i + 1]);
    mid = std::max(mid, std::abs(ps(x) - g(x)));
  }
  c.require(mid < 2e-2, "midpoint error " + num(mid));
  c.note("knot err " + num(knot_err) + ", line err " + num(line_err) + ", max drop " + num(drop) +
         ", worst midpoint err " + num(mid));
  return c.o;
}

// ---------------------------------------------------------------------------
// 5. Region and knee oracles

double brute_force_knee(const MonotoneInterpolant& p, std::size_t n) {
  const double x0 = p.x_min(), x1 = p.x_max();
  const double ymin = *std::min_element(p.ys().begin(), p.ys().end());
  const double ymax = *std::max_element(p.ys().begin(), p.ys().end());
  const double ya = (p(x0) - ymin) / (ymax - ymin), yb = (p(x1) - ymin) / (ymax - ymin);
  double best = -1.0, arg = x0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = x0 + (x1 - x0) * static_cast<double>(i) / static_cast<double>(n - 1);
    const double u = (x - x0) / (x1 - x0), v = (p(x) - ymin) / (ymax - ymin);
    const double d = std::abs((yb - ya) * u - v + ya) / std::hypot(1.0, yb - ya);
    if (d > best) {
      best = d;
      arg = x;
    }
  }
  return arg;
}

Outcome region_and_knee() {
  Checker c;
  const double tau = 8.0;
  const double want_lo = -tau * std::log(0.15), want_hi = -tau * std::log(0.05);
  std::vector<Knot> k;
  for (double x : {1.0, 2.0, 4.0, 8.0, 12.0, 16.0, 20.0, 24.0, 28.0, 32.0, 48.0, 64.0}) k.push_back({x, 1.0 - std::exp(-x / tau)});
  const auto a = analyze(k, 1.0);
  c.require(a.region.status == RegionStatus::Found, "region not found");
  c.require(std::abs(a.region.lo - want_lo) < 0.1, "lower crossing " + num(a.region.lo, 6) + " vs " + num(want_lo, 6));
  c.require(std::abs(a.region.hi - want_hi) < 0.1, "upper crossing " + num(a.region.hi, 6) + " vs " + num(want_hi, 6));

  const auto sat = [&](const std::vector<double>& xs) {
    std::vector<Knot> out;
    for (double x : xs) out.push_back({x, 1.0 - std::exp(-x / tau)});
    return out;
  };
  const auto base = sat({2, 4, 8, 16, 24, 32, 48, 64});
  const auto p = fit_pchip(base);
  const double step = (p.x_max() - p.x_min()) / (kDenseGridSize - 1);
  const auto knee = effective_knee(p);
  const double brute = brute_force_knee(p, 1000000);
  c.require(knee.found() && std::abs(knee.rank - brute) <= 2 * step,
            "knee " + num(knee.rank, 6) + " vs brute force " + num(brute, 6));

  auto ky = base;
  for (auto& kn : ky) kn.y = 0.7335 * kn.y + 0.1;
  const double knee_y = effective_knee(fit_pchip(ky)).rank;
  auto kx = base;
  for (auto& kn : kx) kn.x = 4.0 * kn.x + 10.0;
  const double knee_x = (effective_knee(fit_pchip(kx)).rank - 10.0) / 4.0;
  c.require(std::abs(knee_y - knee.rank) <= step, "y rescaling moved the knee to " + num(knee_y, 6));
  c.require(std::abs(knee_x - knee.rank) <= step, "x rescaling moved the knee to " + num(knee_x, 6));
  c.note("region [" + num(a.region.lo, 5) + ", " + num(a.region.hi, 5) + "] vs [" + num(want_lo, 5) + ", " +
         num(want_hi, 5) + "], knee " + num(knee.rank, 5) + " vs brute " + num(brute, 5));
  return c.o;
}

// ---------------------------------------------------------------------------
// 6. Reference-point fixture

Outcome reference_point_fixture() {
  Checker c;
  const auto dir = temp_dir("accept_fixture");
  std::ofstream(dir / "curve.csv") << "rank,accuracy\n2,0.10\n8,0.45\n16,0.62\n32,0.6946\n64,0.725\n";
  std::string out;
  c.require(run_cli({"analyze", (dir / "curve.csv").string(), "--teacher-acc", "0.7335"}, &out) == 0, "analyze failed");
  const auto j = ojson::parse(slurp(dir / "analysis.json"));
  double g32 = -1.0;
  for (const auto& pt : j["dense_curve"])
    if (pt[0].get<double>() == 32.0) g32 = pt[1].get<double>();
  c.require(std::abs(g32 - 0.9470) <= 5e-4, "g(32) = " + num(g32, 6));
  c.require(g32 >= 0.85 && g32 < 0.95, "g(32) outside [0.85, 0.95)");
  c.note("g(32) = " + num(g32, 6));
  return c.o;
}

// ---------------------------------------------------------------------------
// 7. Entropy erank

Outcome erank_identities() {
  Checker c;
  std::mt19937_64 gen(7);
  std::normal_distribution<double> nd;
  auto random = [&](std::size_t m, std::size_t n) {
    Matrix a(m, n);
    for (auto& v : a.data) v = nd(gen);
    return a;
  };
  auto diag = [](const std::vector<double>& d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  };
  for (std::size_t k = 1; k <= 6; ++k) {
    // Q diag(2.5,..,2.5,0,..) Q' from a Jacobi orthonormal basis.
    const auto q = svd_small(random(6, 6)).u;
    std::vector<double> d(6, 0.0);
    std::fill_n(d.begin(), k, 2.5);
    const double e = entropy_erank(q * diag(d) * q.transposed());
    c.require(std::abs(e - static_cast<double>(k)) < 1e-9, "k=" + std::to_string(k) + " gave " + num(e, 12));
  }
  const double one = entropy_erank(random(5, 1) * random(1, 7));
  c.require(std::abs(one - 1.0) < 1e-9, "rank one gave " + num(one, 12));
  const double hand = entropy_erank(diag({2, 1, 1}));
  c.require(std::abs(hand - std::pow(2.0, 1.5)) < 1e-9, "[2,1,1] gave " + num(hand, 12));
  for (int t = 0; t < 20; ++t) {
    const auto a = random(5, 4);
    Matrix b = a;
    for (auto& v : b.data) v *= (t % 2 ? -3.7 : 1e-3);
    c.require(std::abs(entropy_erank(a) - entropy_erank(b)) < 1e-9, "scale changed erank");
  }
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 2 + gen() % 8, n = 2 + gen() % 8, k = 1 + gen() % std::min(m, n);
    const auto a = random(m, k) * random(k, n);
    // Exact rank is k by construction (Gaussian factors are full rank a.s.).
    c.require(entropy_erank(a) <= static_cast<double>(k) + 1e-9, "erank above exact rank");
  }
  c.note("identities hold on 6 + 1 + 1 + 20 + 100 cases");
  return c.o;
}

// ---------------------------------------------------------------------------
// 8 and 10 share one default-config teacher.

fs::path desk_dir() { return fs::temp_directory_path() / "rankscope_accept_desk"; }
std::vector<std::string> desk_args(const std::string& cmd) {
  return {cmd, "-c", kSource + "/configs/default.json", "-o", desk_dir().string()};
}

Outcome desk_sweep() {
  Checker c;
  fs::remove_all(desk_dir());
  const auto t0 = std::chrono::steady_clock::now();
  c.require(run_cli(desk_args("train-teacher")) == 0, "train-teacher failed");
  c.require(run_cli(desk_args("sweep")) == 0, "sweep failed");
  const double secs = seconds_since(t0);
  if (!c.o.pass) return c.o;
  c.require(secs < 15 * 60.0, "took " + num(secs) + " s");

  const auto curve = load_curve((desk_dir() / "sweep.jsonl").string());
  const double teacher = *curve.teacher_accuracy;
  std::vector<double> ranks;
  for (const auto& k : curve.knots) ranks.push_back(k.x);
  c.require(ranks == std::vector<double>{1, 2, 4, 8, 16, 32}, "unexpected rank grid");
  double best = 0.0;
  std::string accs;
  for (const auto& k : curve.knots) {
    c.require(k.y >= best - 0.02, "rank " + num(k.x) + " drops " + num(100 * (best - k.y)) + " points");
    best = std::max(best, k.y);
    accs += (accs.empty() ? "" : " ") + num(k.y, 4);
  }
  const double last = curve.knots.back().y / teacher;
  c.require(last >= 0.95, "largest rank reaches " + num(last, 4) + " of teacher");

  const auto j = ojson::parse(slurp(desk_dir() / "analysis.json"));
  c.require(!j["region"].is_null(), "no effective region");
  c.require(!j["knee"].is_null(), "no knee");
  if (c.o.pass) {
    const double lo = j["region"][0], hi = j["region"][1], knee = j["knee"];
    c.require(lo >= 1.0 && hi <= 32.0 && lo <= hi, "region outside the grid span");
    c.require(knee >= 1.0 && knee <= 32.0, "knee outside the grid span");
    c.note("teacher " + num(teacher, 4) + ", accuracies [" + accs + "], region [" + num(lo, 4) + ", " + num(hi, 4) +
           "] (" + j["region_status"].get<std::string>() + "), knee " + num(knee, 4) + ", " + num(secs) + " s");
  }
  return c.o;
}

Outcome ablation_harness() {
  Checker c;
  if (!fs::exists(desk_dir() / "teacher.ckpt")) {
    fs::create_directories(desk_dir());
    c.require(run_cli(desk_args("train-teacher")) == 0, "train-teacher failed");
  }
  std::string table;
  c.require(run_cli(desk_args("ablate"), &table) == 0, "ablate failed");
  if (!c.o.pass) return c.o;
  const auto j = ojson::parse(slurp(desk_dir() / "ablation.json"));
  std::vector<std::string> labels;
  for (const auto& row : j["rows"]) labels.push_back(row["mode"]);
  c.require(labels == std::vector<std::string>{"Geometric Distillation", "Logit MSE + Cosine", "Pure KD (α=0.9, T=4)",
                                                "Pure KD (α=0.5, T=4)", "Pure KD (α=0.9, T=2)"},
            "mode rows differ");
  // Identical budgets: every mode logs the same number of epochs.
  const std::size_t epochs = j["epochs"];
  for (const auto* tag : {"geometric", "logit_mse_cos", "pure_kd_0.9_4", "pure_kd_0.5_4", "pure_kd_0.9_2"}) {
    std::ifstream in(desk_dir() / "metrics" / (std::string("ablation_") + tag + ".jsonl"));
    std::size_t lines = 0;
    for (std::string l; std::getline(in, l);) ++lines;
    c.require(lines == epochs + 1, std::string(tag) + " logged " + std::to_string(lines) + " rows");
  }

  // alpha = 0 against cross-entropy on real student logits.
  const RunConfig cfg = load_config(kSource + "/configs/default.json");
  const Model teacher = load_checkpoint((desk_dir() / "teacher.ckpt").string());
  const Model student = factorize_student(teacher, cfg.ablation_rank, StudentInit::Svd);
  const Dataset ds = generate(cfg.dataset_config());
  double worst = 0.0;
  {
    NoGradGuard ng;
    const auto zt = forward_all(teacher, ds.val, false).logits, zs = forward_all(student, ds.val, false).logits;
    const double ce = cross_entropy(zs, ds.val.labels).item();
    for (double temp : {1.0, 2.0, 4.0}) worst = std::max(worst, std::abs(pure_kd_loss(zt, zs, ds.val.labels, 0.0, temp).item() - ce));
  }
  c.require(worst <= 1e-12, "alpha=0 differs from cross-entropy by " + num(worst));
  const double l0 = j["rows"][0]["initial_loss"], l1 = j["rows"][0]["final_loss"];
  c.require(std::isfinite(l1) && l1 < l0, "geometric loss " + num(l0, 6) + " -> " + num(l1, 6));

  std::string accs;
  for (const auto& row : j["rows"]) accs += (accs.empty() ? "" : ", ") + num(row["final_val_accuracy"].get<double>(), 4);
  c.note("5 rows at rank " + std::to_string(j["rank"].get<std::size_t>()) + ", " + std::to_string(epochs) +
         " epochs each; |KD(alpha=0) - CE| " + num(worst) + "; geometric loss " + num(l0, 4) + " -> " + num(l1, 4) +
         "; accuracies " + accs);
  return c.o;
}

// ---------------------------------------------------------------------------
// 9. Knee against latent dimension

double measured_knee(std::size_t latent_dim, std::uint64_t seed) {
  RunConfig cfg = load_config(kSource + "/configs/default.json");
  cfg.seed = seed;
  cfg.dataset.latent_dim = latent_dim;
  cfg.output_dir = (fs::temp_directory_path() / ("rankscope_accept_k" + std::to_string(latent_dim) + "_s" +
                                                 std::to_string(seed)))
                       .string();
  fs::remove_all(cfg.output_dir);
  cfg.validate();
  const Dataset ds = generate(cfg.dataset_config());
  const TrainResult t = train_teacher(build_teacher(cfg.model, cfg.seed), ds, cfg.teacher_train_config());
  const SweepResult res = run_sweep(cfg.sweep_config(""), t.model, ds);
  if (!res.failures.empty()) throw TrainingError("rank " + std::to_string(res.failures.front().rank) + " failed");
  const auto a = analyze(knots_from_records(res.records), res.teacher_accuracy, cfg.analyze_options());
  // A curve with no bend (already saturated at the smallest rank) has its
  // knee at the smallest rank.
  return a.knee.found() ? a.knee.rank : a.knots.front().x;
}

Outcome knee_tracks_latent_dim() {
  Checker c;
  const std::vector<std::size_t> ks{2, 8, 16};
  int ordered = 0;
  std::string table;
  for (std::uint64_t seed : {0, 1, 2}) {
    std::vector<double> knees;
    for (std::size_t k : ks) knees.push_back(measured_knee(k, seed));
    const bool ok = std::is_sorted(knees.begin(), knees.end());
    ordered += ok;
    table += (table.empty() ? "" : ", ") + std::string("seed ") + std::to_string(seed) + ": " + num(knees[0], 4) +
             " / " + num(knees[1], 4) + " / " + num(knees[2], 4) + (ok ? "" : " (out of order)");
  }
  c.require(ordered >= 2, "only " + std::to_string(ordered) + " of 3 seeds ordered [" + table + "]");
  c.note(std::to_string(ordered) + "/3 seeds ordered; knees for k=2/8/16: " + table);
  return c.o;
}

// ---------------------------------------------------------------------------
// 11. Determinism and resume

std::string without_wall_time(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string out;
  for (std::string line; std::getline(in, line);) {
    auto j = ojson::parse(line);
    j.erase("wall_ms");
    out += j.dump() + "\n";
  }
  return out;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).string();
    // Wall-clock files are not primary outputs; metric logs keep wall_ms by schema.
    if (rel == "manifest_times.json" || rel == "sweep_timing.jsonl") continue;
    const bool metric_log = rel.rfind("metrics/", 0) == 0 || rel == "teacher_metrics.jsonl";
    files[rel] = metric_log ? without_wall_time(e.path()) : slurp(e.path());
  }
  return files;
}

Outcome determinism_and_resume() {
  Checker c;
  const auto dir = fs::temp_directory_path() / "rankscope_accept_det";
  const std::string smoke = kSource + "/configs/smoke.json";
  auto all_commands = [&] {
    fs::remove_all(dir);
    bool ok = run_cli({"reproduce", "-c", smoke, "-o", dir.string()}) == 0;
    ok &= run_cli({"analyze", (dir / "sweep.jsonl").string(), "-o", (dir / "reanalyzed").string()}) == 0;
    ok &= run_cli({"erank", (dir / "teacher.ckpt").string(), "-o", (dir / "erank").string()}) == 0;
    return ok;
  };
  c.require(all_commands(), "first run failed");
  const auto first = snapshot(dir);
  c.require(all_commands(), "second run failed");
  const auto second = snapshot(dir);
  c.require(first.size() == second.size(), "file sets differ");
  for (const auto& [name, bytes] : first) {
    const auto it = second.find(name);
    c.require(it != second.end() && it->second == bytes, name + " differs");
  }

  // Drop rank 2 from sweep.jsonl and resume.
  const auto full = slurp(dir / "sweep.jsonl");
  std::istringstream in(full);
  std::string kept;
  for (std::string line; std::getline(in, line);)
    if (line.find("\"rank\":2,") == std::string::npos) kept += line + "\n";
  std::ofstream(dir / "sweep.jsonl", std::ios::binary) << kept;
  RunConfig cfg = load_config(smoke);
  cfg.output_dir = dir.string();
  const std::string ckpt = (dir / "teacher.ckpt").string();
  const SweepResult res = run_sweep(cfg.sweep_config(ckpt), load_checkpoint(ckpt), generate(cfg.dataset_config()));
  c.require(res.trained_ranks == std::vector<std::size_t>{2}, "resume retrained " + std::to_string(res.trained_ranks.size()) + " ranks");
  c.require(slurp(dir / "sweep.jsonl") == full, "resumed sweep.jsonl differs");
  c.note(std::to_string(first.size()) + " output files byte-identical across reruns of all six commands; resume retrained rank 2 only");
  return c.o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::tuple<int, std::string, std::function<Outcome()>>> criteria{
      {1, "gradient integrity", gradient_integrity},
      {2, "exact-factorization recovery", exact_factorization},
      {3, "Eckart-Young residuals", eckart_young},
      {4, "PCHIP correctness", pchip_correctness},
      {5, "region and knee oracles", region_and_knee},
      {6, "reference-point fixture", reference_point_fixture},
      {7, "entropy erank identities", erank_identities},
      {8, "end-to-end desk sweep", desk_sweep},
      {9, "knee tracks latent dimension", knee_tracks_latent_dim},
      {10, "ablation harness", ablation_harness},
      {11, "determinism and resume", determinism_and_resume},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& [id, name, fn] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << id << ". " << name << " (" << num(seconds_since(t0)) << " s): "
              << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
