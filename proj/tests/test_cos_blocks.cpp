#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "glco/autograd.hpp"
#include "glco/battery.hpp"
#include "glco/cos.hpp"
#include "glco/kernels.hpp"
#include "glco/params.hpp"
#include "oracle.hpp"

using namespace glco;

namespace {

Tensor<double> rand_t(const Shape& s, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  return random_uniform<double>(s, rng, lo, hi);
}

void zero_matching(ParamStore<double>& store, const std::string& needle) {
  for (auto& [name, t] : store.all())
    if (name.find(needle) != std::string::npos) t.fill(0.0);
}

std::size_t count_matching(const ParamStore<double>& store, const std::string& needle) {
  std::size_t n = 0;
  for (const auto& [name, _] : store.all()) n += name.find(needle) != std::string::npos;
  return n;
}

// Source channel for slot c of an axis made of consecutive runs of 4 groups of
// width gw, after slot group m takes the contents of group perm[m].
std::size_t permuted_channel(std::size_t c, std::size_t gw, const std::array<std::size_t, 4>& perm) {
  const std::size_t run = 4 * gw;
  const std::size_t base = c / run * run, m = c % run / gw, j = c % gw;
  return base + perm[m] * gw + j;
}

Tensor<double> permute_groups(const Tensor<double>& x, std::size_t gw, const std::array<std::size_t, 4>& perm) {
  Tensor<double> out(x.shape());
  for (std::size_t b = 0; b < x.dim(0); ++b)
    for (std::size_t c = 0; c < x.dim(1); ++c)
      for (std::size_t y = 0; y < x.dim(2); ++y)
        for (std::size_t i = 0; i < x.dim(3); ++i) out.at(b, c, y, i) = x.at(b, permuted_channel(c, gw, perm), y, i);
  return out;
}

Tensor<double> gelu_ref(const Tensor<double>& x) {
  Tensor<double> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
  }
  return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Mtb, ZeroQueryGivesUniformAttentionAndMeanOfValues) {
  const std::size_t C = 8;
  ParamStore<double> store;
  Rng rng(3);
  Mtb<double> mtb(store, "m", C, {3}, rng);
  zero_matching(store, ".q.");
  auto& fuse = store.get("m.attn.fuse.weight");
  fuse.fill(0.0);
  for (std::size_t c = 0; c < C; ++c) fuse.at(c, c, 0, 0) = 1.0;
  store.get("m.attn.fuse.bias").fill(0.0);
  store.get("m.ln1.gain") = rand_t({C}, 4, 0.5, 1.5);

  const auto x = rand_t({1, C, 6, 7}, 5);
  Graph<double> g;
  Binder<double> p(g, store);
  std::vector<Tensor<double>> maps;
  const Tensor<double> y = mtb.attention(p, g.constant(x), &maps).value();

  ASSERT_EQ(maps.size(), 1u);
  for (double a : maps[0].data()) EXPECT_NEAR(a, 1.0 / C, 1e-15);

  const auto xn = kernels::layer_norm(x, store.get("m.ln1.gain"), store.get("m.ln1.offset")).y;
  const auto v1 = oracle::conv2d_direct(xn, ConvSpec::dense(C, C, 1), store.get("m.v.pw3.weight"),
                                        &store.get("m.v.pw3.bias"));
  const auto v = oracle::conv2d_direct(v1, ConvSpec::depthwise_of(C, 3), store.get("m.v.dw3.weight"),
                                       &store.get("m.v.dw3.bias"));
  for (std::size_t yy = 0; yy < 6; ++yy)
    for (std::size_t xx = 0; xx < 7; ++xx) {
      double mean = 0;
      for (std::size_t c = 0; c < C; ++c) mean += v.at(0, c, yy, xx) / C;
      for (std::size_t c = 0; c < C; ++c) EXPECT_NEAR(y.at(0, c, yy, xx) - x.at(0, c, yy, xx), mean, 1e-12);
    }
}

TEST(Mtb, SingletonScaleHasOneBranch) {
  ParamStore<double> store;
  Rng rng(1);
  Mtb<double> mtb(store, "m", 8, {3}, rng);
  EXPECT_EQ(count_matching(store, "dw5"), 0u);
  EXPECT_EQ(count_matching(store, "dw7"), 0u);
  EXPECT_EQ(store.get("m.attn.fuse.weight").shape(), (Shape{8, 8, 1, 1}));
  EXPECT_EQ(store.get("m.ffn.fuse.weight").shape(), (Shape{8, 8, 1, 1}));

  Graph<double> g;
  Binder<double> p(g, store);
  std::vector<Tensor<double>> maps;
  const auto y = mtb.forward(p, g.constant(rand_t({1, 8, 8, 8}, 2)), &maps);
  EXPECT_EQ(maps.size(), 1u);
  EXPECT_EQ(y.shape(), (Shape{1, 8, 8, 8}));
}

TEST(Mtb, FullScaleSetConcatenatesThreeBranches) {
  ParamStore<double> store;
  Rng rng(1);
  Mtb<double> mtb(store, "m", 8, {3, 5, 7}, rng);
  EXPECT_EQ(store.get("m.attn.fuse.weight").shape(), (Shape{8, 24, 1, 1}));
  EXPECT_EQ(store.get("m.q.dw7.weight").shape(), (Shape{8, 1, 7, 7}));
}

TEST(Mtb, AttentionRowsSumToOne) {
  const std::size_t C = 16;
  ParamStore<double> store;
  Rng rng(9);
  Mtb<double> mtb(store, "m", C, {3, 5, 7}, rng);
  Graph<double> g;
  Binder<double> p(g, store);
  std::vector<Tensor<double>> maps;
  mtb.attention(p, g.constant(rand_t({2, C, 8, 9}, 10, -3, 3)), &maps);
  ASSERT_EQ(maps.size(), 3u);
  for (const auto& a : maps) {
    ASSERT_EQ(a.shape(), (Shape{2, C, C}));
    for (std::size_t r = 0; r < 2 * C; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < C; ++j) {
        EXPECT_GE(a[r * C + j], 0.0);
        s += a[r * C + j];
      }
      EXPECT_LT(std::abs(s - 1.0), 1e-6);
    }
  }
}

TEST(Mtb, FfnWithZeroWeightsIsPassthrough) {
  ParamStore<double> store;
  Rng rng(2);
  Mtb<double> mtb(store, "m", 8, {3, 5, 7}, rng);
  zero_matching(store, ".ffn.");
  const auto x = rand_t({1, 8, 5, 9}, 3);
  Graph<double> g;
  Binder<double> p(g, store);
  EXPECT_EQ(mtb.ffn(p, g.constant(x)).value(), x);
}

TEST(Mtb, FfnGradcheck) {
  BatteryOptions opt;
  ParamStore<double> store;
  Rng rng(4);
  Mtb<double> mtb(store, "m", 16, {3, 5, 7}, rng);
  detail::BlockChecker ck(opt, "ffn");
  ck.run(store, [&](Binder<double>& p, const std::vector<Var<double>>& in) { return mtb.ffn(p, in[0]); },
         {rand_t({1, 16, 8, 8}, 5)});
  EXPECT_LT(ck.result().worst, 1e-4);
  EXPECT_GT(ck.result().checks, 1u);
}

TEST(Mtb, ZeroWeightsGiveIdentity) {
  ParamStore<double> store;
  Rng rng(6);
  Mtb<double> mtb(store, "m", 16, {3, 5, 7}, rng);
  store.fill(0.0);
  const auto x = rand_t({2, 16, 8, 8}, 7);
  Graph<double> g;
  Binder<double> p(g, store);
  EXPECT_EQ(mtb.forward(p, g.constant(x)).value(), x);
}

TEST(Mtb, WrongChannelCountIsDimensionError) {
  ParamStore<double> store;
  Rng rng(6);
  Mtb<double> mtb(store, "m", 16, {3}, rng);
  Graph<double> g;
  Binder<double> p(g, store);
  EXPECT_THROW(mtb.forward(p, g.constant(rand_t({1, 8, 8, 8}, 1))), DimensionError);
  EXPECT_THROW(mtb.ffn(p, g.constant(rand_t({1, 8, 8, 8}, 1))), DimensionError);
}

TEST(Mtb, ScaleSetValidation) {
  ParamStore<double> store;
  Rng rng(6);
  EXPECT_THROW(Mtb<double>(store, "a", 8, {}, rng), ConfigError);
  EXPECT_THROW(Mtb<double>(store, "b", 8, {4}, rng), ConfigError);
  EXPECT_THROW(Pcb<double>(store, "c", 8, {3, 9}, rng), ConfigError);
}

TEST(Pcb, ZeroWeightsGiveIdentity) {
  ParamStore<double> store;
  Rng rng(8);
  Pcb<double> pcb(store, "p", 16, {3, 5, 7}, rng);
  store.fill(0.0);
  const auto x = rand_t({2, 16, 9, 8}, 9);
  Graph<double> g;
  Binder<double> p(g, store);
  EXPECT_EQ(pcb.forward(p, g.constant(x)).value(), x);
}

TEST(Pcb, BranchMatchesDirectConvolutionOracle) {
  const std::size_t C = 4;
  ParamStore<double> store;
  Rng rng(11);
  Pcb<double> pcb(store, "p", C, {3, 7}, rng);
  for (auto& [name, t] : store.all())
    if (name.ends_with(".bias")) t = rand_t(t.shape(), 12, -0.2, 0.2);
  const auto x = rand_t({1, C, 11, 10}, 13);
  Graph<double> g;
  Binder<double> p(g, store);
  struct Case {
    std::size_t stage, index, n;
    std::string spatial;
    ConvSpec spec;
  };
  const std::vector<Case> cases = {{1, 0, 3, "p.stage1.ac3", ConvSpec::dense(C, C, 3, 3)},
                                   {1, 1, 7, "p.stage1.ac7", ConvSpec::dense(C, C, 3, 7)},
                                   {2, 0, 3, "p.stage2.dw3", ConvSpec::depthwise_of(C, 3)},
                                   {2, 1, 7, "p.stage2.dw7", ConvSpec::depthwise_of(C, 7)}};
  for (const auto& k : cases) {
    const std::string b = "p.stage" + std::to_string(k.stage) + ".b" + std::to_string(k.n);
    auto ref = oracle::conv2d_direct(x, k.spec, store.get(k.spatial + ".weight"), &store.get(k.spatial + ".bias"));
    ref = oracle::conv2d_direct(ref, ConvSpec::dense(C, C, 1), store.get(b + ".pw1.weight"),
                                &store.get(b + ".pw1.bias"));
    ref = oracle::conv2d_direct(gelu_ref(ref), ConvSpec::dense(C, C, 1), store.get(b + ".pw2.weight"),
                                &store.get(b + ".pw2.bias"));
    EXPECT_LT(max_abs_diff(pcb.branch(p, g.constant(x), k.stage, k.index).value(), ref), 1e-12) << k.spatial;
  }
}

TEST(Pcb, ReceptiveFieldOfAtrousBranchesMatchesRate) {
  const std::size_t C = 4, S = 17, mid = 8;
  ParamStore<double> store;
  Rng rng(14);
  Pcb<double> pcb(store, "p", C, {3, 7}, rng);
  zero_matching(store, ".bias");
  Tensor<double> x({1, C, S, S});
  x.at(0, 1, mid, mid) = 1.0;
  Graph<double> g;
  Binder<double> p(g, store);
  for (auto [index, rate] : {std::pair<std::size_t, std::size_t>{0, 3}, {1, 7}}) {
    const auto y = pcb.branch(p, g.constant(x), 1, index).value();
    std::size_t reach = 0;
    for (std::size_t yy = 0; yy < S; ++yy)
      for (std::size_t xx = 0; xx < S; ++xx) {
        double mag = 0;
        for (std::size_t c = 0; c < C; ++c) mag += std::abs(y.at(0, c, yy, xx));
        if (mag == 0) continue;
        const std::size_t dy = yy > mid ? yy - mid : mid - yy, dx = xx > mid ? xx - mid : mid - xx;
        EXPECT_TRUE((dy == 0 || dy == rate) && (dx == 0 || dx == rate)) << "rate " << rate;
        reach = std::max({reach, dy, dx});
      }
    EXPECT_EQ(reach, rate);
  }
}

TEST(Pcb, WrongChannelCountIsDimensionError) {
  ParamStore<double> store;
  Rng rng(6);
  Pcb<double> pcb(store, "p", 8, {3}, rng);
  Graph<double> g;
  Binder<double> p(g, store);
  EXPECT_THROW(pcb.forward(p, g.constant(rand_t({1, 4, 8, 8}, 1))), DimensionError);
}

TEST(Ghim, ZeroInputsAndZeroBiasesGiveZero) {
  ParamStore<double> store;
  Rng rng(15);
  Ghim<double> ghim(store, "h", 16, FusionMode::kAdd, rng);
  zero_matching(store, ".bias");
  Tensor<double> z({1, 16, 8, 8});
  Graph<double> g;
  Binder<double> p(g, store);
  const auto f = ghim.forward(p, g.constant(z), g.constant(z)).value();
  EXPECT_EQ(f.max_abs(), 0.0);
}

TEST(Ghim, ZeroInputsWithBiasesAreDeterministic) {
  ParamStore<double> store;
  Rng rng(15);
  Ghim<double> ghim(store, "h", 16, FusionMode::kAdd, rng);
  for (auto& [name, t] : store.all())
    if (name.ends_with(".bias")) t = rand_t(t.shape(), 16);
  Tensor<double> z({1, 16, 8, 8});
  Graph<double> g;
  Binder<double> p(g, store);
  const auto a = ghim.forward(p, g.constant(z), g.constant(z)).value();
  const auto b = ghim.forward(p, g.constant(z), g.constant(z)).value();
  EXPECT_EQ(a, b);
  EXPECT_GT(a.max_abs(), 0.0);
}

TEST(Ghim, AddAndConcatAreDistinctWithEqualShape) {
  ParamStore<double> store;
  Rng rng(17);
  Ghim<double> add_mode(store, "a", 16, FusionMode::kAdd, rng);
  Ghim<double> cat_mode(store, "c", 16, FusionMode::kConcat, rng);
  EXPECT_EQ(store.get("a.group1.weight").shape(), (Shape{4, 4, 3, 3}));
  EXPECT_EQ(store.get("c.group1.weight").shape(), (Shape{4, 8, 3, 3}));
  // Sharing every common parameter isolates the fusion operator itself.
  for (const auto& name : {"mix", "gate", "post3", "post1"})
    for (const auto& part : {".weight", ".bias"})
      store.get(std::string("c.") + name + part) = store.get(std::string("a.") + name + part);

  const auto gt = rand_t({1, 16, 8, 8}, 18), lt = rand_t({1, 16, 8, 8}, 19);
  Graph<double> g;
  Binder<double> p(g, store);
  const auto fa = add_mode.forward(p, g.constant(gt), g.constant(lt)).value();
  const auto fc = cat_mode.forward(p, g.constant(gt), g.constant(lt)).value();
  EXPECT_EQ(fa.shape(), fc.shape());
  EXPECT_GT(max_abs_diff(fa, fc), 1e-3);
}

TEST(Ghim, GroupPermutationSymmetry) {
  const std::size_t C = 16, gw = 4;
  for (FusionMode mode : {FusionMode::kAdd, FusionMode::kConcat}) {
    ParamStore<double> store, permuted;
    Rng rng(20), rng2(20);
    Ghim<double> ghim(store, "h", C, mode, rng);
    Ghim<double> ghim2(permuted, "h", C, mode, rng2);
    const std::array<std::size_t, 4> perm = {2, 0, 3, 1};
    for (std::size_t m = 0; m < 4; ++m)
      for (const auto& part : {".weight", ".bias"})
        permuted.get("h.group" + std::to_string(m + 1) + part) =
            store.get("h.group" + std::to_string(perm[m] + 1) + part);
    const auto& mix = store.get("h.mix.weight");
    auto& mix2 = permuted.get("h.mix.weight");
    for (std::size_t o = 0; o < C; ++o)
      for (std::size_t c = 0; c < 3 * C; ++c)
        for (std::size_t y = 0; y < 3; ++y)
          for (std::size_t x = 0; x < 3; ++x) mix2.at(o, c, y, x) = mix.at(o, permuted_channel(c, gw, perm), y, x);

    const auto gt = rand_t({1, C, 8, 8}, 21), lt = rand_t({1, C, 8, 8}, 22);
    Graph<double> g;
    Binder<double> p(g, store), p2(g, permuted);
    const auto f = ghim.forward(p, g.constant(gt), g.constant(lt)).value();
    const auto f2 = ghim2.forward(p2, g.constant(permute_groups(gt, gw, perm)),
                                  g.constant(permute_groups(lt, gw, perm))).value();
    EXPECT_LT(max_abs_diff(f, f2), 1e-12);
  }
}

TEST(Ghim, Errors) {
  ParamStore<double> store;
  Rng rng(1);
  EXPECT_THROW(Ghim<double>(store, "bad", 6, FusionMode::kAdd, rng), ConfigError);
  Ghim<double> ghim(store, "h", 8, FusionMode::kAdd, rng);
  Graph<double> g;
  Binder<double> p(g, store);
  EXPECT_THROW(ghim.forward(p, g.constant(rand_t({1, 8, 8, 8}, 1)), g.constant(rand_t({1, 8, 8, 9}, 2))),
               DimensionError);
  EXPECT_THROW(ghim.forward(p, g.constant(rand_t({1, 4, 8, 8}, 1)), g.constant(rand_t({1, 4, 8, 8}, 2))),
               DimensionError);
}

TEST(Blocks, ShapePreservationAcrossExtents) {
  const std::size_t C = 8;
  ParamStore<double> store;
  Rng rng(23);
  Mtb<double> mtb(store, "m", C, {3, 5, 7}, rng);
  Pcb<double> pcb(store, "p", C, {3, 5, 7}, rng);
  Ghim<double> ghim(store, "h", C, FusionMode::kAdd, rng);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {12, 10}, {9, 13}}) {
    const Shape s{2, C, h, w};
    Graph<double> g;
    Binder<double> p(g, store);
    auto x = g.constant(rand_t(s, h * 100 + w));
    EXPECT_EQ(mtb.forward(p, x).shape(), s);
    EXPECT_EQ(pcb.forward(p, x).shape(), s);
    EXPECT_EQ(ghim.forward(p, x, x).shape(), s);
  }
}

TEST(Blocks, BatchEntriesAreIndependent) {
  const std::size_t C = 8;
  ParamStore<double> store;
  Rng rng(24);
  Cos<double> cos(store, "c", C, {3, 5}, FusionMode::kAdd, CosFlags{}, rng);
  const auto a = rand_t({1, C, 8, 8}, 25), b = rand_t({1, C, 8, 8}, 26);
  Tensor<double> ab({2, C, 8, 8});
  std::copy(a.data().begin(), a.data().end(), ab.data().begin());
  std::copy(b.data().begin(), b.data().end(), ab.data().begin() + a.size());
  Graph<double> g;
  Binder<double> p(g, store);
  const auto fab = cos.forward(p, g.constant(ab)).fused.value();
  const auto fb = cos.forward(p, g.constant(b)).fused.value();
  for (std::size_t i = 0; i < fb.size(); ++i) EXPECT_NEAR(fab[fb.size() + i], fb[i], 1e-12);
}

TEST(Cos, AllStagesPreserveShape) {
  ParamStore<double> store;
  Rng rng(27);
  Cos<double> cos(store, "c", 16, {3, 5, 7}, FusionMode::kAdd, CosFlags{}, rng);
  Graph<double> g;
  Binder<double> p(g, store);
  const auto out = cos.forward(p, g.constant(rand_t({1, 16, 8, 8}, 28)));
  ASSERT_TRUE(out.global && out.local);
  EXPECT_EQ(out.fused.shape(), (Shape{1, 16, 8, 8}));
  EXPECT_GT(count_matching(store, ".ghim."), 0u);
}

TEST(Cos, BypassedGhimIsConcatFusion) {
  const std::size_t C = 8;
  ParamStore<double> store;
  Rng rng(29);
  Cos<double> cos(store, "c", C, {3}, FusionMode::kAdd, CosFlags{true, true, false}, rng);
  EXPECT_EQ(count_matching(store, ".ghim."), 0u);
  Graph<double> g;
  Binder<double> p(g, store);
  const auto out = cos.forward(p, g.constant(rand_t({1, C, 8, 8}, 30)));
  ASSERT_TRUE(out.global && out.local);
  Tensor<double> cat({1, 2 * C, 8, 8});
  const auto& gv = out.global->value();
  const auto& lv = out.local->value();
  std::copy(gv.data().begin(), gv.data().end(), cat.data().begin());
  std::copy(lv.data().begin(), lv.data().end(), cat.data().begin() + gv.size());
  const auto ref = oracle::conv2d_direct(cat, ConvSpec::dense(2 * C, C, 3), store.get("c.catfuse.weight"),
                                         &store.get("c.catfuse.bias"));
  EXPECT_LT(max_abs_diff(out.fused.value(), ref), 1e-12);
}

TEST(Cos, BypassedGpmLeavesOnlyLocalPath) {
  const std::size_t C = 8;
  ParamStore<double> store;
  Rng rng(31);
  Cos<double> cos(store, "c", C, {3, 5}, FusionMode::kAdd, CosFlags{false, true, true}, rng);
  EXPECT_EQ(count_matching(store, ".mtb."), 0u);
  EXPECT_EQ(count_matching(store, ".ghim."), 0u);
  Graph<double> g;
  Binder<double> p(g, store);
  const auto out = cos.forward(p, g.constant(rand_t({1, C, 8, 8}, 32)));
  EXPECT_FALSE(out.global);
  ASSERT_TRUE(out.local);
  EXPECT_EQ(out.fused.value(), out.local->value());
}

TEST(Cos, BypassedLrmLeavesOnlyGlobalPath) {
  ParamStore<double> store;
  Rng rng(33);
  Cos<double> cos(store, "c", 8, {3}, FusionMode::kAdd, CosFlags{true, false, true}, rng);
  EXPECT_EQ(count_matching(store, ".pcb."), 0u);
  Graph<double> g;
  Binder<double> p(g, store);
  const auto out = cos.forward(p, g.constant(rand_t({1, 8, 8, 8}, 34)));
  ASSERT_TRUE(out.global);
  EXPECT_FALSE(out.local);
  EXPECT_EQ(out.fused.value(), out.global->value());
}

TEST(Cos, BothBranchesOffPassesInputThrough) {
  ParamStore<double> store;
  Rng rng(35);
  Cos<double> cos(store, "c", 8, {3}, FusionMode::kAdd, CosFlags{false, false, true}, rng);
  EXPECT_EQ(store.all().size(), 0u);
  const auto x = rand_t({1, 8, 8, 8}, 36);
  Graph<double> g;
  Binder<double> p(g, store);
  EXPECT_EQ(cos.forward(p, g.constant(x)).fused.value(), x);
}

TEST(Cos, RepeatedForwardIsBitIdentical) {
  ParamStore<double> store;
  Rng rng(37);
  Cos<double> cos(store, "c", 16, {3, 5, 7}, FusionMode::kConcat, CosFlags{}, rng);
  const auto x = rand_t({2, 16, 8, 8}, 38);
  Graph<double> g1, g2;
  Binder<double> p1(g1, store), p2(g2, store);
  EXPECT_EQ(cos.forward(p1, g1.constant(x)).fused.value(), cos.forward(p2, g2.constant(x)).fused.value());
}

TEST(CosGradcheck, BlocksAtReducedWidth) {
  BatteryOptions opt;
  opt.channels = 16;
  for (const char* name : {"mtb", "pcb", "ghim", "cos"}) {
    const auto r = run_component(name, opt);
    EXPECT_LT(r.worst, 1e-4) << name;
    EXPECT_GT(r.checks, 0u) << name;
  }
}
