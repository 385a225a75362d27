#include <gtest/gtest.h>

#include "support.hpp"

using namespace cstnet;

class LayerGradCheck : public ::testing::TestWithParam<std::string> {};

TEST_P(LayerGradCheck, WithinTolerance) {
  const auto r = grad_check_layer(GetParam());
  EXPECT_EQ(r.checked, 50u);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

INSTANTIATE_TEST_SUITE_P(AllLayers, LayerGradCheck, ::testing::ValuesIn(gradcheck_layer_names()),
                         [](const auto& info) { return info.param; });

TEST(GradCheck, PredictorNetworkOnFourSamples) {
  const auto r = grad_check_network(Variant::cst_predictor, {}, 4);
  EXPECT_EQ(r.checked, 50u);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(GradCheck, FrontOnlyProbesReachColorMatrix) {
  for (const Variant v : {Variant::cst_global, Variant::cst_predictor}) {
    const auto r = grad_check_network_front(v);
    EXPECT_EQ(r.checked, 50u) << to_string(v);
    EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
  }
  EXPECT_THROW(grad_check_network_front(Variant::baseline), InputError);
  EXPECT_THROW(grad_check_network_front(Variant::cst_fixed), InputError);
}

TEST(GradCheck, FixedTransformNetwork) {
  GradCheckOptions opt;
  opt.probes = 20;
  const auto r = grad_check_network(Variant::cst_fixed, opt);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(GradCheck, CorruptedColorGradientIsCaught) {
  auto p = make_layer_problem("color_transform", 5);
  for (auto& b : p.blocks) {
    if (b.name == "W")
      for (auto& g : b.analytic) g *= 2.0;
  }
  EXPECT_GT(run_grad_check(p, {}).max_rel_error, 0.1);
}

TEST(GradCheck, CorruptedNetworkColorGradientIsCaught) {
  auto p = make_network_problem(Variant::cst_global, 1, 5);
  // Only the corrupted block, so every probe lands on it.
  std::erase_if(p.blocks, [](const auto& b) { return b.name != "cst.W"; });
  ASSERT_EQ(p.blocks.size(), 1u);
  for (auto& g : p.blocks[0].analytic) g *= 2.0;
  GradCheckOptions opt;
  opt.probes = 10;
  const auto r = run_grad_check(p, opt);
  EXPECT_GT(r.checked, 0u);
  EXPECT_GT(r.max_rel_error, 0.1);
}

TEST(GradCheck, UnknownLayerIsInputError) { EXPECT_THROW(make_layer_problem("softmax"), InputError); }
