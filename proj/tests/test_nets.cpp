// Network assembly: shapes, block registry, freeze contracts, end-to-end
// gradient flow, and model persistence.
#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>

#include "palm/nets.hpp"
#include "palm/synth.hpp"

using namespace palm;

namespace {

FloatImage random_image(int side, uint64_t seed) {
  RngState rng(seed);
  FloatImage img = FloatImage::make(3, side, side);
  for (auto& v : img.data) v = static_cast<float>(rng.next_uniform());
  return img;
}

}  // namespace

TEST(RoiLaNet, ZeroedFc3MapsToFrameCenter) {
  RoiLaNet<float> net(BackboneConfig::desk(), RngState(1));
  auto& w3 = net.params().at("loc.fc3.weight").tensor;
  std::fill(w3.values().begin(), w3.values().end(), 0.f);
  RngState rng(2);
  Tensor<float> in({1, 3, 56, 56});
  for (auto& v : in.values()) v = static_cast<float>(rng.next_uniform());
  auto theta = net.localize(in, Mode::Eval, rng, false);
  ASSERT_EQ(theta.shape(), (std::vector<int>{1, 18}));
  for (float v : theta.values()) EXPECT_LT(std::abs(v), 0.15f);  // tanh(small bias)
}

TEST(RoiLaNet, EvalModeDeterministic) {
  RoiLaNet<float> net(BackboneConfig::desk(), RngState(3));
  RngState rng(4);
  Tensor<float> in({2, 3, 56, 56});
  for (auto& v : in.values()) v = static_cast<float>(rng.next_uniform());
  RngState r1(9), r2(10);
  auto a = net.localize(in, Mode::Eval, r1, true);
  auto b = net.localize(in, Mode::Eval, r2, true);
  EXPECT_EQ(a.values(), b.values());
}

TEST(RoiLaNet, DropoutOnInjectsLandmarkVariance) {
  RoiLaNet<float> net(BackboneConfig::desk(), RngState(5));
  RngState rng(6);
  Tensor<float> in({1, 3, 56, 56});
  for (auto& v : in.values()) v = static_cast<float>(rng.next_uniform());
  RngState drop_rng(7);
  std::vector<std::vector<float>> outs;
  for (int k = 0; k < 10; ++k) outs.push_back(net.localize(in, Mode::Train, drop_rng, true).values());
  int varying = 0;
  for (int c = 0; c < 18; ++c) {
    double mean = 0, var = 0;
    for (const auto& o : outs) mean += o[static_cast<size_t>(c)];
    mean /= 10;
    for (const auto& o : outs) var += (o[static_cast<size_t>(c)] - mean) * (o[static_cast<size_t>(c)] - mean);
    if (var > 0) ++varying;
  }
  EXPECT_EQ(varying, 18);

  // switched off: bit-identical across stochastic passes
  auto a = net.localize(in, Mode::Train, drop_rng, false);
  auto b = net.localize(in, Mode::Train, drop_rng, false);
  EXPECT_EQ(a.values(), b.values());
}

TEST(FerNet, ShapesAndDeterminism) {
  FerNet<float> net(BackboneConfig::desk(), 20, RngState(8));
  RngState rng(9);
  Tensor<float> zero({1, 3, 112, 112});
  auto out = net.forward(zero, Mode::Eval, rng);
  EXPECT_EQ(out.descriptor.shape(), (std::vector<int>{1, 512}));
  EXPECT_EQ(out.logits.shape(), (std::vector<int>{1, 20}));
  for (float v : out.descriptor.values()) EXPECT_TRUE(std::isfinite(v));

  auto again = net.forward(zero, Mode::Eval, rng);
  EXPECT_EQ(out.logits.values(), again.logits.values());
}

TEST(Backbone, SpatialBookkeepingBothWidths) {
  for (BackboneConfig cfg : {BackboneConfig::desk(), BackboneConfig::paper()}) {
    ParamStore<float> ps;
    RngState rng(10);
    detail::add_backbone_params(ps, "t.", 'B', cfg, rng);
    Tensor<float> in56({1, 3, 56, 56});
    auto f = detail::backbone_forward(ps, "t.", in56);
    EXPECT_EQ(f.shape(), (std::vector<int>{1, cfg.widths[2], 7, 7}));
    Tensor<float> in112({1, 3, 112, 112});
    auto g = detail::backbone_forward(ps, "t.", in112);
    EXPECT_EQ(g.shape(), (std::vector<int>{1, cfg.widths[2], 14, 14}));
  }
}

TEST(RoiLaNet, RegressionHeadParameterCount) {
  for (BackboneConfig cfg : {BackboneConfig::desk(), BackboneConfig::paper()}) {
    RoiLaNet<float> net(cfg, RngState(11));
    size_t flat = static_cast<size_t>(cfg.widths[2]) * 7 * 7;
    size_t expect = (flat * 512 + 512) + (512 * 128 + 128) + (128 * 18 + 18);
    size_t got = 0;
    for (const auto& p : net.params().items())
      if (p.block == 'A') got += p.tensor.numel();
    EXPECT_EQ(got, expect);
  }
}

TEST(EePrNet, BlockRegistryIsPartitionWithAlias) {
  EePrNet<float> net(BackboneConfig::desk(), 5, RngState(12));
  std::set<std::string> names;
  std::map<char, int> counts;
  auto audit = [&](const ParamStore<float>& ps) {
    for (const auto& p : ps.items()) {
      EXPECT_TRUE(names.insert(p.name).second) << "duplicate name " << p.name;
      EXPECT_TRUE(p.block == 'A' || p.block == 'B' || p.block == 'C');
      counts[p.block]++;
    }
  };
  audit(net.localizer().params());
  audit(net.fernet().params());
  EXPECT_EQ(counts['A'], 6);       // fc1-fc3 weight+bias
  EXPECT_EQ(counts['B'], 12);      // six conv layers
  EXPECT_EQ(counts['C'], 12 + 4);  // fernet convs + fc4/fc5

  EXPECT_THROW(net.set_block_trainable('X', false), ParameterError);
}

TEST(EePrNet, FreezeContractAndDAlias) {
  EePrNet<float> net(BackboneConfig::desk(), 4, RngState(13));
  net.set_block_trainable('D', false);  // alias for the regression head
  for (const auto& p : net.localizer().params().items())
    if (p.block == 'A') EXPECT_FALSE(p.trainable);

  // frozen blocks are bit-identical across an optimizer step with real grads
  net.set_block_trainable('A', false);
  net.set_block_trainable('B', false);
  auto before_a = net.localizer().params().at("loc.fc3.weight").tensor.values();
  auto before_b = net.localizer().params().at("loc.conv1.weight").tensor.values();

  RngState rng(14);
  std::vector<Tensor<float>> fulls = {image_to_tensor<float>(random_image(40, 15))};
  Tensor<float> in56 = prepare_input56<float>(random_image(40, 15), {0, 0, 0});
  auto in56b = reshape(in56, {1, 3, 56, 56});
  auto out = net.forward_end_to_end(fulls, in56b, Mode::Train, rng, false);
  auto loss = softmax_cross_entropy(out.logits, {1});
  loss.backward();

  AdamState<float> stl, stf;
  stl.init(net.localizer().params());
  stf.init(net.fernet().params());
  adam_step(net.localizer().params(), stl, 0.001);
  adam_step(net.fernet().params(), stf, 0.001);

  EXPECT_EQ(net.localizer().params().at("loc.fc3.weight").tensor.values(), before_a);
  EXPECT_EQ(net.localizer().params().at("loc.conv1.weight").tensor.values(), before_b);

  // unfreeze -> the same step moves the head
  net.set_block_trainable('D', true);
  net.localizer().params().zero_grad();
  net.fernet().params().zero_grad();
  auto out2 = net.forward_end_to_end(fulls, in56b, Mode::Train, rng, false);
  softmax_cross_entropy(out2.logits, {1}).backward();
  adam_step(net.localizer().params(), stl, 0.001);
  EXPECT_NE(net.localizer().params().at("loc.fc3.weight").tensor.values(), before_a);
}

TEST(EePrNet, EndToEndGradientReachesEveryParameter) {
  EePrNet<double> net(BackboneConfig{{4, 6, 8}}, 3, RngState(16));
  RngState rng(17);
  std::vector<Tensor<double>> fulls;
  std::vector<FloatImage> imgs;
  for (int n = 0; n < 3; ++n) imgs.push_back(random_image(36, 18 + static_cast<uint64_t>(n)));
  for (const auto& im : imgs) fulls.push_back(image_to_tensor<double>(im));
  std::vector<Tensor<double>> rows;
  for (const auto& im : imgs) rows.push_back(prepare_input56<double>(im, {0, 0, 0}));
  auto in56 = concat_batch(rows);

  auto out = net.forward_end_to_end(fulls, in56, Mode::Train, rng, false);
  auto loss = softmax_cross_entropy(out.logits, {0, 1, 2});
  loss.backward();

  auto check_store = [&](const ParamStore<double>& ps) {
    for (const auto& p : ps.items()) {
      double mx = 0;
      for (double g : p.tensor.grad()) mx = std::max(mx, std::abs(g));
      EXPECT_GT(mx, 0.0) << "no gradient reached " << p.name;
    }
  };
  check_store(net.localizer().params());
  check_store(net.fernet().params());
}

TEST(EePrNet, Fc3BiasGradMatchesFiniteDifference) {
  EePrNet<double> net(BackboneConfig{{4, 6, 8}}, 3, RngState(19));
  RngState rng(20);
  FloatImage img = random_image(30, 21);
  std::vector<Tensor<double>> fulls = {image_to_tensor<double>(img)};
  auto in56 = reshape(prepare_input56<double>(img, {0, 0, 0}), {1, 3, 56, 56});

  auto eval_loss = [&]() {
    RngState r(0);
    auto out = net.forward_end_to_end(fulls, in56, Mode::Eval, r, false);
    return softmax_cross_entropy(out.logits, {1});
  };
  auto loss = eval_loss();
  loss.backward();
  auto& bias = net.localizer().params().at("loc.fc3.bias").tensor;
  const int k = 4;
  double analytic = bias.grad()[k];
  EXPECT_NE(analytic, 0.0);

  const double h = 1e-6;  // small enough that no ROI sample crosses a pixel line
  double saved = bias.values()[k];
  bias.values()[k] = saved + h;
  double up = eval_loss().item();
  bias.values()[k] = saved - h;
  double down = eval_loss().item();
  bias.values()[k] = saved;
  double numeric = (up - down) / (2 * h);
  EXPECT_NEAR(analytic, numeric, std::max(1e-3 * std::abs(numeric), 1e-7));
}

TEST(EePrNet, BypassLocalizerMatchesDirectFernet) {
  // ground-truth landmarks fed as if predicted give the same descriptor as
  // running FerNet on the planted canonical texture
  PalmTexture tex = PalmTexture::for_id(31);
  RenderResult r = render_palm_sample(tex, 113, Nuisance::zero(), 2);
  FloatImage quantized = dequantize(quantize(r.image));

  EePrNet<double> net(BackboneConfig::desk(), 4, RngState(22));
  RngState rng(23);

  auto roi = extract_roi_op(image_to_tensor<double>(quantized), landmarks_to_tensor<double>(r.lm), 112, 112);
  auto roi_b = reshape(roi, {1, 3, 112, 112});
  auto direct = net.fernet().forward(sub_channel_mean(roi_b, {0.0, 0.0, 0.0}), Mode::Eval, rng);

  FloatImage planted = canonical_texture_image(tex, 112, 112);
  auto ref = net.fernet().forward(reshape(prepare_input112<double>(planted, {0, 0, 0}), {1, 3, 112, 112}), Mode::Eval,
                                  rng);

  double num = 0, da = 0, db = 0;
  for (int i = 0; i < 512; ++i) {
    double a = direct.descriptor.values()[static_cast<size_t>(i)], b = ref.descriptor.values()[static_cast<size_t>(i)];
    num += a * b;
    da += a * a;
    db += b * b;
  }
  EXPECT_GT(num / std::sqrt(da * db), 0.999);
}

TEST(PalmModel, SaveLoadRoundTrip) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "palm_model_rt";
  fs::create_directories(dir);

  PalmModel<float> m;
  m.kind = "eeprnet";
  m.strategy = "S2";
  m.widths = BackboneConfig::desk();
  m.mean_rgb = {0.4f, 0.3f, 0.2f};
  m.classes = {3, 5, 9};
  m.eeprnet = std::make_unique<EePrNet<float>>(m.widths, 3, RngState(24));
  m.eeprnet->mean() = m.mean_rgb;
  save_model(dir / "m.palmw", m);

  auto back = load_model<float>(dir / "m.palmw");
  EXPECT_EQ(back.kind, "eeprnet");
  EXPECT_EQ(back.strategy, "S2");
  EXPECT_EQ(back.classes, m.classes);
  EXPECT_EQ(back.eeprnet->localizer().params().at("loc.fc1.weight").tensor.values(),
            m.eeprnet->localizer().params().at("loc.fc1.weight").tensor.values());
  EXPECT_EQ(back.eeprnet->fernet().params().at("fer.fc5.bias").tensor.values(),
            m.eeprnet->fernet().params().at("fer.fc5.bias").tensor.values());
}
