#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "../support/model_checks.hpp"
#include "../support/oracles.hpp"
#include "osteovox/errors.hpp"
#include "osteovox/metrics.hpp"
#include "osteovox/nn/grad_check.hpp"
#include "osteovox/transvnet.hpp"

using namespace osteovox;
using namespace osteovox::transvnet;

namespace {

ModelConfig tiny(std::size_t h = 16, std::size_t downs = 2, std::size_t p = 2) {
  ModelConfig c;
  c.input_resolution = h;
  c.cnn_downscalings = downs;
  c.cnn_channels = 4;
  c.patch_size = p;
  c.hidden_dim = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.mlp_dim = 32;
  c.decoder_channels.clear();
  return c;
}

template <class T>
Tensor<T> random_tensor(nn::Shape s, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<T> v(nn::numel(s));
  for (auto& x : v) x = T(n(rng));
  return Tensor<T>(std::move(s), std::move(v));
}

std::vector<std::uint8_t> labels_of(const std::vector<VoxelGrid>& grids) {
  std::vector<std::uint8_t> out;
  for (const auto& g : grids) out.insert(out.end(), g.data().begin(), g.data().end());
  return out;
}

void check_close(const Tensor<float>& a, const Tensor<float>& b, double tol) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, double(std::abs(a.values()[i] - b.values()[i])));
  CHECK(worst <= tol);
}

}  // namespace

TEST_SUITE("model config") {
  TEST_CASE("defaults validate and derive the documented geometry") {
    ModelConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.feature_resolution() == 20);
    CHECK(c.token_grid() == 10);
    CHECK(c.token_count() == 1000);
    CHECK(c.patch_dim() == 8 * 32);
    CHECK(c.upsampling_blocks() == 4);
    CHECK(c.resolved_encoder_channels() == std::vector<std::size_t>{8, 16, 32});
  }

  TEST_CASE("vit-only geometry") {
    ModelConfig c;
    c.input_resolution = 64;
    c.vit_only = true;
    c.patch_size = 16;
    CHECK_NOTHROW(c.validate());
    CHECK(c.token_count() == 64);
    CHECK(c.patch_dim() == 16 * 16 * 16 * 3);
    CHECK(c.upsampling_blocks() == 4);
    CHECK(c.resolved_encoder_channels().empty());
  }

  TEST_CASE("violations raise config errors") {
    ModelConfig c = tiny();
    c.input_resolution = 20;
    c.cnn_downscalings = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.hidden_dim = 15;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny(16, 2, 8);  // H' = 4 is not divisible by 8
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.encoder_channels = {4, 8};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.input_encoding = InputEncoding::OneHot;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.in_channels = 2;
    CHECK_NOTHROW(c.validate());
  }

  TEST_CASE("json round trip") {
    ModelConfig c = tiny(32, 2, 2);
    c.encoder_channels = {2, 4};
    c.decoder_channels = {8, 8, 4, 4};
    c.vit_only = false;
    c.t_max = 12.0;
    const ModelConfig back = ModelConfig::from_json(c.to_json());
    CHECK(back == c);
    CHECK_THROWS_AS(ModelConfig::from_json("{not json"), ConfigError);
  }

  TEST_CASE("the H = 160 decoder ladder wires skips by resolution") {
    const ModelConfig c;  // H 160, 3 downscalings, P 2: tokens 10^3
    const auto shapes = TransVNetParams<float>::expected_shapes(c);
    auto find = [&](const std::string& name) {
      for (const auto& [n, s] : shapes)
        if (n == name) return s;
      FAIL("missing " << name);
      return nn::Shape{};
    };
    const auto dec = c.resolved_decoder_channels();
    REQUIRE(dec == std::vector<std::size_t>{128, 64, 32, 16, 16});
    // 10 -> 20: the 20^3 CNN features; 40, 80, 160: encoder levels 2, 1, 0
    CHECK(find("decoder.0.conv1.weight")[1] == dec[0] + 32);
    CHECK(find("decoder.1.conv1.weight")[1] == dec[1] + 32);
    CHECK(find("decoder.2.conv1.weight")[1] == dec[2] + 16);
    CHECK(find("decoder.3.conv1.weight")[1] == dec[3] + 8);
    CHECK(find("head.weight") == nn::Shape{2, 16, 1, 1, 1});
    CHECK(find("embed.position") == nn::Shape{1000, 256});
  }
}

TEST_SUITE("transvnet forward") {
  TEST_CASE("logits keep the input size across configurations") {
    std::mt19937_64 rng(1);
    for (std::size_t h : {16, 32})
      for (std::size_t p : {1, 2})
        for (std::size_t downs : {1, 2}) {
          CAPTURE(h);
          CAPTURE(p);
          CAPTURE(downs);
          ModelConfig c = tiny(h, downs, p);
          if (h == 32 && p == 1 && downs == 1) c.hidden_dim = 8, c.n_heads = 2;  // 4096 tokens
          TransVNetParams<float> params(c, 7);
          const auto input = random_tensor<float>({1, 3, h, h, h}, rng);
          const auto enc = cnn_encode(input, params, Mode::Eval);
          CHECK(enc.skips.size() == downs);
          for (std::size_t i = 0; i < downs; ++i) CHECK(enc.skips[i].dim(2) == (h >> i));
          CHECK(enc.features.shape() == nn::Shape{1, 4, h >> downs, h >> downs, h >> downs});
          const auto z0 = tokenize_and_embed(enc.features, {3.0}, params);
          CHECK(z0.shape() == nn::Shape{1, c.token_count(), c.hidden_dim});
          const auto logits = decode(transformer_encode(z0, params), enc, params, Mode::Eval);
          CHECK(logits.shape() == nn::Shape{1, 2, h, h, h});
        }
  }

  TEST_CASE("32^3 with two downscalings yields 8^3 features") {
    TransVNetParams<float> params(tiny(32, 2, 2), 1);
    const auto enc = cnn_encode(Tensor<float>({2, 3, 32, 32, 32}, 0.5f), params, Mode::Train);
    CHECK(enc.features.shape() == nn::Shape{2, 4, 8, 8, 8});
  }

  TEST_CASE("vit-only mode patches the raw input") {
    ModelConfig c = tiny(16, 0, 8);
    c.vit_only = true;
    TransVNetParams<float> params(c, 2);
    CHECK_FALSE(params.contains("encoder.0.conv1.weight"));
    std::mt19937_64 rng(3);
    const auto logits = forward(random_tensor<float>({2, 3, 16, 16, 16}, rng), {0.0, 5.0}, params, Mode::Train);
    CHECK(logits.shape() == nn::Shape{2, 2, 16, 16, 16});
  }

  TEST_CASE("tokens add one time embedding per sample") {
    TransVNetParams<float> params(tiny(), 4);
    std::mt19937_64 rng(5);
    const auto features = random_tensor<float>({1, 4, 4, 4, 4}, rng);
    auto& w = params.at("embed.time.weight");
    auto& b = params.at("embed.time.bias");
    std::fill(w.mutable_values().begin(), w.mutable_values().end(), 0.0f);
    std::fill(b.mutable_values().begin(), b.mutable_values().end(), 0.0f);
    const auto z_a = tokenize_and_embed(features, {0.0}, params);
    const auto z_b = tokenize_and_embed(features, {30.0}, params);
    check_close(z_a, z_b, 0.0);

    for (std::size_t i = 0; i < w.numel(); ++i) w.mutable_values()[i] = float(i) * 0.1f;
    const auto z_c = tokenize_and_embed(features, {18.0}, params);  // t / t_max = 0.5
    for (std::size_t tok = 0; tok < 8; ++tok)
      for (std::size_t d = 0; d < 16; ++d) {
        const float diff = z_c.values()[tok * 16 + d] - z_a.values()[tok * 16 + d];
        CHECK(diff == doctest::Approx(0.05 * double(d)).epsilon(1e-5));
      }
  }

  TEST_CASE("tokenization follows the patch lattice") {
    // Identity patch embedding on one channel with P = 2: token k holds its
    // 2^3 block in (z, y, x) order.
    ModelConfig c = tiny(8, 1, 2);
    c.cnn_channels = 1;
    c.hidden_dim = 8;
    TransVNetParams<double> params(c, 1);
    auto& e = params.at("embed.patch.weight");
    std::fill(e.mutable_values().begin(), e.mutable_values().end(), 0.0);
    for (std::size_t i = 0; i < 8; ++i) e.mutable_values()[i * 8 + i] = 1.0;
    for (auto* n : {"embed.position", "embed.time.weight"}) {
      auto& t = params.at(n);
      std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
    }
    std::vector<double> v(64);
    for (std::size_t i = 0; i < 64; ++i) v[i] = double(i);
    const auto z = tokenize_and_embed(Tensor<double>({1, 1, 4, 4, 4}, v), {0.0}, params);
    REQUIRE(z.shape() == nn::Shape{1, 8, 8});
    // token (gz, gy, gx) = (1, 0, 1) is index 5; its first voxel is (2, 0, 2)
    const std::size_t tok = 5;
    CHECK(z.values()[tok * 8 + 0] == (2 * 4 + 0) * 4 + 2);
    CHECK(z.values()[tok * 8 + 7] == (3 * 4 + 1) * 4 + 3);
  }

  TEST_CASE("zero transformer layers are the identity") {
    ModelConfig c = tiny();
    c.n_layers = 0;
    TransVNetParams<float> params(c, 6);
    std::mt19937_64 rng(7);
    const auto z = random_tensor<float>({2, 8, 16}, rng);
    check_close(transformer_encode(z, params), z, 0.0);
  }

  TEST_CASE("zeroed output projections pass tokens through") {
    ModelConfig c = tiny();
    c.n_layers = 2;
    TransVNetParams<float> params(c, 8);
    for (auto& [name, t] : params.named()) {
      if (name.find("attn.out") != std::string::npos || name.find("mlp.fc2") != std::string::npos)
        std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0f);
    }
    std::mt19937_64 rng(9);
    const auto z = random_tensor<float>({1, 8, 16}, rng);
    check_close(transformer_encode(z, params), z, 0.0);
  }

  TEST_CASE("the transformer is permutation equivariant") {
    ModelConfig c = tiny();
    c.n_layers = 2;
    TransVNetParams<double> params(c, 10);
    std::mt19937_64 rng(11);
    const auto z = random_tensor<double>({1, 8, 16}, rng);
    std::vector<std::size_t> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> zp(z.numel());
    for (std::size_t i = 0; i < 8; ++i)
      std::copy_n(z.values().begin() + perm[i] * 16, 16, zp.begin() + i * 16);
    const auto out = transformer_encode(z, params);
    const auto out_p = transformer_encode(Tensor<double>({1, 8, 16}, zp), params);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t d = 0; d < 16; ++d)
        CHECK(out_p.values()[i * 16 + d] == doctest::Approx(out.values()[perm[i] * 16 + d]).epsilon(1e-12));
  }

  TEST_CASE("forward is bit-deterministic") {
    TransVNetParams<float> a(tiny(), 12), b(tiny(), 12);
    std::mt19937_64 rng(13);
    const auto input = random_tensor<float>({2, 3, 16, 16, 16}, rng);
    const auto la = forward(input, {1.0, 2.0}, a, Mode::Train);
    const auto lb = forward(input, {1.0, 2.0}, b, Mode::Train);
    CHECK(std::equal(la.values().begin(), la.values().end(), lb.values().begin()));
  }

  TEST_CASE("shape errors on malformed inputs") {
    TransVNetParams<float> params(tiny(), 1);
    CHECK_THROWS_AS(cnn_encode(Tensor<float>({1, 3, 8, 8, 8}, 0.0f), params, Mode::Eval), ShapeError);
    CHECK_THROWS_AS(tokenize_and_embed(Tensor<float>({1, 4, 4, 4, 4}, 0.0f), {0.0, 1.0}, params), ShapeError);
    EncoderOutput<float> empty;
    CHECK_THROWS_AS(decode(Tensor<float>({1, 8, 16}, 0.0f), empty, params, Mode::Eval), ShapeError);
  }
}

TEST_SUITE("transvnet loss") {
  TEST_CASE("uniform logits on a balanced two-voxel target") {
    const std::vector<std::uint8_t> labels{0, 1};
    const auto t = loss(Tensor<double>({1, 2, 2, 1, 1}, 0.0), labels);
    CHECK(t.cross_entropy.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(t.soft_dice.item() == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(t.total.item() == doctest::Approx(0.5 * std::log(2.0) + 0.25).epsilon(1e-6));
    CHECK(t.total.item() == doctest::Approx(0.5965).epsilon(1e-4));
  }

  TEST_CASE("hand-computed 2x1x1 instance") {
    // voxel 0: logits (1, -1), label 0; voxel 1: logits (0.5, 2), label 1
    const Tensor<double> logits({1, 2, 2, 1, 1}, {1.0, 0.5, -1.0, 2.0});
    const std::vector<std::uint8_t> labels{0, 1};
    const double p0 = 1.0 / (1.0 + std::exp(2.0));   // mineral probability at voxel 0
    const double p1 = 1.0 / (1.0 + std::exp(-1.5));  // at voxel 1
    const double ce = 0.5 * (-std::log(1.0 - p0) - std::log(p1));
    const double dsc = (2.0 * p1 + 1e-6) / (p0 + p1 + 1.0 + 1e-6);
    const auto t = loss(logits, labels);
    CHECK(std::abs(t.total.item() - (0.5 * ce + 0.5 * (1.0 - dsc))) < 1e-6);
  }

  TEST_CASE("saturated logits drive the loss to zero") {
    std::mt19937_64 rng(14);
    const VoxelGrid g = oracle::random_grid(Dims{4, 4, 4}, 0.4, rng);
    std::vector<double> v(2 * 64);
    for (std::size_t i = 0; i < 64; ++i) {
      v[i] = g.data()[i] == 0 ? 20.0 : -20.0;
      v[64 + i] = -v[i];
    }
    const auto t = loss(Tensor<double>({1, 2, 4, 4, 4}, v), labels_of({g}));
    CHECK(t.total.item() >= 0.0);
    CHECK(t.total.item() < 1e-6);
  }

  TEST_CASE("the loss is never negative") {
    std::mt19937_64 rng(15);
    for (int k = 0; k < 20; ++k) {
      const VoxelGrid g = oracle::random_grid(Dims{3, 3, 3}, 0.5, rng);
      const auto logits = random_tensor<double>({1, 2, 3, 3, 3}, rng, 5.0);
      CHECK(loss(logits, labels_of({g})).total.item() >= 0.0);
    }
  }

  TEST_CASE("out-of-range labels are rejected") {
    const std::vector<std::uint8_t> labels{0, 2};
    CHECK_THROWS_AS(loss(Tensor<float>({1, 2, 2, 1, 1}, 0.0f), labels), DomainError);
  }
}

TEST_SUITE("transvnet inference") {
  TEST_CASE("argmax favours class 0 on ties") {
    const Tensor<float> logits({1, 2, 3, 1, 1}, {0.0f, 1.0f, 2.0f, 0.0f, 0.5f, 3.0f});
    const VoxelGrid g = argmax_labels(logits, 0, Dims{3, 1, 1});
    CHECK(g.data()[0] == 0);
    CHECK(g.data()[1] == 0);
    CHECK(g.data()[2] == 1);
  }

  TEST_CASE("a mineral-favouring head predicts all mineral") {
    TransVNetParams<float> params(tiny(), 16);
    auto& b = params.at("head.bias");
    b.mutable_values()[0] = -1e4f;
    b.mutable_values()[1] = 1e4f;
    const VoxelGrid out = predict(VoxelGrid(Dims{16, 16, 16}), 0.0, params);
    CHECK(volume_fraction(out, kMineral) == 1.0);
  }

  TEST_CASE("predict ignores a constant added to every class logit") {
    TransVNetParams<float> params(tiny(), 17);
    std::mt19937_64 rng(18);
    const VoxelGrid g = oracle::random_grid(Dims{16, 16, 16}, 0.3, rng);
    const VoxelGrid before = predict(g, 4.0, params);
    auto& b = params.at("head.bias");
    for (auto& v : b.mutable_values()) v += 2.0f;
    const VoxelGrid after = predict(g, 4.0, params);
    std::size_t differ = 0;
    for (std::size_t i = 0; i < g.data().size(); ++i) differ += before.data()[i] != after.data()[i];
    CHECK(differ == 0);
  }

  TEST_CASE("hard DSC of a prediction matches voxel-core dice") {
    TransVNetParams<float> params(tiny(), 19);
    std::mt19937_64 rng(20);
    const VoxelGrid g = oracle::random_grid(Dims{16, 16, 16}, 0.4, rng);
    const VoxelGrid pred = predict(g, 1.0, params);
    const auto r = oracle::dice_ratio(pred, g, kMineral);
    CHECK(dice(pred, g, kMineral) == double(r.num) / double(r.den));
  }

  TEST_CASE("resolution mismatch is a config error") {
    TransVNetParams<float> params(tiny(), 21);
    CHECK_THROWS_AS(predict(VoxelGrid(Dims{8, 8, 8}), 0.0, params), ConfigError);
  }

  TEST_CASE("rollout lengths") {
    TransVNetParams<float> params(tiny(), 22);
    const VoxelGrid g(Dims{16, 16, 16});
    const auto none = rollout(g, 0.0, 0, 1, params);
    REQUIRE(none.frames.size() == 1);
    CHECK(none.frames[0] == g);
    const auto three = rollout(g, 0.0, 3, 4, params);
    CHECK(three.frames.size() == 4);
    CHECK(three.months() == 3);
    CHECK(three.frames[2] == predict(three.frames[1], 4.0, params));
  }
}

TEST_SUITE("transvnet parameters") {
  TEST_CASE("named arrays round trip and validate") {
    TransVNetParams<float> params(tiny(), 23);
    params.stats("decoder.stem.bn").running_mean[0] = 0.75f;
    const auto arrays = params.to_named_arrays();
    const auto back = TransVNetParams<float>::from_named_arrays(tiny(), arrays);
    CHECK(back.to_named_arrays() == arrays);
    CHECK(back.stats("decoder.stem.bn").running_mean[0] == 0.75f);

    auto broken = arrays;
    broken.erase(broken.begin());
    broken[0].shape.push_back(1);
    broken.push_back({"bogus", {1}, {0.0f}});
    try {
      TransVNetParams<float>::from_named_arrays(tiny(), broken);
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find(arrays[0].name) != std::string::npos);
      CHECK(msg.find(arrays[1].name) != std::string::npos);
      CHECK(msg.find("bogus") != std::string::npos);
    }
  }

  TEST_CASE("initialization is seeded and counted") {
    const TransVNetParams<float> a(tiny(), 1), b(tiny(), 1), c(tiny(), 2);
    CHECK(a.to_named_arrays() == b.to_named_arrays());
    CHECK_FALSE(a.to_named_arrays() == c.to_named_arrays());
    std::size_t total = 0;
    for (const auto& [name, shape] : TransVNetParams<float>::expected_shapes(tiny()))
      if (a.contains(name)) total += nn::numel(shape);
    CHECK(a.parameter_count() == total);
    for (double v : a.at("head.bias").values()) CHECK(v == 0.0);
    for (double v : a.at("decoder.stem.bn.weight").values()) CHECK(v == 1.0);
  }
}

TEST_SUITE("transvnet gradients") {
  TEST_CASE("full toy model passes the 64-bit gradient check") {
    for (std::uint64_t seed : {1, 2}) {
      CAPTURE(seed);
      const auto check = oracle::full_model_grad_check(seed);
      const auto& r = check.result;
      INFO("worst stage " << check.groups[r.worst_input] << " analytic " << r.analytic << " numeric "
                          << r.numeric << " skipped " << r.skipped_nonsmooth);
      CHECK(r.max_relative_error < 1e-3);
      CHECK(r.probes == 4 * check.groups.size());
    }
  }

  TEST_CASE("a kink at the evaluation point is detected") {
    // Binary input with zero biases leaves many pre-activations exactly at 0.
    const ModelConfig c = oracle::grad_check_config();
    TransVNetParams<double> params(c, 3);
    params.set_requires_grad(true);
    std::mt19937_64 rng(4);
    const VoxelGrid g = oracle::random_grid(Dims{16, 16, 16}, 0.4, rng);
    const auto input = encode_input<double>({&g}, c);
    const auto labels = labels_of({g});
    nn::GradCheckOptions opt;
    opt.max_elements_per_input = 4;
    opt.skip_nonsmooth = true;
    std::vector<Tensor<double>> inputs{params.at("encoder.0.conv1.bias")};
    const auto r = nn::grad_check(
        [&](const auto&) { return loss(forward(input, {1.0}, params, Mode::Train), labels).total; }, inputs, opt);
    CHECK(r.skipped_nonsmooth == 4);
    CHECK(r.probes == 0);
  }
}
