#include "doctest.h"

#include <limits>
#include <random>

#include "esfp/unet.hpp"
#include "test_util.hpp"

using namespace esfp;
using namespace esfp::testutil;
using snn::NetworkConfig;
using snn::Recorder;
using snn::SpikingUnet;
using snn::TimestepMode;

namespace {

NetworkConfig small_config(TimestepMode mode, int bins = 4) {
  NetworkConfig cfg;
  cfg.mode = mode;
  cfg.bins = bins;
  cfg.encoder_blocks = 2;
  cfg.base_channels = 4;
  return cfg;
}

}  // namespace

TEST_CASE("default network has 19 weighted conv layers and the spec shape contract") {
  NetworkConfig cfg;
  cfg.mode = TimestepMode::kSingle;
  cfg.bins = 8;
  cfg.base_channels = 16;
  SpikingUnet net(cfg, 1);
  CHECK(net.weighted_layer_count() == 19);

  std::mt19937_64 rng(61);
  auto input = random_tensor<float>({8, 64, 64}, rng, 0.0, 1.0);
  auto out = net.forward(nullptr, input);
  CHECK(out.shape() == std::vector<int>{3, 64, 64});
}

TEST_CASE("indivisible spatial extents are a dimension error") {
  SpikingUnet net(small_config(TimestepMode::kSingle), 2);
  ad::TensorF bad({4, 18, 18});
  CHECK_THROWS_AS(net.forward(nullptr, bad), std::invalid_argument);
  ad::TensorF wrong_bins({3, 16, 16});
  CHECK_THROWS_AS(net.forward(nullptr, wrong_bins), std::invalid_argument);
}

TEST_CASE("zero input produces the bias-path response and binary intermediates") {
  SpikingUnet net(small_config(TimestepMode::kSingle), 3);
  // give the head a visible bias so the zero-input response is nonzero
  for (auto& [name, t] : net.named_parameters()) {
    if (name == "head.conv.bias") {
      t.values()[0] = 0.25f;
      t.values()[1] = -0.5f;
      t.values()[2] = 1.0f;
    }
  }
  ad::TensorF zero({4, 16, 16}, 0.0f);
  Recorder rec;
  auto out = net.forward(nullptr, zero, false, &rec);
  auto out2 = net.forward(nullptr, zero);
  for (long i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == out2.data()[i]);

  rec.capture_tensors = true;
  Recorder rec2;
  rec2.capture_tensors = true;
  net.forward(nullptr, zero, false, &rec2);
  for (const auto& layer : rec2.layers) {
    if (!layer.spiking) continue;
    for (const auto& o : layer.outputs)
      for (float v : o.values()) CHECK((v == 0.0f || v == 1.0f));
  }
  // zero biases upstream: no spiking layer fires
  for (const auto& layer : rec2.layers) {
    if (!layer.spiking) continue;
    for (long c : layer.spike_counts) CHECK(c == 0);
  }
  // head output equals its bias everywhere
  const long hw = 16 * 16;
  for (long i = 0; i < hw; ++i) {
    CHECK(out.data()[i] == doctest::Approx(0.25f));
    CHECK(out.data()[hw + i] == doctest::Approx(-0.5f));
    CHECK(out.data()[2 * hw + i] == doctest::Approx(1.0f));
  }
}

TEST_CASE("forced-fire network matches the all-ones dense-path oracle") {
  NetworkConfig cfg = small_config(TimestepMode::kSingle);
  cfg.neuron.threshold = -std::numeric_limits<float>::infinity();  // fire everywhere
  SpikingUnet net(cfg, 4);

  std::mt19937_64 rng(62);
  auto input = random_tensor<float>({4, 16, 16}, rng);
  Recorder rec;
  rec.capture_tensors = true;
  auto out = net.forward(nullptr, input, false, &rec);

  for (const auto& layer : rec.layers) {
    if (!layer.spiking) continue;
    for (const auto& o : layer.outputs)
      for (float v : o.values()) CHECK(v == 1.0f);
  }

  // the head sees an all-ones activation map, so its response must equal an
  // independently computed dense convolution over ones
  ad::TensorF head_w, head_b;
  for (auto& [name, t] : net.named_parameters()) {
    if (name == "head.conv.weight") head_w = t;
    if (name == "head.conv.bias") head_b = t;
  }
  REQUIRE(head_w.defined());
  const std::vector<float> ones(static_cast<size_t>(head_w.dim(1)) * 16 * 16, 1.0f);
  const std::vector<float> bias(head_b.values().begin(), head_b.values().end());
  const auto expected =
      conv_oracle(ones, head_w.dim(1), 16, 16,
                  std::vector<float>(head_w.values().begin(), head_w.values().end()), 3, 3, &bias);
  CHECK(max_abs_diff(out, expected) <= 1e-5);
}

TEST_CASE("multi mode with one bin equals single mode with shared weights") {
  NetworkConfig multi = small_config(TimestepMode::kMulti, 1);
  NetworkConfig single = small_config(TimestepMode::kSingle, 1);
  SpikingUnet net_multi(multi, 77);
  SpikingUnet net_single(single, 77);  // same seed, same layer shapes, same weights

  std::mt19937_64 rng(63);
  auto input = random_tensor<float>({1, 16, 16}, rng, 0.0, 1.0);
  auto a = net_multi.forward(nullptr, input);
  auto b = net_single.forward(nullptr, input);
  CHECK(max_abs_diff(a, b) <= 1e-6);
}

TEST_CASE("multi-mode head accumulates its per-step drives") {
  SpikingUnet net(small_config(TimestepMode::kMulti, 4), 5);
  std::mt19937_64 rng(64);
  auto input = random_tensor<float>({4, 16, 16}, rng, 0.0, 1.0);
  Recorder rec;
  rec.capture_tensors = true;
  auto out = net.forward(nullptr, input, false, &rec);

  const auto& head = rec.layers.back();
  REQUIRE(head.name == "head.conv");
  REQUIRE(head.drives.size() == 4);
  ad::TensorF running(head.drives[0].shape(), 0.0f);
  for (size_t t = 0; t < head.drives.size(); ++t) {
    for (long i = 0; i < running.numel(); ++i) running.data()[i] += head.drives[t].data()[i];
    CHECK(max_abs_diff(head.outputs[t], running) <= 1e-5);
  }
  CHECK(max_abs_diff(out, running) <= 1e-5);
  // every trace in multi mode covers all four timesteps
  for (const auto& layer : rec.layers) CHECK(layer.spike_counts.size() == 4);
}

TEST_CASE("nearest-upsampling forward keeps every spike path binary on random input") {
  NetworkConfig cfg = small_config(TimestepMode::kMulti, 4);
  cfg.upsample = ad::UpsampleMode::kNearest;
  SpikingUnet net(cfg, 6);
  std::mt19937_64 rng(65);
  auto input = random_tensor<float>({4, 32, 32}, rng, 0.0, 2.0);
  Recorder rec;
  rec.capture_tensors = true;
  net.forward(nullptr, input, false, &rec);
  int spiking_layers = 0;
  for (const auto& layer : rec.layers) {
    if (!layer.spiking) continue;
    ++spiking_layers;
    for (const auto& o : layer.outputs)
      for (float v : o.values()) CHECK((v == 0.0f || v == 1.0f));
  }
  CHECK(spiking_layers == net.weighted_layer_count() - 2);  // all but layer 1 and the head
}

TEST_CASE("multi-mode parameter count is independent of the bin count") {
  SpikingUnet a(small_config(TimestepMode::kMulti, 2), 9);
  SpikingUnet b(small_config(TimestepMode::kMulti, 8), 9);
  CHECK(a.parameter_count() == b.parameter_count());
}

TEST_CASE("two forwards with the same weights and input are bitwise identical") {
  SpikingUnet net(small_config(TimestepMode::kMulti, 4), 10);
  std::mt19937_64 rng(66);
  auto input = random_tensor<float>({4, 16, 16}, rng, 0.0, 1.0);
  auto a = net.forward(nullptr, input);
  auto b = net.forward(nullptr, input);
  for (long i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("normalize_prediction rescales, handles the 3-4-5 pixel and flags degenerates") {
  ad::TensorF raw({3, 1, 3}, 0.0f);
  raw.at({2, 0, 0}) = 5.0f;                                   // (0,0,5) -> (0,0,1)
  raw.at({0, 0, 1}) = 3.0f;                                   // (3,4,0) -> (0.6,0.8,0)
  raw.at({1, 0, 1}) = 4.0f;
  raw.at({0, 0, 2}) = 1e-12f;                                 // near-zero -> flagged (0,0,1)
  const NormalMap map = snn::normalize_prediction(raw);
  CHECK(map.channel(2, 0, 0) == 1.0f);
  CHECK(map.valid[0] == 1);
  CHECK(map.channel(0, 1, 0) == doctest::Approx(0.6f));
  CHECK(map.channel(1, 1, 0) == doctest::Approx(0.8f));
  CHECK(map.channel(2, 1, 0) == 0.0f);
  CHECK(map.channel(2, 2, 0) == 1.0f);
  CHECK(map.valid[2] == 0);
}

TEST_CASE("training-mode forward with a tape supports backward through both modes") {
  for (auto mode : {TimestepMode::kSingle, TimestepMode::kMulti}) {
    SpikingUnet net(small_config(mode, 2), 11);
    std::mt19937_64 rng(67);
    auto input = random_tensor<float>({2, 16, 16}, rng, 0.0, 1.0);
    ad::Tape<float> tape;
    auto out = net.forward(&tape, input, /*training=*/true);
    auto loss = ad::mean_all(&tape, ad::mul(&tape, out, out));
    tape.backward(loss);
    // every parameter participates in the graph and owns a finite gradient
    for (auto& [name, t] : net.named_parameters()) {
      bool any_nonzero = false;
      for (float g : t.grad()) {
        CHECK(std::isfinite(g));
        any_nonzero = any_nonzero || g != 0.0f;
      }
      (void)any_nonzero;
    }
  }
}
