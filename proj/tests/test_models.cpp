#include <catch2/catch_amalgamated.hpp>

#include "downscale/models.hpp"

using namespace dsc;

namespace {

ArchitectureConfig desk_config(Architecture a) {
  ArchitectureConfig cfg;
  cfg.architecture = a;
  cfg.in_channels = 4;
  cfg.in_h = 8;
  cfg.in_w = 8;
  cfg.mask = LandMask::all(4, 4);
  return cfg;
}

}  // namespace

TEST_CASE("architecture name round trip") {
  for (auto a : {Architecture::UNet, Architecture::DeepESD, Architecture::Pan})
    CHECK(parse_architecture(architecture_name(a)) == a);
  CHECK_THROWS_AS(parse_architecture("vgg"), input_error);
}

TEST_CASE("width scaling rounds up with a floor of one") {
  ArchitectureConfig cfg = desk_config(Architecture::DeepESD);
  cfg.width_scale = 0.1;
  CHECK(cfg.scaled(50) == 5);
  CHECK(cfg.scaled(25) == 3);
  CHECK(cfg.scaled(1) == 1);
  cfg.width_scale = 0.001;
  CHECK(cfg.scaled(64) == 1);
  cfg.width_scale = 1.0;
  CHECK(cfg.scaled(64) == 64);
  cfg.width_scale = 1.5;
  CHECK_THROWS_AS(cfg.validate(), build_error);
}

TEST_CASE("deepesd parameter count at desk scale") {
  ArchitectureConfig cfg = desk_config(Architecture::DeepESD);
  ModelGraph<float> m = build_deepesd<float>(cfg);
  // conv1 50*(4*9+1) + conv2 25*(50*9+1) + conv3 10*(25*9+1)
  // + dense 16*(10*64) + 16
  CHECK(m.parameter_count() == 1850 + 11275 + 2260 + 10256);
  CHECK(m.parameter_count() == 25641);
  CHECK(m.output_size() == 16);
  CHECK_FALSE(m.has_batchnorm());
}

TEST_CASE("pan hidden layer is half the locations rounded up") {
  ArchitectureConfig cfg = desk_config(Architecture::Pan);
  ModelGraph<float> m = build_pan<float>(cfg);
  auto* hidden = dynamic_cast<Dense<float>*>(m.layers[m.layers.size() - 2].get());
  REQUIRE(hidden != nullptr);
  CHECK(hidden->out_n == 8);  // ceil(16/2)
  CHECK(hidden->act == Activation::Relu);
  auto* out = dynamic_cast<Dense<float>*>(m.layers.back().get());
  REQUIRE(out != nullptr);
  CHECK(out->act == Activation::Linear);
  CHECK(m.output_size() == 16);

  // Odd location count rounds up: 5 targets -> 3 hidden units.
  ArchitectureConfig odd = cfg;
  odd.mask = LandMask(4, 4, {1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
  ModelGraph<float> mo = build_pan<float>(odd);
  auto* oh = dynamic_cast<Dense<float>*>(mo.layers[mo.layers.size() - 2].get());
  CHECK(oh->out_n == 3);
}

TEST_CASE("pan parameter count at desk scale") {
  ArchitectureConfig cfg = desk_config(Architecture::Pan);
  ModelGraph<float> m = build_pan<float>(cfg);
  const std::size_t convs = 15 * (4 * 9 + 1) + 20 * (15 * 9 + 1) +
                            20 * (20 * 9 + 1) + 20 * (20 * 9 + 1) +
                            40 * (20 * 9 + 1);
  const std::size_t dense = 8 * (40 * 64) + 8 + 16 * 8 + 16;
  CHECK(m.parameter_count() == convs + dense);
}

TEST_CASE("unet structure") {
  ArchitectureConfig cfg;
  cfg.architecture = Architecture::UNet;
  cfg.in_channels = 3;
  cfg.in_h = 16;
  cfg.in_w = 16;
  cfg.mask = LandMask::all(32, 32);
  cfg.width_scale = 0.05;
  cfg.upsample_factor = 2;
  ModelGraph<float> m = build_unet<float>(cfg);

  CHECK(m.has_batchnorm());
  CHECK(m.output_size() == 32 * 32);
  for (const auto& l : m.layers)
    CHECK(dynamic_cast<Dense<float>*>(l.get()) == nullptr);

  // Skip concatenation doubles the channels entering each decoder conv.
  for (int j = 1; j <= 4; ++j) {
    const std::string want = "dec" + std::to_string(j) + "_conv";
    for (const auto& l : m.layers)
      if (l->name == want) {
        auto* c = dynamic_cast<Conv2d<float>*>(l.get());
        REQUIRE(c != nullptr);
        CHECK(c->in_c == 2 * c->out_c);
      }
  }

  auto count_heads = [](const ModelGraph<float>& g) {
    std::size_t n = 0;
    for (const auto& l : g.layers)
      if (l->name.rfind("head", 0) == 0 && l->name.find("_up") != std::string::npos)
        ++n;
    return n;
  };
  CHECK(count_heads(m) == 1);  // upsample 2 -> one doubling block

  cfg.upsample_factor = 4;
  cfg.mask = LandMask::all(64, 64);
  CHECK(count_heads(build_unet<float>(cfg)) == 2);

  cfg.upsample_factor = 1;
  cfg.mask = LandMask::all(16, 16);
  CHECK(count_heads(build_unet<float>(cfg)) == 0);
}

TEST_CASE("unet rejects inputs not divisible by 16") {
  ArchitectureConfig cfg;
  cfg.architecture = Architecture::UNet;
  cfg.in_channels = 1;
  cfg.in_h = 20;
  cfg.in_w = 16;
  cfg.mask = LandMask::all(20, 16);
  CHECK_THROWS_AS(build_unet<float>(cfg), build_error);
}

TEST_CASE("parameter count grows monotonically with width scale") {
  for (auto a : {Architecture::DeepESD, Architecture::Pan}) {
    ArchitectureConfig cfg = desk_config(a);
    std::size_t prev = 0;
    for (double s : {0.1, 0.3, 0.6, 1.0}) {
      cfg.width_scale = s;
      ModelGraph<float> m = build_model<float>(cfg);
      CHECK(m.parameter_count() > prev);
      prev = m.parameter_count();
    }
  }
  ArchitectureConfig cfg;
  cfg.architecture = Architecture::UNet;
  cfg.in_channels = 2;
  cfg.in_h = 16;
  cfg.in_w = 16;
  cfg.mask = LandMask::all(16, 16);
  std::size_t prev = 0;
  for (double s : {0.02, 0.05, 0.1}) {
    cfg.width_scale = s;
    ModelGraph<float> m = build_model<float>(cfg);
    CHECK(m.parameter_count() > prev);
    prev = m.parameter_count();
  }
}

TEST_CASE("full scale widths match the published configurations") {
  ArchitectureConfig cfg = desk_config(Architecture::DeepESD);
  cfg.width_scale = 1.0;
  ModelGraph<float> m = build_deepesd<float>(cfg);
  auto* c1 = dynamic_cast<Conv2d<float>*>(m.layers[0].get());
  auto* c2 = dynamic_cast<Conv2d<float>*>(m.layers[2].get());
  auto* c3 = dynamic_cast<Conv2d<float>*>(m.layers[4].get());
  CHECK(c1->out_c == 50);
  CHECK(c2->out_c == 25);
  CHECK(c3->out_c == 10);

  ArchitectureConfig pan = desk_config(Architecture::Pan);
  ModelGraph<float> p = build_pan<float>(pan);
  std::vector<std::size_t> widths;
  for (const auto& l : p.layers)
    if (auto* c = dynamic_cast<Conv2d<float>*>(l.get())) widths.push_back(c->out_c);
  CHECK(widths == std::vector<std::size_t>{15, 20, 20, 20, 40});

  ArchitectureConfig un;
  un.architecture = Architecture::UNet;
  un.in_channels = 1;
  un.in_h = 16;
  un.in_w = 16;
  un.mask = LandMask::all(16, 16);
  ModelGraph<float> u = build_unet<float>(un);
  std::vector<std::size_t> enc, dec;
  for (const auto& l : u.layers)
    if (auto* c = dynamic_cast<Conv2d<float>*>(l.get())) {
      if (l->name.rfind("enc", 0) == 0) enc.push_back(c->out_c);
      if (l->name.rfind("dec", 0) == 0) dec.push_back(c->out_c);
    }
  CHECK(enc == std::vector<std::size_t>{64, 128, 256, 512, 1024});
  CHECK(dec == std::vector<std::size_t>{512, 256, 128, 64});
}
