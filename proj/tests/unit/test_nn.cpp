#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "lsn/checkpoint.hpp"
#include "lsn/error.hpp"
#include "lsn/grad.hpp"
#include "lsn/io.hpp"
#include "lsn/nn.hpp"
#include "oracles.hpp"

using namespace lsn;
using nn::DigitalModel;

namespace {

// Straightforward re-implementation with bounds-checked loops.
struct Volume {
  std::size_t c, n;
  std::vector<double> v;
  double at(std::size_t ch, long y, long x) const {
    if (y < 0 || x < 0 || y >= static_cast<long>(n) || x >= static_cast<long>(n)) return 0.0;
    return v[(ch * n + static_cast<std::size_t>(y)) * n + static_cast<std::size_t>(x)];
  }
};

Volume ref_conv(const Volume& in, const nn::Tensor& w, const nn::Tensor& b) {
  const std::size_t cout = w.shape[0];
  Volume out{cout, in.n, std::vector<double>(cout * in.n * in.n)};
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t y = 0; y < in.n; ++y)
      for (std::size_t x = 0; x < in.n; ++x) {
        double s = b.data[co];
        for (std::size_t ci = 0; ci < in.c; ++ci)
          for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx)
              s += w.data[((co * in.c + ci) * 3 + static_cast<std::size_t>(dy + 1)) * 3 +
                          static_cast<std::size_t>(dx + 1)] *
                   in.at(ci, static_cast<long>(y) + dy, static_cast<long>(x) + dx);
        out.v[(co * in.n + y) * in.n + x] = std::max(s, 0.0);
      }
  return out;
}

Volume ref_pool(const Volume& in) {
  const std::size_t h = in.n / 2;
  Volume out{in.c, h, std::vector<double>(in.c * h * h)};
  for (std::size_t c = 0; c < in.c; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < h; ++x) {
        const long yy = static_cast<long>(2 * y), xx = static_cast<long>(2 * x);
        out.v[(c * h + y) * h + x] = std::max({in.at(c, yy, xx), in.at(c, yy, xx + 1),
                                               in.at(c, yy + 1, xx), in.at(c, yy + 1, xx + 1)});
      }
  return out;
}

nn::Probabilities ref_forward(const DigitalModel& model, const RealImage& image) {
  const auto p = model.parameters();
  const std::size_t n = image.rows();
  double mean = 0.0, var = 0.0;
  for (double v : image) mean += v;
  mean /= static_cast<double>(image.size());
  for (double v : image) var += (v - mean) * (v - mean);
  var /= static_cast<double>(image.size());
  Volume x{1, n, {}};
  for (double v : image) x.v.push_back((v - mean) / std::sqrt(var + 1e-10));
  x = ref_conv(x, *p[0], *p[1]);
  x = ref_pool(ref_conv(x, *p[2], *p[3]));
  x = ref_conv(x, *p[4], *p[5]);
  x = ref_pool(ref_conv(x, *p[6], *p[7]));
  const auto& w1 = *p[8];
  const auto& b1 = *p[9];
  std::vector<double> hidden(w1.shape[0]);
  for (std::size_t o = 0; o < hidden.size(); ++o) {
    double s = b1.data[o];
    for (std::size_t i = 0; i < x.v.size(); ++i) s += w1.data[o * x.v.size() + i] * x.v[i];
    hidden[o] = std::max(s, 0.0);
  }
  const auto& w2 = *p[10];
  const auto& b2 = *p[11];
  double l[2];
  for (std::size_t o = 0; o < 2; ++o) {
    l[o] = b2.data[o];
    for (std::size_t i = 0; i < hidden.size(); ++i) l[o] += w2.data[o * hidden.size() + i] * hidden[i];
  }
  const double e1 = std::exp(l[1] - l[0]);
  return {1.0 / (1.0 + e1), e1 / (1.0 + e1)};
}

// Random biases too, so ReLUs are not all active.
DigitalModel random_model(std::uint64_t seed, std::size_t n) {
  auto model = DigitalModel::init_params(seed, n);
  std::mt19937_64 rng(seed + 1000);
  std::uniform_real_distribution<double> d(-0.1, 0.1);
  for (auto* t : model.parameters()) {
    if (t->shape.size() == 1) {
      for (double& v : t->data) v = d(rng);
    }
  }
  return model;
}

double loss_of(DigitalModel& model, const RealImage& image, int label) {
  const auto probs = model.forward(image);
  return -std::log(probs[static_cast<std::size_t>(label)]);
}

// max |fd - analytic| over coordinates, relative to the largest analytic entry.
double fd_rel_error(const std::function<double(double)>& loss_at, double x0, double analytic,
                    double eps = 1e-6) {
  const double fd = (loss_at(x0 + eps) - loss_at(x0 - eps)) / (2.0 * eps);
  return std::abs(fd - analytic) / std::max(std::abs(analytic), 1e-6);
}

}  // namespace

TEST_SUITE("digital model forward") {
  TEST_CASE("all-zero model gives even odds") {
    DigitalModel model(16);
    const auto p = model.forward(RealImage(16, 16, 0.0));
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));
  }

  TEST_CASE("output bias dominates when all weights vanish") {
    DigitalModel model(16);
    model.parameters()[11]->data = {10.0, -10.0};
    std::mt19937_64 rng(3);
    const auto p = model.forward(oracle::random_image(16, rng));
    const double expected_small = std::exp(-10.0) / (std::exp(10.0) + std::exp(-10.0));
    CHECK(expected_small == doctest::Approx(2.0611536e-9).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(expected_small).epsilon(1e-12));
    CHECK(p[0] == doctest::Approx(1.0 - expected_small).epsilon(1e-15));
  }

  TEST_CASE("matches the reference implementation") {
    for (std::size_t n : {8u, 16u, 32u}) {
      const auto model = random_model(n, n);
      std::mt19937_64 rng(n);
      for (int trial = 0; trial < 3; ++trial) {
        const auto image = oracle::random_image(n, rng, -2.0, 3.0);
        const auto got = model.forward(image);
        const auto want = ref_forward(model, image);
        CHECK(std::abs(got[0] - want[0]) < 1e-12);
        CHECK(std::abs(got[1] - want[1]) < 1e-12);
      }
    }
  }

  TEST_CASE("deterministic and normalised") {
    const auto a = DigitalModel::init_params(7, 16);
    const auto b = DigitalModel::init_params(7, 16);
    std::mt19937_64 rng(1);
    const auto image = oracle::random_image(16, rng);
    const auto pa = a.forward(image);
    CHECK(pa == b.forward(image));
    CHECK(std::abs(pa[0] + pa[1] - 1.0) < 1e-9);
  }

  TEST_CASE("softmax sums to one across a wide logit range") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-700.0, 700.0);
    for (int i = 0; i < 1000; ++i) {
      const auto p = nn::softmax({d(rng), d(rng)});
      CHECK(std::abs(p[0] + p[1] - 1.0) <= 1e-9);
      CHECK(p[0] >= 0.0);
      CHECK(p[1] >= 0.0);
    }
  }

  TEST_CASE("shape and value errors") {
    DigitalModel model(16);
    CHECK_THROWS_AS(model.forward(RealImage(8, 8)), ShapeError);
    CHECK_THROWS_AS(model.forward(RealImage(16, 8)), ShapeError);
    CHECK_THROWS_AS(DigitalModel(10), ValidationError);
    RealImage bad(16, 16, 0.0);
    bad(3, 3) = std::nan("");
    CHECK_THROWS_AS(model.forward(bad), NumericError);
    nn::DigitalModel::Workspace ws;
    CHECK_THROWS_AS(model.backward(RealImage(16, 16), 2, ws, nullptr), ValidationError);
  }

  TEST_CASE("non-finite activations name the layer") {
    auto model = DigitalModel::init_params(1, 8);
    model.parameters()[4]->data[0] = std::numeric_limits<double>::infinity();
    std::mt19937_64 rng(2);
    try {
      model.forward(oracle::random_image(8, rng));
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("conv3") != std::string::npos);
    }
  }
}

TEST_SUITE("digital model backward") {
  TEST_CASE("even odds give ln 2") {
    DigitalModel model(8);
    nn::DigitalModel::Workspace ws;
    CHECK(model.backward(RealImage(8, 8, 0.0), 0, ws, nullptr) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }

  TEST_CASE("input gradient matches central differences") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      auto model = random_model(seed, 16);
      std::mt19937_64 rng(seed + 50);
      auto image = oracle::random_image(16, rng);
      const int label = static_cast<int>(seed % 2);
      nn::DigitalModel::Workspace ws;
      RealImage grad;
      model.backward(image, label, ws, &grad);
      std::uniform_int_distribution<std::size_t> pick(0, image.size() - 1);
      for (int k = 0; k < 5; ++k) {
        const std::size_t i = pick(rng);
        const double x0 = image[i];
        const double err = fd_rel_error(
            [&](double v) {
              image[i] = v;
              const double l = loss_of(model, image, label);
              image[i] = x0;
              return l;
            },
            x0, grad[i]);
        CHECK(err < 1e-4);
      }
    }
  }

  TEST_CASE("parameter gradients match central differences") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      auto model = random_model(seed + 10, 16);
      std::mt19937_64 rng(seed + 70);
      const auto image = oracle::random_image(16, rng);
      const int label = static_cast<int>(seed % 2);
      model.zero_grad();
      nn::DigitalModel::Workspace ws;
      model.backward(image, label, ws, nullptr);
      auto params = model.parameters();
      // Every tensor, plus 10 random entries overall.
      std::vector<std::pair<std::size_t, std::size_t>> picks;
      for (std::size_t t = 0; t < params.size(); ++t) {
        picks.emplace_back(t, rng() % params[t]->numel());
      }
      for (int k = 0; k < 10; ++k) {
        const std::size_t t = rng() % params.size();
        picks.emplace_back(t, rng() % params[t]->numel());
      }
      for (auto [t, i] : picks) {
        const double analytic = params[t]->grad[i];
        const double x0 = params[t]->data[i];
        const double err = fd_rel_error(
            [&](double v) {
              params[t]->data[i] = v;
              const double l = loss_of(model, image, label);
              params[t]->data[i] = x0;
              return l;
            },
            x0, analytic);
        INFO("tensor " << DigitalModel::parameter_names()[t] << " index " << i);
        CHECK(err < 1e-4);
      }
    }
  }

  TEST_CASE("gradients accumulate across samples") {
    auto model = random_model(4, 8);
    std::mt19937_64 rng(4);
    const auto a = oracle::random_image(8, rng);
    const auto b = oracle::random_image(8, rng);
    nn::DigitalModel::Workspace ws;
    model.zero_grad();
    model.backward(a, 0, ws, nullptr);
    const auto ga = model.parameters()[8]->grad;
    model.zero_grad();
    model.backward(b, 1, ws, nullptr);
    const auto gb = model.parameters()[8]->grad;
    model.zero_grad();
    model.backward(a, 0, ws, nullptr);
    model.backward(b, 1, ws, nullptr);
    const auto& gab = model.parameters()[8]->grad;
    for (std::size_t i = 0; i < gab.size(); ++i) CHECK(gab[i] == doctest::Approx(ga[i] + gb[i]));
  }

  TEST_CASE("max-pool ties route to the first position") {
    // Constant input: every conv output is a constant per channel, so each
    // pooling window is a four-way tie.
    DigitalModel model(8);
    auto params = model.parameters();
    for (std::size_t l = 0; l < 4; ++l) {
      std::fill(params[2 * l]->data.begin(), params[2 * l]->data.end(), 0.0);
      std::fill(params[2 * l + 1]->data.begin(), params[2 * l + 1]->data.end(), 1.0);
    }
    params[8]->data.assign(params[8]->numel(), 0.0);
    params[8]->data[0] = 1.0;  // hidden 0 reads channel 0, pooled (0,0)
    params[10]->data.assign(params[10]->numel(), 0.0);
    params[10]->data[0] = 1.0;
    model.zero_grad();
    nn::DigitalModel::Workspace ws;
    model.backward(RealImage(8, 8, 0.0), 0, ws, nullptr);
    // conv4 weight gradient for channel 0 <- channel 0 only sees the window
    // origin of the first pooled cell; with a constant act3 == 1 every tap
    // whose source is inside the image contributes exactly the routed value.
    // Top-left output pixel (0,0): taps (1..2, 1..2) are inside.
    const auto& dk = params[6]->grad;
    const double g = dk[4];
    CHECK(g != 0.0);
    CHECK(dk[0] == 0.0);
    CHECK(dk[1] == 0.0);
    CHECK(dk[2] == 0.0);
    CHECK(dk[3] == 0.0);
    CHECK(dk[6] == 0.0);
    CHECK(dk[5] == doctest::Approx(g));
    CHECK(dk[7] == doctest::Approx(g));
    CHECK(dk[8] == doctest::Approx(g));
    // Only one output pixel of conv4 channel 0 received gradient.
    CHECK(params[7]->grad[0] == doctest::Approx(g));
  }
}

TEST_SUITE("adam") {
  TEST_CASE("first step moves by the learning rate") {
    std::vector<double> p{0.0};
    const std::vector<double> g{1.0};
    nn::AdamState state;
    nn::adam_step(p, g, state, {.lr = 0.1});
    CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-7));
  }

  TEST_CASE("zero gradient leaves parameters unchanged") {
    std::vector<double> p{1.5, -2.0, 0.25};
    const std::vector<double> g(3, 0.0);
    nn::AdamState state;
    for (int i = 0; i < 5; ++i) nn::adam_step(p, g, state, {});
    CHECK(p == std::vector<double>{1.5, -2.0, 0.25});
  }

  TEST_CASE("errors") {
    std::vector<double> p{0.0};
    const std::vector<double> g{1.0};
    const std::vector<double> g2{1.0, 2.0};
    nn::AdamState state;
    CHECK_THROWS_AS(nn::adam_step(p, g, state, {.lr = 0.0}), ValidationError);
    CHECK_THROWS_AS(nn::adam_step(p, g, state, {.lr = -1.0}), ValidationError);
    CHECK_THROWS_AS(nn::adam_step(p, g2, state, {}), ShapeError);
  }

  TEST_CASE("identical runs give identical trajectories") {
    auto run = [] {
      auto model = DigitalModel::init_params(9, 8);
      nn::Adam adam({});
      std::mt19937_64 rng(9);
      nn::DigitalModel::Workspace ws;
      for (int step = 0; step < 5; ++step) {
        model.zero_grad();
        model.backward(oracle::random_image(8, rng), step % 2, ws, nullptr);
        adam.step(model.parameters());
      }
      return model.parameters()[8]->data;
    };
    CHECK(run() == run());
  }
}

TEST_SUITE("initialisation") {
  TEST_CASE("seeded and bounded") {
    const auto a = DigitalModel::init_params(1, 16);
    const auto b = DigitalModel::init_params(1, 16);
    const auto c = DigitalModel::init_params(2, 16);
    const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    bool differs = false;
    for (std::size_t t = 0; t < pa.size(); ++t) {
      CHECK(pa[t]->data == pb[t]->data);
      if (pa[t]->data != pc[t]->data) differs = true;
      const auto& shape = pa[t]->shape;
      if (shape.size() == 1) {
        CHECK(std::all_of(pa[t]->data.begin(), pa[t]->data.end(), [](double v) { return v == 0.0; }));
        continue;
      }
      const std::size_t fan_in = shape.size() == 4 ? shape[1] * 9 : shape[1];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      double worst = 0.0;
      for (double v : pa[t]->data) worst = std::max(worst, std::abs(v));
      CHECK(worst <= bound);
      CHECK(worst > 0.5 * bound);
    }
    CHECK(differs);
  }

  TEST_CASE("tensor invariants") {
    const auto model = DigitalModel::init_params(0, 64);
    for (const auto* t : model.parameters()) {
      std::size_t count = 1;
      for (auto d : t->shape) count *= d;
      CHECK(t->data.size() == count);
      CHECK(t->grad.size() == count);
    }
    CHECK(model.parameters()[8]->shape == std::vector<std::size_t>{64, 6 * 16 * 16});
  }
}

TEST_CASE("separable toy set is learned to 100%") {
  // Class 1 is brighter on the left half; class 0 on the right half.
  std::mt19937_64 rng(21);
  std::normal_distribution<double> noise(0.0, 0.2);
  std::vector<RealImage> images;
  std::vector<int> labels;
  for (int i = 0; i < 20; ++i) {
    const int label = i % 2;
    RealImage img(8, 8);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x)
        img(y, x) = ((x < 4) == (label == 1) ? 1.0 : 0.0) + noise(rng);
    images.push_back(img);
    labels.push_back(label);
  }
  auto model = DigitalModel::init_params(21, 8);
  nn::Adam adam({.lr = 1e-3});
  nn::DigitalModel::Workspace ws;
  int epoch_reached = -1;
  for (int epoch = 0; epoch < 200 && epoch_reached < 0; ++epoch) {
    for (std::size_t start = 0; start < images.size(); start += 4) {
      model.zero_grad();
      for (std::size_t i = start; i < start + 4; ++i) model.backward(images[i], labels[i], ws, nullptr);
      model.scale_grad(0.25);
      adam.step(model.parameters());
    }
    int correct = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto p = model.forward(images[i], ws);
      correct += (p[1] > p[0] ? 1 : 0) == labels[i];
    }
    if (correct == 20) epoch_reached = epoch;
  }
  MESSAGE("100% train accuracy at epoch " << epoch_reached);
  CHECK(epoch_reached >= 0);
}

TEST_SUITE("checkpoint") {
  const auto tmp_dir = [](const char* name) {
    auto dir = std::filesystem::temp_directory_path() / ("lsn_test_" + std::string(name));
    std::filesystem::remove_all(dir);
    return dir;
  };

  TEST_CASE("round trip at float32 precision") {
    const auto dir = tmp_dir("ckpt_roundtrip");
    const auto model = DigitalModel::init_params(3, 16);
    Checkpoint ck;
    ck.metadata["note"] = "x";
    append_model(ck, model);
    ck.blobs.push_back({"extra", {2}, {0.5, -1.25}});
    write_checkpoint(ck, dir);
    const auto back = read_checkpoint(dir);
    CHECK(back.metadata["note"] == "x");
    CHECK(back.find("extra").values == std::vector<double>{0.5, -1.25});
    DigitalModel restored(16);
    restore_model(back, restored);
    const auto pa = model.parameters();
    const auto pb = restored.parameters();
    for (std::size_t t = 0; t < pa.size(); ++t)
      for (std::size_t i = 0; i < pa[t]->numel(); ++i)
        CHECK(pb[t]->data[i] == static_cast<double>(static_cast<float>(pa[t]->data[i])));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("corruption and version are detected") {
    const auto dir = tmp_dir("ckpt_corrupt");
    Checkpoint ck;
    ck.blobs.push_back({"a", {3}, {1.0, 2.0, 3.0}});
    write_checkpoint(ck, dir);
    auto bytes = io::read_bytes(dir / "a.f32");
    bytes[0] ^= 0xFF;
    io::write_bytes(dir / "a.f32", bytes);
    CHECK_THROWS_AS(read_checkpoint(dir), CorruptDatasetError);

    write_checkpoint(ck, dir);
    auto manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
    manifest["version"] = 99;
    io::write_text(dir / "manifest.json", manifest.dump());
    CHECK_THROWS_AS(read_checkpoint(dir), CorruptDatasetError);
    manifest.erase("version");
    io::write_text(dir / "manifest.json", manifest.dump());
    CHECK_THROWS_AS(read_checkpoint(dir), CorruptDatasetError);

    CHECK_THROWS_AS(read_checkpoint(dir / "missing"), NotFoundError);
    CHECK_THROWS_AS(ck.find("b"), NotFoundError);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("shape mismatch on restore") {
    const auto dir = tmp_dir("ckpt_shape");
    Checkpoint ck;
    append_model(ck, DigitalModel(16));
    DigitalModel other(8);
    CHECK_THROWS_AS(restore_model(ck, other), ShapeError);
  }
}
