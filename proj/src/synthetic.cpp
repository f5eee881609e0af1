#include "rthare/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace rthare {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Blob {
  double x, y, vx, vy, r;
  double color[3];
};

void paint_background(float* img, std::size_t H, std::size_t W, const double base[3], double tilt) {
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        img[(c * H + y) * W + x] = static_cast<float>(base[c] + tilt * (static_cast<double>(x) / W - 0.5));
      }
    }
  }
}

void paint_blob(float* img, std::size_t H, std::size_t W, double cx, double cy, double r, const double color[3],
                double stripe) {
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double d2 = dx * dx + dy * dy;
      if (d2 > r * r) continue;
      const double shade = stripe > 0 ? 0.6 + 0.4 * std::cos(2 * kPi * static_cast<double>(y) / stripe) : 1.0;
      for (std::size_t c = 0; c < 3; ++c) img[(c * H + y) * W + x] = static_cast<float>(color[c] * shade);
    }
  }
}

void add_noise_and_clip(float* img, std::size_t n, double noise, Rng& rng) {
  for (std::size_t i = 0; i < n; ++i) {
    double v = img[i] + (noise > 0 ? noise * rng.normal() : 0.0);
    img[i] = static_cast<float>(std::clamp(std::round(v), 0.0, 255.0));
  }
}

double wrap(double v, double n) { return v - n * std::floor(v / n); }

}  // namespace

Tensor synthetic_clip(std::size_t K, std::size_t H, std::size_t W, std::uint64_t seed) {
  Rng rng(seed);
  const double base[3] = {40 + 120 * rng.uniform(), 40 + 120 * rng.uniform(), 40 + 120 * rng.uniform()};
  const double tilt = 60 * (rng.uniform() - 0.5);
  const std::size_t nblobs = 1 + static_cast<std::size_t>(rng.next() % 3);
  std::vector<Blob> blobs;
  for (std::size_t b = 0; b < nblobs; ++b) {
    Blob s{};
    s.x = rng.uniform() * W;
    s.y = rng.uniform() * H;
    s.vx = 4 * (rng.uniform() - 0.5);
    s.vy = 4 * (rng.uniform() - 0.5);
    s.r = 2 + rng.uniform() * std::min(H, W) / 5.0;
    for (double& c : s.color) c = 255 * rng.uniform();
    blobs.push_back(s);
  }
  Tensor clip(Shape{K, 3, H, W});
  const std::size_t frame = 3 * H * W;
  for (std::size_t k = 0; k < K; ++k) {
    float* img = clip.raw() + k * frame;
    paint_background(img, H, W, base, tilt);
    for (const auto& s : blobs) {
      paint_blob(img, H, W, wrap(s.x + s.vx * k, W), wrap(s.y + s.vy * k, H), s.r, s.color, 0);
    }
    add_noise_and_clip(img, frame, 3.0, rng);
  }
  return clip;
}

std::vector<std::pair<std::string, Tensor>> synthetic_clips(std::size_t count, std::size_t K, std::size_t H,
                                                            std::size_t W, std::uint64_t seed) {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  char id[32];
  for (std::size_t i = 0; i < count; ++i) {
    std::snprintf(id, sizeof id, "clip_%06zu", i);
    out.emplace_back(id, synthetic_clip(K, H, W, seed * 1000003ULL + i));
  }
  return out;
}

StreamData synthetic_stream(const SyntheticStreamConfig& cfg) {
  if (cfg.H == 0 || cfg.W == 0 || cfg.classes == 0 || cfg.segments == 0 || cfg.segment_frames == 0) {
    throw ConfigError("synthetic stream: sizes must be >= 1");
  }
  if (!(cfg.fps > 0)) throw ConfigError("synthetic stream: fps must be > 0");
  Rng rng(cfg.seed);
  StreamData s;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < cfg.classes; ++c) names.push_back("action_" + std::to_string(c));
  s.classes = LabelSet(names);
  const double H = static_cast<double>(cfg.H), W = static_cast<double>(cfg.W);
  double phase = 0;
  std::size_t t = 0;
  for (std::size_t seg = 0; seg < cfg.segments; ++seg) {
    const std::size_t c = seg % cfg.classes;
    // class-specific look and motion
    const double hue = 2 * kPi * static_cast<double>(c) / static_cast<double>(cfg.classes);
    const double color[3] = {128 + 110 * std::cos(hue), 128 + 110 * std::cos(hue + 2 * kPi / 3),
                             128 + 110 * std::cos(hue + 4 * kPi / 3)};
    const double bg[3] = {96 + 40 * std::cos(hue + kPi), 96 + 40 * std::cos(hue + kPi + 2 * kPi / 3),
                          96 + 40 * std::cos(hue + kPi + 4 * kPi / 3)};
    const double radius = std::min(H, W) * (0.18 + 0.08 * static_cast<double>(c % 3));
    const double speed = 1.0 + 1.5 * static_cast<double>(c);
    const double stripe = c % 2 ? 4.0 : 0.0;
    for (std::size_t f = 0; f < cfg.segment_frames; ++f, ++t) {
      phase += speed;
      double cx, cy;
      if (c % 2 == 0) {
        cx = wrap(phase, W);
        cy = H / 2 + H / 6 * std::sin(phase / 7);
      } else {
        cx = W / 2 + W / 4 * std::sin(phase / 5);
        cy = wrap(phase * 0.7, H);
      }
      Tensor img(Shape{3, cfg.H, cfg.W});
      paint_background(img.raw(), cfg.H, cfg.W, bg, 20);
      paint_blob(img.raw(), cfg.H, cfg.W, cx, cy, radius, color, stripe);
      add_noise_and_clip(img.raw(), img.size(), cfg.noise, rng);
      s.frames.push_back({std::move(img), static_cast<double>(t) * 1000.0 / cfg.fps});
      s.labels.push_back(static_cast<int>(c));
    }
  }
  return s;
}

}  // namespace rthare
