#include "dforge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dforge/error.hpp"
#include "dforge/rng.hpp"

namespace dforge::synth {

namespace {

constexpr float kTwoPi = 2.0f * std::numbers::pi_v<float>;

float uniform(Rng& rng, float lo, float hi) {
  return std::uniform_real_distribution<float>(lo, hi)(rng);
}

// Anti-aliased coverage of an axis-aligned ellipse at (u, v).
float ellipse_coverage(float u, float v, float cx, float cy, float rx, float ry, float px) {
  const float du = (u - cx) / rx, dv = (v - cy) / ry;
  const float r = std::sqrt(du * du + dv * dv);
  const float dist = (r - 1.0f) * std::min(rx, ry);
  return std::clamp(0.5f - dist / px, 0.0f, 1.0f);
}

Rgb lerp(const Rgb& a, const Rgb& b, float t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

// Colour of the identity's scene at scene coordinates (u, v).
Rgb shade(const IdentitySpec& s, float u, float v, float px) {
  const auto& g = s.geometry;
  const Rgb& bg0 = s.palette[1];
  const float shade_bg = 0.8f + 0.35f * v;
  Rgb c{bg0[0] * shade_bg, bg0[1] * shade_bg, bg0[2] * shade_bg};

  const float theta = g[kTexAngle];
  const float tex =
      1.0f + 0.1f * std::sin(kTwoPi * s.texture_freq * (u * std::cos(theta) + v * std::sin(theta)));
  const Rgb skin{s.palette[0][0] * tex, s.palette[0][1] * tex, s.palette[0][2] * tex};
  c = lerp(c, skin, ellipse_coverage(u, v, g[kFaceCx], g[kFaceCy], g[kFaceRx], g[kFaceRy], px));

  const Rgb eye{s.palette[2][0] * 0.35f, s.palette[2][1] * 0.35f, s.palette[2][2] * 0.35f};
  for (float side : {-1.0f, 1.0f}) {
    const float cov = ellipse_coverage(u, v, g[kFaceCx] + side * g[kEyeDx], g[kFaceCy] - g[kEyeDy],
                                       g[kEyeR], g[kEyeR] * 0.8f, px);
    c = lerp(c, eye, cov);
  }
  c = lerp(c, s.palette[2],
           ellipse_coverage(u, v, g[kFaceCx], g[kFaceCy] + g[kMouthDy], g[kMouthRx], g[kMouthRy],
                            px));
  return c;
}

// Source scene point that lands on target scene point (u, v) once the source
// face is aligned onto the target face ellipse.
std::pair<float, float> align_to_source(const IdentitySpec& src, const IdentitySpec& tgt, float u,
                                        float v) {
  const auto& s = src.geometry;
  const auto& t = tgt.geometry;
  return {s[kFaceCx] + (u - t[kFaceCx]) * s[kFaceRx] / t[kFaceRx],
          s[kFaceCy] + (v - t[kFaceCy]) * s[kFaceRy] / t[kFaceRy]};
}

float region_radius(const IdentitySpec& tgt, float u, float v) {
  const auto& g = tgt.geometry;
  const float du = (u - g[kFaceCx]) / (kRegionScale * g[kFaceRx]);
  const float dv = (v - g[kFaceCy]) / (kRegionScale * g[kFaceRy]);
  return std::sqrt(du * du + dv * dv);
}

float soft_region(const IdentitySpec& tgt, float u, float v) {
  return std::clamp((1.0f - region_radius(tgt, u, v)) / 0.15f, 0.0f, 1.0f);
}

struct Frame {
  int size;
  Pose pose;
  float px;

  // Scene coordinates of pixel (x, y) under the pose.
  std::pair<float, float> scene(int x, int y) const {
    const float u = (static_cast<float>(x) + 0.5f) / static_cast<float>(size);
    const float v = (static_cast<float>(y) + 0.5f) / static_cast<float>(size);
    return {(u - 0.5f - pose.dx) / pose.scale + 0.5f, (v - 0.5f - pose.dy) / pose.scale + 0.5f};
  }
};

Frame make_frame(int size, const Pose& pose) {
  if (size < kMinImageSize)
    throw InvalidArgument("image size " + std::to_string(size) + " is below the minimum of " +
                          std::to_string(kMinImageSize));
  return Frame{size, pose, 1.0f / (static_cast<float>(size) * pose.scale)};
}

void put(Image& img, int y, int x, const Rgb& c, float brightness) {
  for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = std::clamp(c[ch] + brightness, 0.0f, 1.0f);
}

Rgb hue_rotate(const Rgb& c, float angle) {
  const float ca = std::cos(angle), sa = std::sin(angle);
  const float k = (1.0f - ca) / 3.0f;
  const float s = std::sqrt(1.0f / 3.0f) * sa;
  return {(ca + k) * c[0] + (k - s) * c[1] + (k + s) * c[2],
          (k + s) * c[0] + (ca + k) * c[1] + (k - s) * c[2],
          (k - s) * c[0] + (k + s) * c[1] + (ca + k) * c[2]};
}

// Blur hard-pasted pixels whose 5x5 neighbourhood straddles the region edge.
Image blur_seam(const Image& pasted, const std::vector<uint8_t>& mask) {
  constexpr int kRadius = 2;
  static const std::array<float, 5> kKernel = {0.0545f, 0.2442f, 0.4026f, 0.2442f, 0.0545f};
  const int n = pasted.size;
  Image out = pasted;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      bool in = false, outside = false;
      for (int dy = -kRadius; dy <= kRadius; ++dy)
        for (int dx = -kRadius; dx <= kRadius; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= n || xx < 0 || xx >= n) continue;
          (mask[static_cast<size_t>(yy) * n + xx] ? in : outside) = true;
        }
      if (!(in && outside)) continue;
      for (int ch = 0; ch < 3; ++ch) {
        float acc = 0.0f, wsum = 0.0f;
        for (int dy = -kRadius; dy <= kRadius; ++dy)
          for (int dx = -kRadius; dx <= kRadius; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= n || xx < 0 || xx >= n) continue;
            const float w = kKernel[dy + kRadius] * kKernel[dx + kRadius];
            acc += w * pasted.at(yy, xx, ch);
            wsum += w;
          }
        out.at(y, x, ch) = acc / wsum;
      }
    }
  return out;
}

}  // namespace

std::string_view method_name(ForgeryMethod m) {
  switch (m) {
    case ForgeryMethod::none: return "none";
    case ForgeryMethod::blend_hue: return "blend_hue";
    case ForgeryMethod::boundary_splice: return "boundary_splice";
    case ForgeryMethod::noise_texture: return "noise_texture";
    case ForgeryMethod::warp_lowfreq: return "warp_lowfreq";
  }
  return "none";
}

ForgeryMethod parse_method(std::string_view name) {
  for (auto m : {ForgeryMethod::none, ForgeryMethod::blend_hue, ForgeryMethod::boundary_splice,
                 ForgeryMethod::noise_texture, ForgeryMethod::warp_lowfreq})
    if (method_name(m) == name) return m;
  throw InvalidArgument("unknown forgery method '" + std::string(name) + "'");
}

const std::array<ForgeryMethod, 4>& all_forgery_methods() {
  static const std::array<ForgeryMethod, 4> kAll = {
      ForgeryMethod::blend_hue, ForgeryMethod::boundary_splice, ForgeryMethod::noise_texture,
      ForgeryMethod::warp_lowfreq};
  return kAll;
}

IdentitySpec IdentitySpec::from_seed(uint64_t seed) {
  Rng rng(derive_seed(seed, "identity"));
  IdentitySpec s;
  s.seed = seed;
  s.palette[0] = {uniform(rng, 0.45f, 0.95f), uniform(rng, 0.3f, 0.8f), uniform(rng, 0.2f, 0.7f)};
  s.palette[1] = {uniform(rng, 0.05f, 0.6f), uniform(rng, 0.05f, 0.6f), uniform(rng, 0.05f, 0.6f)};
  s.palette[2] = {uniform(rng, 0.1f, 0.9f), uniform(rng, 0.1f, 0.9f), uniform(rng, 0.1f, 0.9f)};
  s.geometry.resize(kGeometrySize);
  auto& g = s.geometry;
  g[kFaceCx] = uniform(rng, 0.46f, 0.54f);
  g[kFaceCy] = uniform(rng, 0.48f, 0.56f);
  g[kFaceRx] = uniform(rng, 0.26f, 0.34f);
  g[kFaceRy] = uniform(rng, 0.32f, 0.40f);
  g[kEyeDy] = uniform(rng, 0.06f, 0.12f);
  g[kEyeDx] = uniform(rng, 0.08f, 0.13f);
  g[kEyeR] = uniform(rng, 0.03f, 0.05f);
  g[kMouthDy] = uniform(rng, 0.10f, 0.17f);
  g[kMouthRx] = uniform(rng, 0.07f, 0.13f);
  g[kMouthRy] = uniform(rng, 0.02f, 0.045f);
  g[kTexAngle] = uniform(rng, 0.0f, std::numbers::pi_v<float>);
  s.texture_freq = uniform(rng, 2.0f, 6.0f);
  return s;
}

Pose Pose::jitter(uint64_t seed) {
  Rng rng(derive_seed(seed, "pose"));
  Pose p;
  p.dx = uniform(rng, -0.03f, 0.03f);
  p.dy = uniform(rng, -0.03f, 0.03f);
  p.scale = uniform(rng, 0.95f, 1.05f);
  p.brightness = uniform(rng, -0.05f, 0.05f);
  return p;
}

Image render_identity(const IdentitySpec& spec, int size, const Pose& pose) {
  const Frame f = make_frame(size, pose);
  Image img(size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const auto [u, v] = f.scene(x, y);
      put(img, y, x, shade(spec, u, v, f.px), pose.brightness);
    }
  return img;
}

std::vector<uint8_t> face_region_mask(const IdentitySpec& target, int size, const Pose& pose) {
  const Frame f = make_frame(size, pose);
  std::vector<uint8_t> mask(static_cast<size_t>(size) * size, 0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const auto [u, v] = f.scene(x, y);
      mask[static_cast<size_t>(y) * size + x] = region_radius(target, u, v) <= 1.0f ? 1 : 0;
    }
  return mask;
}

Image forge(const IdentitySpec& source, const IdentitySpec& target, ForgeryMethod method, int size,
            uint64_t noise_seed, const Pose& pose) {
  if (method == ForgeryMethod::none)
    throw InvalidArgument("forge: method 'none' is not a forgery; render real images instead");
  const Frame f = make_frame(size, pose);
  Rng rng(derive_seed(noise_seed, "forge", static_cast<uint64_t>(method)));
  Image img(size);

  auto source_at = [&](float u, float v) {
    const auto [su, sv] = align_to_source(source, target, u, v);
    return shade(source, su, sv, f.px);
  };

  switch (method) {
    case ForgeryMethod::blend_hue: {
      constexpr float kAlpha = 0.8f, kHue = 0.35f;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const auto [u, v] = f.scene(x, y);
          const Rgb base = shade(target, u, v, f.px);
          const float m = kAlpha * soft_region(target, u, v);
          put(img, y, x, lerp(base, hue_rotate(source_at(u, v), kHue), m), pose.brightness);
        }
      break;
    }
    case ForgeryMethod::boundary_splice: {
      const auto mask = face_region_mask(target, size, pose);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const auto [u, v] = f.scene(x, y);
          const bool inside = mask[static_cast<size_t>(y) * size + x] != 0;
          put(img, y, x, inside ? source_at(u, v) : shade(target, u, v, f.px), pose.brightness);
        }
      img = blur_seam(img, mask);
      break;
    }
    case ForgeryMethod::noise_texture: {
      struct Wave { float fx, fy, phase; };
      std::array<Wave, 6> waves{};
      for (auto& w : waves) {
        const float freq = uniform(rng, 8.0f, 16.0f);
        const float dir = uniform(rng, 0.0f, kTwoPi);
        w = {freq * std::cos(dir), freq * std::sin(dir), uniform(rng, 0.0f, kTwoPi)};
      }
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const auto [u, v] = f.scene(x, y);
          const float m = soft_region(target, u, v);
          float noise = 0.0f;
          for (const auto& w : waves) noise += 0.025f * std::sin(kTwoPi * (w.fx * u + w.fy * v) + w.phase);
          Rgb c = lerp(shade(target, u, v, f.px), source_at(u, v), m);
          for (auto& ch : c) ch += m * noise;
          put(img, y, x, c, pose.brightness);
        }
      break;
    }
    case ForgeryMethod::warp_lowfreq: {
      const float amp = uniform(rng, 0.012f, 0.02f);
      const float f1 = uniform(rng, 1.0f, 2.5f), f2 = uniform(rng, 1.0f, 2.5f);
      const float p1 = uniform(rng, 0.0f, kTwoPi), p2 = uniform(rng, 0.0f, kTwoPi);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const auto [u, v] = f.scene(x, y);
          const float m = soft_region(target, u, v);
          const float wu = u + amp * std::sin(kTwoPi * f1 * v + p1);
          const float wv = v + amp * std::sin(kTwoPi * f2 * u + p2);
          put(img, y, x, lerp(shade(target, u, v, f.px), source_at(wu, wv), m), pose.brightness);
        }
      break;
    }
    case ForgeryMethod::none: break;
  }
  return img;
}

double mean_abs_diff(const Image& a, const Image& b) {
  if (a.size != b.size) throw InvalidArgument("mean_abs_diff: image sizes differ");
  double acc = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) acc += std::abs(a.data[i] - b.data[i]);
  return a.data.empty() ? 0.0 : acc / static_cast<double>(a.data.size());
}

void add_sensor_noise(Image& img, uint64_t seed, float sigma) {
  Rng rng(derive_seed(seed, "sensor"));
  std::normal_distribution<float> dist(0.0f, sigma);
  for (auto& v : img.data) v = std::clamp(v + dist(rng), 0.0f, 1.0f);
}

}  // namespace dforge::synth
