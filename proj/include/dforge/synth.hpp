#pragma once

// Procedural "identities" and the four splice-style forgeries built from them.
//
// A fake is made by rendering the target identity and pasting the source
// identity's face interior into the target's central face region, then
// post-processing the paste with one of four method-specific styles.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dforge::synth {

enum class ForgeryMethod { none, blend_hue, boundary_splice, noise_texture, warp_lowfreq };

std::string_view method_name(ForgeryMethod m);
ForgeryMethod parse_method(std::string_view name);
const std::array<ForgeryMethod, 4>& all_forgery_methods();

using Rgb = std::array<float, 3>;

// Geometry slots, all in normalized image coordinates.
enum GeometrySlot : int {
  kFaceCx,
  kFaceCy,
  kFaceRx,
  kFaceRy,
  kEyeDy,     // eye height above face centre
  kEyeDx,     // half distance between eyes
  kEyeR,
  kMouthDy,   // mouth depth below face centre
  kMouthRx,
  kMouthRy,
  kTexAngle,
  kGeometrySize
};

struct IdentitySpec {
  uint64_t seed = 0;
  std::array<Rgb, 3> palette{};  // skin, background, features
  std::vector<float> geometry;   // kGeometrySize entries
  float texture_freq = 4.0f;

  static IdentitySpec from_seed(uint64_t seed);
  bool operator==(const IdentitySpec&) const = default;
};

// Per-frame jitter so frames of one group are not identical.
struct Pose {
  float dx = 0.0f;
  float dy = 0.0f;
  float scale = 1.0f;
  float brightness = 0.0f;

  static Pose jitter(uint64_t seed);
};

// size x size RGB, row-major HWC, values in [0,1].
struct Image {
  int size = 0;
  std::vector<float> data;

  Image() = default;
  explicit Image(int s) : size(s), data(static_cast<size_t>(s) * s * 3, 0.0f) {}
  float& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * size + x) * 3 + c]; }
  float at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * size + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

inline constexpr int kMinImageSize = 16;
// Radius of the pasted region relative to the face ellipse.
inline constexpr float kRegionScale = 0.85f;

Image render_identity(const IdentitySpec& spec, int size, const Pose& pose = {});

// 1 inside the central face region that forgeries replace, else 0.
std::vector<uint8_t> face_region_mask(const IdentitySpec& target, int size, const Pose& pose = {});

Image forge(const IdentitySpec& source, const IdentitySpec& target, ForgeryMethod method, int size,
            uint64_t noise_seed, const Pose& pose = {});

// Mean absolute per-channel difference.
double mean_abs_diff(const Image& a, const Image& b);

void add_sensor_noise(Image& img, uint64_t seed, float sigma);

}  // namespace dforge::synth
