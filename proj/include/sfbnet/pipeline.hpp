#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sfbnet/loss.hpp"
#include "sfbnet/model.hpp"

namespace sfbnet {

enum Tissue : std::int32_t { background = 0, rv = 1, myo = 2, lv = 3 };
inline constexpr int kTissueClasses = 4;

/// One 2D slice: 1 x H x W intensities, H x W labels, pixel spacing in mm.
struct Sample {
  int height = 0;
  int width = 0;
  std::vector<float> image;
  std::vector<std::int32_t> labels;
  double spacing_x = 1.0;
  double spacing_y = 1.0;

  Sample() = default;
  Sample(int h, int w)
      : height(h),
        width(w),
        image(static_cast<std::size_t>(h) * w, 0.0f),
        labels(static_cast<std::size_t>(h) * w, 0) {}

  std::size_t index(int y, int x) const noexcept { return static_cast<std::size_t>(y) * width + x; }
  /// Throws DataError when extents, buffer sizes or spacing are inconsistent.
  void validate() const;
  bool operator==(const Sample&) const = default;
};

/// Geometry and appearance of a synthetic short-axis cardiac slice: an
/// elliptic LV cavity, a myocardial ring of fixed thickness around it and a
/// crescent-shaped RV cavity beside the ring.
struct PhantomSpec {
  std::uint64_t seed = 0;
  int height = 64;
  int width = 64;
  double lv_cy = 32.0, lv_cx = 36.0;
  double lv_ry = 9.0, lv_rx = 8.0;
  double myo_thickness = 4.0;
  double rv_radius = 11.0;
  double rv_angle = 3.14159265358979;  // direction of the RV from the LV centre, radians
  double rv_offset = 15.0;             // distance between LV and RV disk centres
  std::array<double, kTissueClasses> intensity{0.15, 0.75, 0.35, 0.95};
  double noise_sigma = 0.05;
  double spacing = 1.25;

  /// Random anatomy and contrast, deterministic in `seed`, sized to the image.
  static PhantomSpec random(std::uint64_t seed, int height, int width);
};

/// Deterministic per seed; the image is z-scored. Throws DataError if the
/// anatomy does not fit inside the image.
Sample generate_phantom(const PhantomSpec& spec);

/// Resamples to the target spacing: bilinear for the image, nearest for
/// labels. New extents are round(old * old_spacing / target_spacing).
Sample resample_xy(const Sample& sample, double target_spacing_x, double target_spacing_y);

enum class Interp { nearest, bilinear };

/// Rotation about the image centre, isotropic scaling and mirroring, with
/// border clamping. Maps output pixel centres back into the source.
struct GeometricTransform {
  double rotation = 0.0;  // radians
  double scale = 1.0;
  bool flip_x = false;
  bool flip_y = false;

  bool identity() const noexcept { return rotation == 0.0 && scale == 1.0 && !flip_x && !flip_y; }
  std::vector<float> apply(const std::vector<float>& plane, int height, int width,
                           Interp interp) const;
  std::vector<std::int32_t> apply_labels(const std::vector<std::int32_t>& labels, int height,
                                         int width) const;
};

struct AugmentOptions {
  double p_rotation = 0.2, max_rotation_deg = 15.0;
  double p_scale = 0.2, min_scale = 0.85, max_scale = 1.25;
  double p_gamma = 0.3, min_gamma = 0.7, max_gamma = 1.4;
  double p_brightness = 0.15, min_brightness = 0.75, max_brightness = 1.25;
  double p_mirror = 0.5;  // per axis
  double p_contrast = 0.15, min_contrast = 0.75, max_contrast = 1.25;
  double p_low_res = 0.25, min_low_res = 1.0, max_low_res = 2.0;
  double p_noise = 0.15, max_noise_sigma = 0.1;
  double p_blur = 0.2, min_blur_sigma = 0.5, max_blur_sigma = 1.0;
};

/// The drawn parameters of one augmentation. Zero/one values mean "off".
struct AugmentParams {
  GeometricTransform geometry;
  double gamma = 1.0;
  double brightness = 1.0;
  double contrast = 1.0;
  double low_res = 1.0;
  double noise_sigma = 0.0;
  double blur_sigma = 0.0;
  std::uint64_t noise_seed = 0;
};

AugmentParams draw_augmentation(std::uint64_t seed, const AugmentOptions& options = {});
Sample apply_augmentation(const Sample& sample, const AugmentParams& params);
/// draw_augmentation followed by apply_augmentation.
Sample augment(const Sample& sample, std::uint64_t seed, const AugmentOptions& options = {});

/// Reverses the row (flip_y) and/or column (flip_x) order of every H x W
/// plane of an N x C x H x W tensor. Plain data copy, not recorded.
template <typename T>
Tensor<T> flip_planes(const Tensor<T>& x, bool flip_x, bool flip_y);

/// Channel softmax of the full-resolution output (eval mode, no graph).
template <typename T>
Tensor<T> predict_probabilities(const SFBNet<T>& model, const Tensor<T>& image);

/// Mean softmax over identity, x-flip, y-flip and xy-flip inputs, each
/// un-flipped before averaging.
template <typename T>
Tensor<T> tta_mirror_predict(const SFBNet<T>& model, const Tensor<T>& image);

/// Keeps the largest 4-connected component of the foreground (all classes
/// merged) of each H x W map; ties go to the component met first in
/// row-major scan order. Surviving pixels keep their class.
LabelMap largest_component_filter(const LabelMap& labels);

/// Stacks samples into an N x 1 x H x W image tensor and an N x H x W label map.
template <typename T>
Tensor<T> stack_images(const std::vector<const Sample*>& samples);
LabelMap stack_labels(const std::vector<const Sample*>& samples);

// RAWT files: one JSON header line, '\n', then the little-endian blob.
struct RawtHeader {
  std::string dtype;  // "f32" or "i32"
  std::vector<std::int64_t> shape;
  double spacing_x = 1.0;
  double spacing_y = 1.0;
};

void write_rawt(const std::filesystem::path& path, const RawtHeader& header, const void* data,
                std::size_t bytes);
RawtHeader read_rawt_header(const std::filesystem::path& path);
std::vector<float> read_rawt_f32(const std::filesystem::path& path, RawtHeader* header = nullptr);
std::vector<std::int32_t> read_rawt_i32(const std::filesystem::path& path,
                                        RawtHeader* header = nullptr);

/// Writes case_####.img.rawt and case_####.lbl.rawt under `dir`.
void save_sample(const std::filesystem::path& dir, int index, const Sample& sample);
Sample load_sample(const std::filesystem::path& image_path, const std::filesystem::path& label_path);
/// Loads every case_####.img.rawt (with its label file) in `dir`, in name order.
std::vector<Sample> load_split(const std::filesystem::path& dir);

}  // namespace sfbnet
