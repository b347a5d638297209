// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic moving-shapes video with dense labels, and segmentation metrics.
//
// Shapes translate rigidly with constant integer velocity over a static
// textured background. Positions wrap around the canvas. Class 0 is the
// background; shape classes are 1..K-1 with a fixed colour and silhouette per
// class. Motion fields are stored per frame as [2, H, W] with channel 0 the
// vertical and channel 1 the horizontal displacement (pixels moved since the
// previous frame) of the content now at each pixel. Frame 0 has zero motion.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "dd/tensor.hpp"

namespace dd {

struct SceneSpec {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;
  std::size_t num_shapes = 3;
  std::size_t num_classes = 4;  // including background
  std::array<int, 2> vx_range{-1, 1};  // inclusive, pixels per frame
  std::array<int, 2> vy_range{-1, 1};
  std::size_t min_size = 4;
  std::size_t max_size = 7;
  double noise = 0.05;               // per-frame appearance noise std
  double background_texture = 0.15;  // amplitude of the static texture
  // Without occlusion, shapes are placed apart and share one velocity so they
  // never overlap.
  bool allow_occlusion = true;

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static SceneSpec from_json(const nlohmann::json& j);  // rejects unknown keys
};

struct VideoClip {
  std::size_t channels = 0, height = 0, width = 0, num_classes = 0;
  std::vector<Tensor> frames;             // [1, C, H, W] each
  std::vector<std::vector<int>> labels;   // H * W each
  std::vector<Tensor> motion;             // [2, H, W] each
  std::uint64_t seed = 0;

  std::size_t length() const { return frames.size(); }
  void validate() const;  // throws FormatError
};

VideoClip generate_clip(const SceneSpec& spec, std::size_t length, std::uint64_t seed);

// Per-clip seeds derived from a base seed.
std::uint64_t clip_seed(std::uint64_t base, std::size_t index);
std::vector<VideoClip> generate_dataset(const SceneSpec& spec, std::size_t count,
                                        std::size_t length, std::uint64_t base_seed);

// Mean over classes of TP / (TP + FP + FN), skipping classes absent from both
// maps and pixels whose label equals ignore_label. Returns 1 when nothing is
// counted.
double miou(std::span<const int> predictions, std::span<const int> labels,
            std::size_t num_classes, int ignore_label = -1);

// Fraction of counted pixels predicted correctly.
double pixel_accuracy(std::span<const int> predictions, std::span<const int> labels,
                      int ignore_label = -1);

// Moves the previous prediction along the motion field: out[p] = prev[p - m(p)],
// with ignore_label where the source falls outside the canvas.
std::vector<int> warp_labels(std::span<const int> previous, const Tensor& motion,
                             std::size_t height, std::size_t width, int ignore_label = -1);

// Mean over consecutive pairs of the IoU between prediction t and the warped
// prediction t-1. motion[t] is used for the pair (t-1, t); motion[0] is unused.
double temporal_consistency(const std::vector<std::vector<int>>& predictions,
                            const std::vector<Tensor>& motion, std::size_t height,
                            std::size_t width, std::size_t num_classes);

// Per-pixel argmax over the class channel of [1, K, H, W] logits.
std::vector<int> argmax_labels(const Tensor& logits);

// Binary container: little-endian u32 magic, version, T, C, H, W, K, then the
// f64 frame planes, i32 label planes and f64 motion planes in frame order,
// then the u64 seed.
void write_clip(const std::filesystem::path& path, const VideoClip& clip);
VideoClip read_clip(const std::filesystem::path& path);

inline constexpr std::uint32_t kClipMagic = 0x50494c43;  // "CLIP"
inline constexpr std::uint32_t kClipVersion = 1;

// Writes clip_XXXX.bin files and manifest.json under dir; returns the manifest.
nlohmann::json write_dataset(const std::filesystem::path& dir, const SceneSpec& spec,
                             std::size_t count, std::size_t length, std::uint64_t base_seed);
std::vector<VideoClip> read_dataset(const std::filesystem::path& dir);

}  // namespace dd
