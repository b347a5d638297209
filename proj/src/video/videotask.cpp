// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "dd/videotask.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "dd/errors.hpp"

namespace dd {

// ------------------------------------------------------------------ SceneSpec

void SceneSpec::validate() const {
  if (num_classes < 2) throw ConfigError("scene needs at least two classes");
  if (channels == 0) throw ConfigError("scene needs at least one channel");
  if (height < 2 || width < 2) throw ConfigError("scene canvas must be at least 2x2");
  if (min_size == 0 || min_size > max_size || max_size > std::min(height, width)) {
    throw ConfigError("shape sizes must satisfy 1 <= min_size <= max_size <= canvas");
  }
  if (vx_range[0] > vx_range[1] || vy_range[0] > vy_range[1]) {
    throw ConfigError("velocity ranges must be ordered [lo, hi]");
  }
  const int bound = static_cast<int>(std::min(height, width) / 4);
  for (int v : {vx_range[0], vx_range[1], vy_range[0], vy_range[1]}) {
    if (std::abs(v) > bound) {
      throw ConfigError("speeds are limited to a quarter of the canvas (" +
                        std::to_string(bound) + " px/frame)");
    }
  }
  if (!(noise >= 0.0) || !(background_texture >= 0.0)) {
    throw ConfigError("noise and texture amplitudes must be non-negative");
  }
}

nlohmann::json SceneSpec::to_json() const {
  return {{"height", height},
          {"width", width},
          {"channels", channels},
          {"num_shapes", num_shapes},
          {"num_classes", num_classes},
          {"vx_range", vx_range},
          {"vy_range", vy_range},
          {"min_size", min_size},
          {"max_size", max_size},
          {"noise", noise},
          {"background_texture", background_texture},
          {"allow_occlusion", allow_occlusion}};
}

SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("scene must be a JSON object");
  SceneSpec s;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "height") s.height = value.get<std::size_t>();
      else if (key == "width") s.width = value.get<std::size_t>();
      else if (key == "channels") s.channels = value.get<std::size_t>();
      else if (key == "num_shapes") s.num_shapes = value.get<std::size_t>();
      else if (key == "num_classes") s.num_classes = value.get<std::size_t>();
      else if (key == "vx_range") s.vx_range = value.get<std::array<int, 2>>();
      else if (key == "vy_range") s.vy_range = value.get<std::array<int, 2>>();
      else if (key == "min_size") s.min_size = value.get<std::size_t>();
      else if (key == "max_size") s.max_size = value.get<std::size_t>();
      else if (key == "noise") s.noise = value.get<double>();
      else if (key == "background_texture") s.background_texture = value.get<double>();
      else if (key == "allow_occlusion") s.allow_occlusion = value.get<bool>();
      else throw ConfigError("scene: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("scene." + key + ": " + e.what());
    }
  }
  s.validate();
  return s;
}

// ----------------------------------------------------------------- generation

void VideoClip::validate() const {
  const std::size_t plane = height * width;
  if (frames.size() != labels.size() || frames.size() != motion.size()) {
    throw FormatError("clip frames, labels and motion differ in length");
  }
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].shape() != Shape{1, channels, height, width}) {
      throw FormatError("clip frame " + std::to_string(t) + " has shape " +
                        shape_to_string(frames[t].shape()));
    }
    if (labels[t].size() != plane) throw FormatError("clip label plane has wrong size");
    for (int l : labels[t]) {
      if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
        throw FormatError("clip label " + std::to_string(l) + " outside [0, K)");
      }
    }
    if (motion[t].shape() != Shape{2, height, width}) {
      throw FormatError("clip motion plane has wrong shape");
    }
    for (double m : motion[t].values()) {
      if (!std::isfinite(m)) throw FormatError("clip motion is not finite");
    }
  }
}

namespace {

struct ShapeInstance {
  int cls = 1;
  std::size_t size = 4;
  int y0 = 0, x0 = 0;
  int vy = 0, vx = 0;
};

// Silhouette of a class inside its size x size box.
bool silhouette(int cls, std::size_t size, std::size_t i, std::size_t j) {
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  const double dy = static_cast<double>(i) - c, dx = static_cast<double>(j) - c;
  switch (cls % 3) {
    case 1:  // square
      return true;
    case 2:  // disk
      return dy * dy + dx * dx <= (c + 0.5) * (c + 0.5);
    default:  // diamond
      return std::abs(dy) + std::abs(dx) <= c + 0.5;
  }
}

double class_colour(int cls, std::size_t channel) {
  if (cls == 0) return 0.0;
  const double phase = 0.37 * cls + static_cast<double>(channel) / 3.0;
  return 0.5 + 0.45 * std::cos(2.0 * std::numbers::pi * phase);
}

int wrap(int v, std::size_t n) {
  const int m = static_cast<int>(n);
  return ((v % m) + m) % m;
}

// Toroidal overlap test between the bounding boxes of two shapes.
bool boxes_overlap(const ShapeInstance& a, const ShapeInstance& b, std::size_t h,
                   std::size_t w) {
  const auto axis = [](int pa, std::size_t sa, int pb, std::size_t sb, std::size_t n) {
    const int d = wrap(pb - pa, n);
    return d < static_cast<int>(sa) || static_cast<int>(n) - d < static_cast<int>(sb);
  };
  return axis(a.y0, a.size, b.y0, b.size, h) && axis(a.x0, a.size, b.x0, b.size, w);
}

}  // namespace

VideoClip generate_clip(const SceneSpec& spec, std::size_t length, std::uint64_t seed) {
  spec.validate();
  if (length == 0) throw ConfigError("clip length must be positive");
  std::mt19937_64 rng(seed);
  const std::size_t h = spec.height, w = spec.width, c = spec.channels;
  std::uniform_int_distribution<int> cls_dist(1, static_cast<int>(spec.num_classes) - 1);
  std::uniform_int_distribution<std::size_t> size_dist(spec.min_size, spec.max_size);
  std::uniform_int_distribution<int> ypos(0, static_cast<int>(h) - 1);
  std::uniform_int_distribution<int> xpos(0, static_cast<int>(w) - 1);
  std::uniform_int_distribution<int> vy_dist(spec.vy_range[0], spec.vy_range[1]);
  std::uniform_int_distribution<int> vx_dist(spec.vx_range[0], spec.vx_range[1]);

  // Static background texture: one random plane wave per channel.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> background(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double fy = 1.0 + 2.0 * unit(rng), fx = 1.0 + 2.0 * unit(rng);
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        background[(ch * h + y) * w + x] =
            spec.background_texture *
            std::sin(2.0 * std::numbers::pi * (fy * y / h + fx * x / w) + phase);
  }

  std::vector<ShapeInstance> shapes;
  const int shared_vy = vy_dist(rng), shared_vx = vx_dist(rng);
  for (std::size_t k = 0; k < spec.num_shapes; ++k) {
    ShapeInstance s;
    s.cls = cls_dist(rng);
    s.size = size_dist(rng);
    if (spec.allow_occlusion) {
      s.y0 = ypos(rng);
      s.x0 = xpos(rng);
      s.vy = vy_dist(rng);
      s.vx = vx_dist(rng);
    } else {
      s.vy = shared_vy;
      s.vx = shared_vx;
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        s.y0 = ypos(rng);
        s.x0 = xpos(rng);
        placed = std::none_of(shapes.begin(), shapes.end(), [&](const ShapeInstance& o) {
          return boxes_overlap(s, o, h, w);
        });
      }
      if (!placed) throw ConfigError("cannot place the shapes without overlap");
    }
    shapes.push_back(s);
  }

  VideoClip clip;
  clip.channels = c;
  clip.height = h;
  clip.width = w;
  clip.num_classes = spec.num_classes;
  clip.seed = seed;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t t = 0; t < length; ++t) {
    std::vector<int> owner(h * w, -1);
    for (std::size_t k = 0; k < shapes.size(); ++k) {
      const auto& s = shapes[k];
      const int ty = s.y0 + s.vy * static_cast<int>(t);
      const int tx = s.x0 + s.vx * static_cast<int>(t);
      for (std::size_t i = 0; i < s.size; ++i)
        for (std::size_t j = 0; j < s.size; ++j)
          if (silhouette(s.cls, s.size, i, j)) {
            const auto y = static_cast<std::size_t>(wrap(ty + static_cast<int>(i), h));
            const auto x = static_cast<std::size_t>(wrap(tx + static_cast<int>(j), w));
            owner[y * w + x] = static_cast<int>(k);
          }
    }
    std::vector<int> labels(h * w, 0);
    std::vector<double> frame(c * h * w);
    std::vector<double> motion(2 * h * w, 0.0);
    for (std::size_t p = 0; p < h * w; ++p) {
      if (owner[p] < 0) continue;
      const auto& s = shapes[static_cast<std::size_t>(owner[p])];
      labels[p] = s.cls;
      if (t > 0) {
        motion[p] = s.vy;
        motion[h * w + p] = s.vx;
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < h * w; ++p) {
        const double base = labels[p] == 0 ? background[ch * h * w + p]
                                           : class_colour(labels[p], ch);
        frame[ch * h * w + p] = base + (spec.noise > 0.0 ? spec.noise * noise(rng) : 0.0);
      }
    clip.frames.push_back(Tensor::from_values({1, c, h, w}, std::move(frame)));
    clip.labels.push_back(std::move(labels));
    clip.motion.push_back(Tensor::from_values({2, h, w}, std::move(motion)));
  }
  return clip;
}

std::uint64_t clip_seed(std::uint64_t base, std::size_t index) {
  // splitmix64 finalizer over (base, index).
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::vector<VideoClip> generate_dataset(const SceneSpec& spec, std::size_t count,
                                        std::size_t length, std::uint64_t base_seed) {
  std::vector<VideoClip> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(generate_clip(spec, length, clip_seed(base_seed, i)));
  return out;
}

// -------------------------------------------------------------------- metrics

namespace {

void check_class(int v, std::size_t num_classes, const char* what) {
  if (v < 0 || static_cast<std::size_t>(v) >= num_classes) {
    throw ConfigError(std::string(what) + " class id " + std::to_string(v) +
                      " outside [0, " + std::to_string(num_classes) + ")");
  }
}

}  // namespace

double miou(std::span<const int> predictions, std::span<const int> labels,
            std::size_t num_classes, int ignore_label) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("miou: prediction and label maps differ in size");
  }
  std::vector<std::uint64_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == ignore_label) continue;
    check_class(labels[i], num_classes, "label");
    check_class(predictions[i], num_classes, "prediction");
    const auto l = static_cast<std::size_t>(labels[i]);
    const auto p = static_cast<std::size_t>(predictions[i]);
    if (l == p) {
      ++tp[l];
    } else {
      ++fp[p];
      ++fn[l];
    }
  }
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    const std::uint64_t denom = tp[k] + fp[k] + fn[k];
    if (denom == 0) continue;
    total += static_cast<double>(tp[k]) / static_cast<double>(denom);
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : 1.0;
}

double pixel_accuracy(std::span<const int> predictions, std::span<const int> labels,
                      int ignore_label) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("pixel_accuracy: prediction and label maps differ in size");
  }
  std::size_t hit = 0, counted = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == ignore_label) continue;
    ++counted;
    hit += predictions[i] == labels[i];
  }
  return counted ? static_cast<double>(hit) / static_cast<double>(counted) : 1.0;
}

std::vector<int> warp_labels(std::span<const int> previous, const Tensor& motion,
                             std::size_t height, std::size_t width, int ignore_label) {
  if (motion.shape() != Shape{2, height, width} || previous.size() != height * width) {
    throw ShapeError("warp_labels: motion " + shape_to_string(motion.shape()) +
                     " does not match a " + std::to_string(height) + "x" +
                     std::to_string(width) + " map");
  }
  const auto m = motion.values();
  std::vector<int> out(height * width, ignore_label);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t p = y * width + x;
      const double sy = static_cast<double>(y) - m[p];
      const double sx = static_cast<double>(x) - m[height * width + p];
      const double ry = std::round(sy), rx = std::round(sx);
      if (ry < 0 || rx < 0 || ry >= static_cast<double>(height) ||
          rx >= static_cast<double>(width)) {
        continue;
      }
      out[p] = previous[static_cast<std::size_t>(ry) * width + static_cast<std::size_t>(rx)];
    }
  }
  return out;
}

double temporal_consistency(const std::vector<std::vector<int>>& predictions,
                            const std::vector<Tensor>& motion, std::size_t height,
                            std::size_t width, std::size_t num_classes) {
  if (predictions.size() < 2) throw ConfigError("temporal consistency needs two frames");
  if (motion.size() != predictions.size()) {
    throw ConfigError("temporal consistency: missing motion fields");
  }
  double total = 0.0;
  for (std::size_t t = 1; t < predictions.size(); ++t) {
    const auto warped = warp_labels(predictions[t - 1], motion[t], height, width);
    total += miou(predictions[t], warped, num_classes);
  }
  return total / static_cast<double>(predictions.size() - 1);
}

std::vector<int> argmax_labels(const Tensor& logits) {
  if (logits.rank() != 4 || logits.dim(0) != 1) {
    throw ShapeError("argmax_labels expects [1, K, H, W], got " +
                     shape_to_string(logits.shape()));
  }
  const std::size_t k = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  const auto v = logits.values();
  std::vector<int> out(plane, 0);
  for (std::size_t p = 0; p < plane; ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (v[c * plane + p] > v[best * plane + p]) best = c;
    out[p] = static_cast<int>(best);
  }
  return out;
}

// ------------------------------------------------------------------------- IO

namespace {

static_assert(std::endian::native == std::endian::little,
              "clip IO assumes a little-endian host");

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw FormatError("truncated clip file " + path.string());
  }
  return v;
}

template <typename T>
void put_block(std::ofstream& out, std::span<const T> data) {
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(T)));
}

template <typename T>
std::vector<T> get_block(std::ifstream& in, std::size_t n, const std::filesystem::path& path) {
  std::vector<T> v(n);
  if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)))) {
    throw FormatError("truncated clip file " + path.string());
  }
  return v;
}

}  // namespace

void write_clip(const std::filesystem::path& path, const VideoClip& clip) {
  clip.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write clip file " + path.string());
  put<std::uint32_t>(out, kClipMagic);
  put<std::uint32_t>(out, kClipVersion);
  for (std::size_t v : {clip.length(), clip.channels, clip.height, clip.width, clip.num_classes})
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  for (const auto& f : clip.frames) put_block<double>(out, f.values());
  for (const auto& l : clip.labels) {
    std::vector<std::int32_t> l32(l.begin(), l.end());
    put_block<std::int32_t>(out, l32);
  }
  for (const auto& m : clip.motion) put_block<double>(out, m.values());
  put<std::uint64_t>(out, clip.seed);
  if (!out) throw FormatError("failed writing clip file " + path.string());
}

VideoClip read_clip(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open clip file " + path.string());
  if (get<std::uint32_t>(in, path) != kClipMagic) {
    throw FormatError(path.string() + " is not a clip file");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kClipVersion) {
    throw FormatError("unsupported clip version " + std::to_string(version));
  }
  VideoClip clip;
  const std::size_t t = get<std::uint32_t>(in, path);
  clip.channels = get<std::uint32_t>(in, path);
  clip.height = get<std::uint32_t>(in, path);
  clip.width = get<std::uint32_t>(in, path);
  clip.num_classes = get<std::uint32_t>(in, path);
  const std::size_t plane = clip.height * clip.width;
  for (std::size_t i = 0; i < t; ++i)
    clip.frames.push_back(Tensor::from_values({1, clip.channels, clip.height, clip.width},
                                              get_block<double>(in, clip.channels * plane, path)));
  for (std::size_t i = 0; i < t; ++i) {
    const auto l32 = get_block<std::int32_t>(in, plane, path);
    clip.labels.emplace_back(l32.begin(), l32.end());
  }
  for (std::size_t i = 0; i < t; ++i)
    clip.motion.push_back(Tensor::from_values({2, clip.height, clip.width},
                                              get_block<double>(in, 2 * plane, path)));
  clip.seed = get<std::uint64_t>(in, path);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes in clip file " + path.string());
  }
  clip.validate();
  return clip;
}

nlohmann::json write_dataset(const std::filesystem::path& dir, const SceneSpec& spec,
                             std::size_t count, std::size_t length, std::uint64_t base_seed) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {{"format", "deltadistill-clips"},
                             {"version", kClipVersion},
                             {"scene", spec.to_json()},
                             {"length", length},
                             {"base_seed", base_seed},
                             {"clips", nlohmann::json::array()}};
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t seed = clip_seed(base_seed, i);
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%04zu.bin", i);
    write_clip(dir / name, generate_clip(spec, length, seed));
    manifest["clips"].push_back({{"file", name}, {"seed", seed}});
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw FormatError("cannot write manifest in " + dir.string());
  return manifest;
}

std::vector<VideoClip> read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest: " + std::string(e.what()));
  }
  std::vector<VideoClip> clips;
  for (const auto& entry : manifest.at("clips")) {
    auto clip = read_clip(dir / entry.at("file").get<std::string>());
    if (clip.seed != entry.at("seed").get<std::uint64_t>()) {
      throw FormatError("clip seed disagrees with the manifest");
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

}  // namespace dd
