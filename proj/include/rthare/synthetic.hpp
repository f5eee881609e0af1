#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rthare/stream_pipeline.hpp"

namespace rthare {

// Raw [K,3,H,W] clip of 1-3 coloured blobs drifting over a gradient background.
Tensor synthetic_clip(std::size_t K, std::size_t H, std::size_t W, std::uint64_t seed);

// `count` clips with ids "clip_000000", ... drawn from consecutive seeds.
std::vector<std::pair<std::string, Tensor>> synthetic_clips(std::size_t count, std::size_t K, std::size_t H,
                                                            std::size_t W, std::uint64_t seed);

struct SyntheticStreamConfig {
  std::size_t H = 32, W = 40;
  double fps = 30;
  std::size_t classes = 2;
  std::size_t segments = 3;
  std::size_t segment_frames = 1200;
  double noise = 6.0;  // pixel noise std
  std::uint64_t seed = 0;
};

// Labelled stream: segment s shows class s % classes. Each class has its own blob colour,
// size, texture and motion pattern.
StreamData synthetic_stream(const SyntheticStreamConfig& cfg);

}  // namespace rthare
