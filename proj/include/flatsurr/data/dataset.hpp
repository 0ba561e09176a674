#pragma once

// Datasets: synthetic generators, IDX / CIFAR-10 binary readers and writers,
// the native FSDS cache, non-robust relabelling, and evaluation-set
// selection.

#include <cstdint>
#include <string>
#include <vector>

#include "flatsurr/attacks/attack.hpp"

namespace flatsurr {

struct Dataset {
  Tensor<float> inputs;  // (N, ...) in [0, 1]
  std::vector<int> labels;
  Index classes = 0;
  std::string split = "train";
  std::string provenance;  // JSON object text

  Index size() const { return static_cast<Index>(labels.size()); }
  Tensor<float> label_tensor() const { return labels_tensor<float>(labels); }
  /// Example shape without the batch dimension.
  Shape example_shape() const;
  /// Checks label range, input range and shape agreement.
  void validate() const;
  Dataset subset(const std::vector<Index>& idx, const std::string& split_tag) const;
  /// Per-class example counts.
  std::vector<Index> histogram() const;
};

enum class SyntheticKind { blobs, spirals, patterned_images };

const char* synthetic_kind_name(SyntheticKind k);
SyntheticKind parse_synthetic_kind(const std::string& name);

struct SyntheticOptions {
  SyntheticKind kind = SyntheticKind::patterned_images;
  Index n = 1000;
  Index classes = 4;
  double noise = 0.1;
  std::uint64_t seed = 0;
  Index side = 8;      // patterned-images only
  Index channels = 1;  // patterned-images only
};

/// Labels are balanced (i mod C, then shuffled). blobs and spirals are 2-D
/// points in [0,1]^2; patterned-images are (C,S,S) oriented gratings with a
/// random phase, one orientation per class.
Dataset gen_synthetic(const SyntheticOptions& opts);

/// Seeded split into two datasets with `first` examples in the first.
std::pair<Dataset, Dataset> split_dataset(const Dataset& d, Index first, std::uint64_t seed,
                                          const std::string& first_tag = "train",
                                          const std::string& second_tag = "test");

// IDX: big-endian magic 0x00000803 (u8 images, rank 3) / 0x00000801 (u8 labels).
Dataset load_idx(const std::string& images_path, const std::string& labels_path, Index classes = 10);
/// Writes (N,1,H,W) or (N,H,W) inputs, quantised to round(255 x).
void write_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary: records of 1 label byte + 3 x 32 x 32 pixel bytes.
Dataset load_cifar_binary(const std::vector<std::string>& paths, Index classes = 10);
void write_cifar_binary(const Dataset& d, const std::string& path);

/// Pixel byte -> [0,1] and back.
inline float byte_to_unit(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }
std::uint8_t unit_to_byte(float v);

// Native cache: "FSDS" | u32 version | u32 header length | JSON header
// (shape, classes, split, provenance) | f32 inputs | u16 labels.
inline constexpr std::uint32_t kDatasetVersion = 1;
std::vector<unsigned char> encode_dataset(const Dataset& d);
Dataset decode_dataset(const std::vector<unsigned char>& bytes);
void save_dataset(const std::string& path, const Dataset& d);
Dataset load_dataset(const std::string& path);

enum class RelabelMode { rand, det };

const char* relabel_mode_name(RelabelMode m);
RelabelMode parse_relabel_mode(const std::string& name);

struct NonRobustOptions {
  RelabelMode mode = RelabelMode::det;
  double epsilon = 0.5;
  int steps = 100;
  double step = 0.0;  // <= 0 means epsilon / 10
  std::uint64_t seed = 0;
  Index chunk = 256;
};

struct NonRobustResult {
  Dataset data;
  double kept_fraction = 0;
};

/// Target class for example label y: (y+1) mod C (det) or uniform (rand).
int relabel_target(int y, Index classes, RelabelMode mode, std::mt19937_64& rng);

/// Targeted BIM toward each relabelled class on the base model; keeps
/// (x_adv, t) where the base model predicts t. Throws ConstructionWeak if
/// fewer than half survive.
NonRobustResult build_nonrobust_dataset(const Graph& graph, const ParamSet<float>& params, const Dataset& d,
                                        const NonRobustOptions& opts);

/// Seeded sample of n indices (sorted) among examples every target model
/// classifies correctly. Throws InsufficientCorrect when fewer qualify.
std::vector<Index> select_eval_set(const std::vector<Model<float>>& targets, const Dataset& d, Index n,
                                   std::uint64_t seed);

}  // namespace flatsurr
