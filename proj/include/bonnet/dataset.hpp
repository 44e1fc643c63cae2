// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "bonnet/config.hpp"
#include "bonnet/image.hpp"
#include "bonnet/rng.hpp"

namespace bonnet {

enum class Split : std::uint8_t { train = 0, valid = 1, test = 2 };
std::string_view to_string(Split split);

/// RGB image plus a same-sized single-channel map of class ids.
struct Sample {
  std::string id;
  Image image;
  Image label;
};

/// Dataset in the standard on-disk layout:
///   root/{train,valid,test}/{img,lbl}/<id>.png, root/manifest.yaml,
///   root/data.yaml.
struct StandardDataset {
  std::filesystem::path root;
  std::array<std::vector<std::string>, 3> splits;
  /// Per-class pixel fraction over the train split.
  std::vector<double> frequencies;
  std::uint64_t seed = 0;
  DataConfig data;

  const std::vector<std::string>& ids(Split split) const {
    return splits[static_cast<std::size_t>(split)];
  }
};

/// Largest-remainder allocation of n items to the three fractions.
std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& fractions);

/// Orders ids by hash(seed, id) and cuts them by split_counts. The result
/// does not depend on the input order.
std::array<std::vector<std::string>, 3> assign_splits(std::vector<std::string> ids,
                                                      const std::array<double, 3>& fractions,
                                                      std::uint64_t seed);

/// Reads images (PNG/JPEG) and labels (PNG, color-coded with the data.yaml
/// colors or single-channel id maps) matched by file stem, and writes the
/// standard layout under `out_root`.
StandardDataset import_dataset(const std::filesystem::path& images_dir,
                               const std::filesystem::path& labels_dir, const DataConfig& data,
                               std::uint64_t seed, const std::filesystem::path& out_root);

StandardDataset open_dataset(const std::filesystem::path& root);

Sample load_sample(const StandardDataset& dataset, Split split, const std::string& id);

/// Per-class pixel fractions of the given label maps; uniform when empty.
/// Resizes image (bilinear) and label (nearest) to width x height.
Sample fit_to_size(const Sample& sample, int width, int height);

std::vector<double> class_frequencies(const std::vector<Image>& labels, std::size_t classes);

// ---------------------------------------------------------------------------
// Augmentation

/// One draw from an AugmentSpec. The geometric part maps output pixel
/// centres back to source coordinates.
struct AugmentParams {
  bool flip = false;
  double rotation_degrees = 0.0;
  double shear = 0.0;
  double stretch = 1.0;
  double gamma = 1.0;

  static AugmentParams draw(const AugmentSpec& spec, Rng& rng);

  /// Continuous source coordinate of output pixel (x, y) in a w x h image.
  std::array<double, 2> source_of(int x, int y, int w, int h) const;
};

Sample apply_augment(const Sample& sample, const AugmentParams& params);
Sample augment(const Sample& sample, const AugmentSpec& spec, Rng& rng);

// ---------------------------------------------------------------------------
// Prefetching

struct Batch {
  std::int64_t index = 0;
  /// Position of samples[0] within the epoch order.
  std::int64_t first = 0;
  std::vector<Sample> samples;
};

using SampleLoader = std::function<Sample(const std::string& id)>;

/// One epoch of batches produced by a background thread into a bounded
/// queue. Destroying the stream stops and joins the producer.
class BatchStream {
 public:
  struct Options {
    int batch_size = 1;
    int capacity = 1;
    AugmentSpec augment = AugmentSpec::identity();
    std::uint64_t seed = 0;
    int epoch = 0;
    bool shuffle = true;
  };

  BatchStream(std::vector<std::string> ids, SampleLoader loader, const Options& options);
  BatchStream(const StandardDataset& dataset, Split split, const Options& options);
  ~BatchStream();

  BatchStream(const BatchStream&) = delete;
  BatchStream& operator=(const BatchStream&) = delete;

  /// Next batch, or nullopt at the end of the epoch. Producer failures are
  /// rethrown here.
  std::optional<Batch> next();

  const std::vector<std::string>& order() const { return order_; }
  int peak_buffered() const;

 private:
  void produce();

  std::vector<std::string> order_;
  SampleLoader loader_;
  Options options_;

  mutable std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<Batch> queue_;
  bool done_ = false;
  bool stop_ = false;
  std::exception_ptr error_;
  int peak_ = 0;
  std::thread producer_;
};

/// Epoch shuffle order; a pure function of (ids, seed, epoch).
std::vector<std::string> epoch_order(std::vector<std::string> ids, std::uint64_t seed, int epoch);

// ---------------------------------------------------------------------------
// Synthetic data

/// Class table of the generated corpus: background plus circle, rectangle
/// and triangle.
DataConfig toy_data_config();

/// Writes out/img/<id>.png, out/lbl/<id>.png (color labels) and
/// out/data.yaml. Deterministic per seed.
void generate_toy_dataset(const std::filesystem::path& out, int count, int size,
                          std::uint64_t seed);

}  // namespace bonnet
