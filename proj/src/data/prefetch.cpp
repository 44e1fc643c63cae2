// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include "bonnet/dataset.hpp"
#include "bonnet/error.hpp"

namespace bonnet {

std::vector<std::string> epoch_order(std::vector<std::string> ids, std::uint64_t seed, int epoch) {
  std::sort(ids.begin(), ids.end());
  Rng rng(hash_seed(seed, 0x5348554646ULL, epoch));
  rng.shuffle(ids);
  return ids;
}

BatchStream::BatchStream(std::vector<std::string> ids, SampleLoader loader,
                         const Options& options)
    : loader_(std::move(loader)), options_(options) {
  if (options.batch_size < 1) {
    throw InvalidArgument("batch size must be >= 1");
  }
  if (options.capacity < 1) {
    throw InvalidArgument("cache capacity must be >= 1");
  }
  options_.augment.validate();
  order_ = options.shuffle ? epoch_order(std::move(ids), options.seed, options.epoch)
                           : std::move(ids);
  producer_ = std::thread([this] { produce(); });
}

BatchStream::BatchStream(const StandardDataset& dataset, Split split, const Options& options)
    : BatchStream(dataset.ids(split),
                  [dataset, split](const std::string& id) { return load_sample(dataset, split, id); },
                  options) {}

BatchStream::~BatchStream() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  not_full_.notify_all();
  if (producer_.joinable()) {
    producer_.join();
  }
}

void BatchStream::produce() {
  const auto total = static_cast<std::int64_t>(order_.size());
  const std::int64_t bs = options_.batch_size;
  try {
    for (std::int64_t first = 0, index = 0; first < total; first += bs, ++index) {
      Batch batch;
      batch.index = index;
      batch.first = first;
      for (std::int64_t i = first; i < std::min(first + bs, total); ++i) {
        const auto& id = order_[static_cast<std::size_t>(i)];
        Rng rng(hash_seed(options_.seed, options_.epoch, fnv1a(id)));
        batch.samples.push_back(augment(loader_(id), options_.augment, rng));
      }
      std::unique_lock lock(mutex_);
      not_full_.wait(lock, [&] {
        return stop_ || static_cast<int>(queue_.size()) < options_.capacity;
      });
      if (stop_) {
        return;
      }
      queue_.push_back(std::move(batch));
      peak_ = std::max(peak_, static_cast<int>(queue_.size()));
      lock.unlock();
      not_empty_.notify_one();
    }
  } catch (...) {
    std::lock_guard lock(mutex_);
    error_ = std::current_exception();
  }
  {
    std::lock_guard lock(mutex_);
    done_ = true;
  }
  not_empty_.notify_all();
}

std::optional<Batch> BatchStream::next() {
  std::unique_lock lock(mutex_);
  not_empty_.wait(lock, [&] { return !queue_.empty() || done_; });
  if (!queue_.empty()) {
    Batch batch = std::move(queue_.front());
    queue_.pop_front();
    lock.unlock();
    not_full_.notify_one();
    return batch;
  }
  if (error_) {
    std::rethrow_exception(error_);
  }
  return std::nullopt;
}

int BatchStream::peak_buffered() const {
  std::lock_guard lock(mutex_);
  return peak_;
}

}  // namespace bonnet
