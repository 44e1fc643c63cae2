// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "bonnet/dataset.hpp"
#include "bonnet/error.hpp"

namespace bonnet {

namespace fs = std::filesystem;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::valid:
      return "valid";
    case Split::test:
      return "test";
  }
  return "?";
}

std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& fractions) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainders{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double quota = static_cast<double>(n) * fractions[i];
    counts[i] = static_cast<std::size_t>(std::floor(quota));
    remainders[i] = quota - std::floor(quota);
    assigned += counts[i];
  }
  std::array<std::size_t, 3> rank{0, 1, 2};
  std::stable_sort(rank.begin(), rank.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  for (std::size_t k = 0; assigned < n; k = (k + 1) % 3) {
    // Splits with a zero fraction never receive leftovers.
    if (fractions[rank[k]] > 0.0) {
      ++counts[rank[k]];
      ++assigned;
    }
  }
  return counts;
}

std::array<std::vector<std::string>, 3> assign_splits(std::vector<std::string> ids,
                                                      const std::array<double, 3>& fractions,
                                                      std::uint64_t seed) {
  std::sort(ids.begin(), ids.end(), [seed](const std::string& a, const std::string& b) {
    const auto ha = hash_seed(seed, fnv1a(a));
    const auto hb = hash_seed(seed, fnv1a(b));
    return ha != hb ? ha < hb : a < b;
  });
  const auto counts = split_counts(ids.size(), fractions);
  std::array<std::vector<std::string>, 3> out;
  auto it = ids.begin();
  for (std::size_t s = 0; s < 3; ++s) {
    out[s].assign(it, it + static_cast<std::ptrdiff_t>(counts[s]));
    it += static_cast<std::ptrdiff_t>(counts[s]);
    std::sort(out[s].begin(), out[s].end());
  }
  return out;
}

std::vector<double> class_frequencies(const std::vector<Image>& labels, std::size_t classes) {
  std::vector<std::uint64_t> counts(classes, 0);
  std::uint64_t total = 0;
  for (const auto& label : labels) {
    for (const auto v : label.pixels) {
      if (v >= classes) {
        throw DomainError("label value " + std::to_string(v) + " >= class count " +
                          std::to_string(classes));
      }
      ++counts[v];
    }
    total += label.pixels.size();
  }
  std::vector<double> freq(classes, classes ? 1.0 / static_cast<double>(classes) : 0.0);
  if (total > 0) {
    for (std::size_t c = 0; c < classes; ++c) {
      freq[c] = static_cast<double>(counts[c]) / static_cast<double>(total);
    }
  }
  return freq;
}

namespace {

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::map<std::string, fs::path> list_by_stem(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw IoError("not a directory: " + dir.string());
  }
  std::map<std::string, fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !is_image_file(entry.path())) {
      continue;
    }
    const auto stem = entry.path().stem().string();
    if (!files.emplace(stem, entry.path()).second) {
      throw IoError("two files share the id '" + stem + "' in " + dir.string());
    }
  }
  return files;
}

Image to_rgb(const Image& img) {
  if (img.channels == 3) {
    return img;
  }
  Image out(img.width, img.height, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = img.pixels[i];
  }
  return out;
}

Image to_id_map(const Image& label, const DataConfig& data, const fs::path& file) {
  const auto classes = data.class_count();
  Image ids(label.width, label.height, 1);
  if (label.channels == 1) {
    for (std::size_t i = 0; i < label.pixels.size(); ++i) {
      if (label.pixels[i] >= classes) {
        throw DomainError(file.string() + ": label id " + std::to_string(label.pixels[i]) +
                          " is not a class in data.yaml");
      }
      ids.pixels[i] = label.pixels[i];
    }
    return ids;
  }
  std::map<std::uint32_t, std::uint8_t> lookup;
  for (const auto& c : data.classes) {
    lookup[(std::uint32_t{c.color.r} << 16) | (std::uint32_t{c.color.g} << 8) | c.color.b] =
        static_cast<std::uint8_t>(c.id);
  }
  for (std::size_t i = 0; i < ids.pixels.size(); ++i) {
    const Rgb px{label.pixels[3 * i], label.pixels[3 * i + 1], label.pixels[3 * i + 2]};
    const auto it = lookup.find((std::uint32_t{px.r} << 16) | (std::uint32_t{px.g} << 8) | px.b);
    if (it == lookup.end()) {
      throw DomainError(file.string() + ": label color " + to_hex(px) +
                        " is not defined in data.yaml");
    }
    ids.pixels[i] = it->second;
  }
  return ids;
}

void write_manifest(const StandardDataset& ds) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << ds.seed;
  out << YAML::Key << "classes" << YAML::Value << ds.data.class_count();
  out << YAML::Key << "frequencies" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (const double f : ds.frequencies) {
    out << format_real(f);
  }
  out << YAML::EndSeq;
  out << YAML::Key << "splits" << YAML::Value << YAML::BeginMap;
  for (std::size_t s = 0; s < 3; ++s) {
    out << YAML::Key << std::string(to_string(static_cast<Split>(s))) << YAML::Value
        << YAML::Flow << ds.splits[s];
  }
  out << YAML::EndMap << YAML::EndMap;
  std::ofstream file(ds.root / "manifest.yaml", std::ios::trunc);
  file << out.c_str() << '\n';
  if (!file) {
    throw IoError("cannot write " + (ds.root / "manifest.yaml").string());
  }
}

fs::path sample_path(const fs::path& root, Split split, const char* kind, const std::string& id) {
  return root / std::string(to_string(split)) / kind / (id + ".png");
}

}  // namespace

StandardDataset import_dataset(const fs::path& images_dir, const fs::path& labels_dir,
                               const DataConfig& data, std::uint64_t seed,
                               const fs::path& out_root) {
  data.validate();
  const auto images = list_by_stem(images_dir);
  const auto labels = list_by_stem(labels_dir);
  std::vector<std::string> ids;
  for (const auto& [id, path] : images) {
    if (!labels.contains(id)) {
      throw IoError(path.string() + ": no matching label in " + labels_dir.string());
    }
    ids.push_back(id);
  }

  StandardDataset ds;
  ds.root = out_root;
  ds.seed = seed;
  ds.data = data;
  ds.data.dataset_location = std::filesystem::absolute(out_root).lexically_normal().string();
  ds.splits = assign_splits(ids, {data.split_train, data.split_valid, data.split_test}, seed);

  std::error_code ec;
  for (std::size_t s = 0; s < 3; ++s) {
    for (const char* kind : {"img", "lbl"}) {
      fs::create_directories(out_root / std::string(to_string(static_cast<Split>(s))) / kind, ec);
      if (ec) {
        throw IoError("cannot create " + out_root.string() + ": " + ec.message());
      }
    }
  }

  std::vector<Image> train_labels;
  for (std::size_t s = 0; s < 3; ++s) {
    const auto split = static_cast<Split>(s);
    for (const auto& id : ds.splits[s]) {
      const Image image = to_rgb(read_image(images.at(id)));
      const Image raw = read_image(labels.at(id));
      if (raw.width != image.width || raw.height != image.height) {
        throw ShapeError(labels.at(id).string() + ": label is " + std::to_string(raw.width) +
                         "x" + std::to_string(raw.height) + " but image is " +
                         std::to_string(image.width) + "x" + std::to_string(image.height));
      }
      Image label = to_id_map(raw, data, labels.at(id));
      write_png(image, sample_path(out_root, split, "img", id));
      write_png(label, sample_path(out_root, split, "lbl", id));
      if (split == Split::train) {
        train_labels.push_back(std::move(label));
      }
    }
  }
  ds.frequencies = class_frequencies(train_labels, data.class_count());
  save_config(ds.data, out_root / "data.yaml");
  write_manifest(ds);
  return ds;
}

StandardDataset open_dataset(const fs::path& root) {
  const auto manifest = root / "manifest.yaml";
  if (!fs::exists(manifest)) {
    throw IoError("no manifest.yaml in " + root.string());
  }
  StandardDataset ds;
  ds.root = root;
  ds.data = load_data_config(root / "data.yaml");
  try {
    const YAML::Node node = YAML::LoadFile(manifest.string());
    ds.seed = node["seed"].as<std::uint64_t>();
    ds.frequencies = node["frequencies"].as<std::vector<double>>();
    for (std::size_t s = 0; s < 3; ++s) {
      const auto key = std::string(to_string(static_cast<Split>(s)));
      ds.splits[s] = node["splits"][key].as<std::vector<std::string>>();
    }
  } catch (const YAML::Exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
  if (ds.frequencies.size() != ds.data.class_count()) {
    throw FormatError(manifest.string() + ": frequency count does not match data.yaml");
  }
  return ds;
}

Sample load_sample(const StandardDataset& ds, Split split, const std::string& id) {
  Sample s;
  s.id = id;
  s.image = to_rgb(read_image(sample_path(ds.root, split, "img", id)));
  s.label = read_image(sample_path(ds.root, split, "lbl", id));
  if (s.label.channels != 1 || s.label.width != s.image.width ||
      s.label.height != s.image.height) {
    throw ShapeError(id + ": label does not match its image");
  }
  for (const auto v : s.label.pixels) {
    if (v >= ds.data.class_count()) {
      throw DomainError(id + ": label value " + std::to_string(v) + " >= class count");
    }
  }
  return s;
}

}  // namespace bonnet

namespace bonnet {

Sample fit_to_size(const Sample& sample, int width, int height) {
  Sample out;
  out.id = sample.id;
  out.image = resize_bilinear(sample.image, width, height);
  out.label = resize_nearest(sample.label, width, height);
  return out;
}

}  // namespace bonnet
