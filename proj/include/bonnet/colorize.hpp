// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "bonnet/config.hpp"
#include "bonnet/image.hpp"

namespace bonnet {

/// Maps a single-channel mask of class ids to RGB. With an image of the same
/// size, blends out = round(alpha * color + (1 - alpha) * image) per channel.
/// Throws DomainError for ids without a color.
Image colorize(const Image& mask, const std::vector<ClassInfo>& classes,
               const Image* image = nullptr, double alpha = 1.0);

}  // namespace bonnet
