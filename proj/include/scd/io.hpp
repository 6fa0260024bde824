// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "scd/tensor.hpp"

namespace scd::io {

// Minimal .npy (format version 1.0) support for little-endian float64 arrays.
void save_npy(const std::filesystem::path& path, const Tensor& t);
Tensor load_npy(const std::filesystem::path& path);

// 8-bit binary PGM / PPM writers for mask bitmaps and sample sheets.
// `gray` is [H, W] in [0,1]; `rgb` is [3, H, W] in [0,1]. Values are clamped.
void save_pgm(const std::filesystem::path& path, const Tensor& gray);
void save_ppm(const std::filesystem::path& path, const Tensor& rgb);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace scd::io
