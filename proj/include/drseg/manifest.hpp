#pragma once

#include <filesystem>

#include "drseg/dataset.hpp"

namespace drseg {

inline constexpr int manifest_version = 1;

// Writes `root/manifest.json`, `root/text.npy` and one directory of tensors per scene.
void save_dataset(const Dataset& data, const std::filesystem::path& root);

// Loads and validates a dataset directory. Missing files and inconsistent shapes or
// class counts raise IoError / DimensionError.
Dataset load_dataset(const std::filesystem::path& root);

} // namespace drseg
