#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drseg/pdgr.hpp"
#include "drseg/ugaf.hpp"

namespace drseg {

struct HeadDims {
  std::size_t dino_dim = 16;
  std::size_t edge_hidden = 32;
  std::size_t str_channels = 16;
  std::size_t gcn_layers = 2;
  std::size_t embed_dim = 64;

  friend bool operator==(const HeadDims&, const HeadDims&) = default;
};

// Every trainable tensor of the segmentation head.
struct HeadParameters {
  EdgeMlpParams edge;
  GcnParams gcn;
  FusionParams fusion;

  static HeadParameters zeros(const HeadDims& d);
  static HeadParameters init(const HeadDims& d, std::uint64_t seed);

  HeadDims dims() const;
  std::size_t count() const;

  // Named blocks in a fixed order; the flat view concatenates them.
  void visit(const std::function<void(const std::string&, std::span<double>)>& f);
  void visit(const std::function<void(const std::string&, std::span<const double>)>& f) const;

  std::vector<double> pack() const;
  void unpack(std::span<const double> flat);

  friend bool operator==(const HeadParameters&, const HeadParameters&) = default;
};

nlohmann::json to_json(const HeadParameters& p);
HeadParameters head_from_json(const nlohmann::json& j);
void save_head(const HeadParameters& p, const std::filesystem::path& path);
HeadParameters load_head(const std::filesystem::path& path);

} // namespace drseg
