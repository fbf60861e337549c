#include "drseg/head.hpp"

#include <fstream>
#include <random>

#include "drseg/error.hpp"
#include "drseg/grid_ops.hpp"

namespace drseg {

HeadParameters HeadParameters::zeros(const HeadDims& d) {
  return {EdgeMlpParams::zeros(d.dino_dim, d.edge_hidden), GcnParams::zeros(d.str_channels, d.gcn_layers),
          FusionParams::zeros(d.embed_dim)};
}

HeadParameters HeadParameters::init(const HeadDims& d, std::uint64_t seed) {
  std::mt19937_64 edge_rng(derive_seed(seed, 11));
  std::mt19937_64 gcn_rng(derive_seed(seed, 12));
  std::mt19937_64 fusion_rng(derive_seed(seed, 13));
  return {EdgeMlpParams::init(d.dino_dim, d.edge_hidden, edge_rng),
          GcnParams::init(d.str_channels, d.gcn_layers, gcn_rng), FusionParams::init(d.embed_dim, fusion_rng)};
}

HeadDims HeadParameters::dims() const {
  return {edge.in_dim / 2, edge.hidden, gcn.c, gcn.w.size(), fusion.e};
}

void HeadParameters::visit(const std::function<void(const std::string&, std::span<double>)>& f) {
  edge.visit(f);
  gcn.visit(f);
  fusion.visit(f);
}

void HeadParameters::visit(const std::function<void(const std::string&, std::span<const double>)>& f) const {
  const_cast<HeadParameters*>(this)->visit(
      [&f](const std::string& name, std::span<double> s) { f(name, std::span<const double>(s)); });
}

std::size_t HeadParameters::count() const {
  std::size_t n = 0;
  visit([&n](const std::string&, std::span<const double> s) { n += s.size(); });
  return n;
}

std::vector<double> HeadParameters::pack() const {
  std::vector<double> flat;
  flat.reserve(count());
  visit([&flat](const std::string&, std::span<const double> s) { flat.insert(flat.end(), s.begin(), s.end()); });
  return flat;
}

void HeadParameters::unpack(std::span<const double> flat) {
  if (flat.size() != count()) throw DimensionError("flat parameter vector has the wrong length");
  std::size_t pos = 0;
  visit([&](const std::string&, std::span<double> s) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), s.size(), s.begin());
    pos += s.size();
  });
}

nlohmann::json to_json(const HeadParameters& p) {
  const HeadDims d = p.dims();
  nlohmann::json blocks = nlohmann::json::object();
  p.visit([&blocks](const std::string& name, std::span<const double> s) {
    blocks[name] = std::vector<double>(s.begin(), s.end());
  });
  return {{"format_version", 1},
          {"dims",
           {{"dino_dim", d.dino_dim},
            {"edge_hidden", d.edge_hidden},
            {"str_channels", d.str_channels},
            {"gcn_layers", d.gcn_layers},
            {"embed_dim", d.embed_dim}}},
          {"blocks", blocks}};
}

HeadParameters head_from_json(const nlohmann::json& j) {
  try {
    const auto& jd = j.at("dims");
    HeadDims d{jd.at("dino_dim").get<std::size_t>(), jd.at("edge_hidden").get<std::size_t>(),
               jd.at("str_channels").get<std::size_t>(), jd.at("gcn_layers").get<std::size_t>(),
               jd.at("embed_dim").get<std::size_t>()};
    HeadParameters p = HeadParameters::zeros(d);
    const auto& blocks = j.at("blocks");
    p.visit([&blocks](const std::string& name, std::span<double> s) {
      const auto v = blocks.at(name).get<std::vector<double>>();
      if (v.size() != s.size()) throw DimensionError("parameter block " + name + " has the wrong length");
      std::copy(v.begin(), v.end(), s.begin());
    });
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("malformed parameter file: ") + e.what());
  }
}

void save_head(const HeadParameters& p, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(p).dump() << "\n";
}

HeadParameters load_head(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return head_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ArgumentError("parameter file parse failure: " + std::string(e.what()));
  }
}

} // namespace drseg
