#include "drseg/manifest.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "drseg/error.hpp"

namespace drseg {

namespace fs = std::filesystem;
using nlohmann::json;

void save_dataset(const Dataset& data, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());

  write_tensor(matrix_tensor(data.text.n_classes, data.text.c, data.text.data), root / "text.npy");
  json scenes = json::array();
  for (const auto& s : data.scenes) {
    fs::create_directories(root / s.id, ec);
    if (ec) throw IoError("cannot create " + (root / s.id).string() + ": " + ec.message());
    json clip = json::object();
    for (const auto& [angle, f] : s.clip) {
      const std::string rel = s.id + "/clip_" + std::to_string(angle) + ".npy";
      write_tensor(to_tensor(f), root / rel);
      clip[std::to_string(angle)] = rel;
    }
    json entry = {{"id", s.id},
                  {"clip", clip},
                  {"dino", s.id + "/dino.npy"},
                  {"shape",
                   {{"h", s.canonical().h},
                    {"w", s.canonical().w},
                    {"c", s.canonical().c},
                    {"dino", {s.dino.h, s.dino.w, s.dino.c}}}}};
    write_tensor(to_tensor(s.dino), root / (s.id + "/dino.npy"));
    if (s.labels) {
      write_tensor(to_tensor(*s.labels), root / (s.id + "/labels.npy"));
      entry["labels"] = s.id + "/labels.npy";
    }
    scenes.push_back(entry);
  }
  json m = {{"format_version", manifest_version},
            {"n_classes", data.text.n_classes},
            {"channels", data.text.c},
            {"class_names", data.class_names},
            {"text", "text.npy"},
            {"scenes", scenes}};
  if (!data.semantic_truth.empty()) m["semantic_truth"] = data.semantic_truth;
  std::ofstream out(root / "manifest.json");
  if (!out) throw IoError("cannot write " + (root / "manifest.json").string());
  out << m.dump(2) << "\n";
}

namespace {

fs::path existing(const fs::path& root, const std::string& rel) {
  const fs::path p = root / rel;
  if (!fs::is_regular_file(p)) throw IoError("manifest references a missing file: " + p.string());
  return p;
}

} // namespace

Dataset load_dataset(const fs::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw IoError("cannot open " + (root / "manifest.json").string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("manifest parse failure: " + std::string(e.what()));
  }

  Dataset d;
  try {
    const int version = m.at("format_version").get<int>();
    if (version != manifest_version) throw IoError("unsupported manifest version " + std::to_string(version));
    const auto n_classes = m.at("n_classes").get<std::size_t>();
    const auto channels = m.at("channels").get<std::size_t>();
    d.class_names = m.at("class_names").get<std::vector<std::string>>();
    if (d.class_names.size() != n_classes) throw DimensionError("class_names length differs from n_classes");
    if (m.contains("semantic_truth")) d.semantic_truth = m["semantic_truth"].get<std::vector<std::size_t>>();

    const Tensor text = read_tensor(existing(root, m.at("text").get<std::string>()));
    if (text.rank() != 2 || text.shape()[0] != n_classes || text.shape()[1] != channels)
      throw DimensionError("text tensor shape differs from n_classes x channels");
    d.text = {n_classes, channels, std::vector<double>(text.data().begin(), text.data().end())};

    for (const auto& e : m.at("scenes")) {
      Scene s;
      s.id = e.at("id").get<std::string>();
      for (const auto& [angle, rel] : e.at("clip").items()) {
        FeatureMap f = to_feature_map(read_tensor(existing(root, rel.get<std::string>())));
        if (f.c != channels) throw DimensionError("scene " + s.id + ": CLIP width differs from channels");
        s.clip.emplace(std::stoi(angle), std::move(f));
      }
      if (!s.clip.contains(0)) throw DimensionError("scene " + s.id + " has no 0 degree view");
      const auto& shape = e.at("shape");
      if (s.canonical().h != shape.at("h").get<std::size_t>() || s.canonical().w != shape.at("w").get<std::size_t>())
        throw DimensionError("scene " + s.id + ": CLIP grid differs from the recorded shape");
      s.dino = to_feature_map(read_tensor(existing(root, e.at("dino").get<std::string>())));
      if (e.contains("labels")) {
        LabelGrid g = to_label_grid(read_tensor(existing(root, e["labels"].get<std::string>())));
        for (int v : g.data)
          if (v < 0 || static_cast<std::size_t>(v) >= n_classes)
            throw DimensionError("scene " + s.id + ": label outside [0, n_classes)");
        s.labels = std::move(g);
      }
      if (!d.scenes.empty() && d.scenes.front().dino.c != s.dino.c)
        throw DimensionError("scene " + s.id + ": DINO width differs from the first scene");
      d.scenes.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw IoError("malformed manifest: " + std::string(e.what()));
  }
  if (d.scenes.empty()) throw IoError("manifest lists no scenes");
  return d;
}

} // namespace drseg
