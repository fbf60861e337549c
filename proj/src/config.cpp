#include "drseg/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "drseg/error.hpp"

namespace drseg {

std::string_view to_string(FusionMode m) {
  switch (m) {
    case FusionMode::ugaf: return "ugaf";
    case FusionMode::mean: return "mean";
    case FusionMode::concat: return "concat";
    case FusionMode::separate: return "separate";
  }
  return "?";
}

FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "ugaf") return FusionMode::ugaf;
  if (s == "mean") return FusionMode::mean;
  if (s == "concat") return FusionMode::concat;
  if (s == "separate") return FusionMode::separate;
  throw ConfigError("unknown fusion mode '" + std::string(s) + "'");
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config value out of range: " + what);
}

} // namespace

void RunConfig::validate() const {
  require(lambda >= 0.0 && lambda <= 1.0, "lambda must be in [0,1]");
  require(rho >= 0.0 && rho <= 1.0, "rho must be in [0,1]");
  require(n_prototypes >= 1, "n_prototypes must be >= 1");
  require(sigma_f > 0.0, "sigma_f must be > 0");
  require(sigma_s >= 0.0, "sigma_s must be >= 0");
  require(top_k >= 1, "top_k must be >= 1");
  require(gcn_layers >= 1, "gcn_layers must be >= 1");
  require(edge_hidden >= 1, "edge_hidden must be >= 1");
  require(embed_dim >= 1, "embed_dim must be >= 1");
  require(!rotations.empty(), "rotations must not be empty");
  std::set<int> seen;
  for (int a : rotations) {
    require(a == 0 || a == 90 || a == 180 || a == 270, "rotation angles must be 0, 90, 180 or 270");
    require(seen.insert(a).second, "rotation angles must be distinct");
  }
  require(softmax_temperature > 0.0, "softmax_temperature must be > 0");
  require(epsilon > 0.0 && epsilon < 1e-2, "epsilon must be a small positive value");
  require(learning_rate >= 0.0, "learning_rate must be >= 0");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(steps >= 0, "steps must be >= 0");
}

nlohmann::json to_json(const RunConfig& c) {
  return {
      {"lambda", c.lambda},
      {"rho", c.rho},
      {"n_prototypes", c.n_prototypes},
      {"sigma_f", c.sigma_f},
      {"sigma_s", c.sigma_s},
      {"top_k", c.top_k},
      {"gcn_layers", c.gcn_layers},
      {"edge_hidden", c.edge_hidden},
      {"embed_dim", c.embed_dim},
      {"rotations", c.rotations},
      {"softmax_temperature", c.softmax_temperature},
      {"fusion_mode", std::string(to_string(c.fusion_mode))},
      {"epsilon", c.epsilon},
      {"seed", c.seed},
      {"learning_rate", c.learning_rate},
      {"weight_decay", c.weight_decay},
      {"batch_size", c.batch_size},
      {"steps", c.steps},
  };
}

RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  const std::set<std::string> known = {
      "lambda", "rho", "n_prototypes", "sigma_f", "sigma_s", "top_k", "gcn_layers", "edge_hidden",
      "embed_dim", "rotations", "softmax_temperature", "fusion_mode", "epsilon", "seed",
      "learning_rate", "weight_decay", "batch_size", "steps"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");

  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      using T = std::decay_t<decltype(field)>;
      const auto& v = j.at(key);
      if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(std::string(key) + " must be an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_unsigned() || v.get<std::int64_t>() >= 0) field = v.get<T>();
          else throw ConfigError(std::string(key) + " must be non-negative");
        } else {
          field = v.get<T>();
        }
      } else {
        field = v.get<T>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad value for ") + key + ": " + e.what());
    }
  };
  get("lambda", c.lambda);
  get("rho", c.rho);
  get("n_prototypes", c.n_prototypes);
  get("sigma_f", c.sigma_f);
  get("sigma_s", c.sigma_s);
  get("top_k", c.top_k);
  get("gcn_layers", c.gcn_layers);
  get("edge_hidden", c.edge_hidden);
  get("embed_dim", c.embed_dim);
  get("rotations", c.rotations);
  get("softmax_temperature", c.softmax_temperature);
  get("epsilon", c.epsilon);
  get("seed", c.seed);
  get("learning_rate", c.learning_rate);
  get("weight_decay", c.weight_decay);
  get("batch_size", c.batch_size);
  get("steps", c.steps);
  if (j.contains("fusion_mode")) {
    if (!j["fusion_mode"].is_string()) throw ConfigError("fusion_mode must be a string");
    c.fusion_mode = parse_fusion_mode(j["fusion_mode"].get<std::string>());
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config parse failure in " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config " + path.string());
  out << to_json(c).dump(2) << "\n";
}

} // namespace drseg
