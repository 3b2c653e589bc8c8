#include <fstream>
#include <json.hpp>

#include "dgcnn/config.hpp"
#include "dgcnn/error.hpp"

namespace dgcnn {

Json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  try {
    return Json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const Json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void apply_override(Json& config, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ParameterError("override must look like dotted.key=value, got '" + assignment + "'");
  std::string key = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);

  Json* node = &config;
  std::size_t start = 0;
  while (true) {
    auto dot = key.find('.', start);
    std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ParameterError("override key has an empty segment: '" + key + "'");
    if (dot == std::string::npos) {
      Json parsed = Json::parse(value, nullptr, false);
      (*node)[part] = parsed.is_discarded() ? Json(value) : parsed;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

void apply_overrides(Json& config, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) apply_override(config, a);
}

void write_config_snapshot(const std::string& path, const Json& config) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write config snapshot: " + path);
  out << config.dump(2) << "\n";
}

}  // namespace dgcnn
