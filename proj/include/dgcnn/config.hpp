#pragma once

#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

namespace dgcnn {

// json.hpp is vendored at the repo root include path
using Json = nlohmann::json;

/// Loads a JSON config file; throws ParseError with the parser's position on
/// malformed input, DataError when the file is missing.
Json load_config_file(const std::string& path);

/// Applies one dotted-key override, e.g. "model.k=10" or
/// "data.synth.classes=[\"cube\",\"sphere\"]".  Values parse as JSON first
/// and fall back to plain strings.
void apply_override(Json& config, const std::string& assignment);

void apply_overrides(Json& config, const std::vector<std::string>& assignments);

/// Writes the resolved config (pretty-printed, stable key order) so each run
/// directory records exactly what it ran with.
void write_config_snapshot(const std::string& path, const Json& config);

}  // namespace dgcnn
