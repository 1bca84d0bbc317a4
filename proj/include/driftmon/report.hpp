#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace driftmon {

/// Renders the report figures from an analysis bundle (analysis.json):
/// detection-rate curves with CI bands, the SDT scatter, collapse-vs-alarm
/// timing, and PE trace + spectrum panels. Returns filename -> SVG content.
/// Sections absent from the bundle are skipped, with a note per skip.
std::map<std::string, std::string> render_report(
    const nlohmann::json& bundle, std::vector<std::string>* skipped);

}  // namespace driftmon
