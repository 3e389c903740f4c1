#pragma once

#include <string>

#include "ccmed/engine.hpp"

namespace ccmed {

// CSV table of effect estimates: one row per effect, full double precision.
std::string effects_csv(const EstimateReport& rep);

// JSON document with functional estimates, the effect table, and run
// diagnostics.  Serialization is deterministic: identical reports produce
// byte-identical strings.
std::string report_json(const EstimateReport& rep);

}  // namespace ccmed
