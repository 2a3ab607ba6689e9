#pragma once

#include <crowdsel/simulate.hpp>

#include <filesystem>
#include <string_view>

namespace crowdsel {

// Plain-text simulation config: one `key = value` per line, `#` starts a
// comment, list values are separated by commas or whitespace. Errors carry
// "source:line:" prefixes.
//
// Keys:
//   n, seed, vote_seed
//   mean, covariance (one row per line), noise_covariates, beta
//   scheme = constant | model | model_squared | independent_covariate
//   epsilon                      (constant)
//   alpha, gamma                 (model, model_squared)
//   alpha, slope, first_column, squared   (independent_covariate)
//   experts                      optional check against the scheme's length
//   features_file, labels_file   fixed data, relative to the config's directory
//   labels_from_majority, keep_experts
SimulationConfig parse_simulation_config(std::string_view text, const std::string& source,
                                         const std::filesystem::path& base_dir = {});
SimulationConfig load_simulation_config(const std::filesystem::path& path);

}  // namespace crowdsel
