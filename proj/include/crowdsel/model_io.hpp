#pragma once

#include <crowdsel/crowd_em.hpp>
#include <crowdsel/data_model.hpp>

#include <filesystem>
#include <optional>
#include <string>

namespace crowdsel {

// A fitted classifier as written by `crowdsel fit`. Labels-only methods
// (majority, oracle) have d = 0 and empty alpha/gamma.
struct ModelFile {
  std::string method = "em";
  double lambda = 0.0;
  bool flipped = false;
  Index d = 0;
  Index k = 0;
  CrowdParams params;
  std::optional<StandardizationRecord> standardization;

  // P(Z = 1 | x) for a raw (unstandardized) feature row, optionally
  // conditioning on the unit's available votes.
  double probability(const Vector& raw_x, const std::map<Index, int>& votes = {}) const;
  void validate() const;
};

// Flat `key = value` text, numbers with 17 significant digits.
std::string serialize_model(const ModelFile& model);
ModelFile parse_model(const std::string& text, const std::string& source);

void save_model(const ModelFile& model, const std::filesystem::path& path);
ModelFile load_model(const std::filesystem::path& path);

}  // namespace crowdsel
