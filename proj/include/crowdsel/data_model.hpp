#pragma once

#include <crowdsel/common.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace crowdsel {

/// Units with features, expert votes and (optionally) the true labels.
///
/// Votes are stored as 0/1 with kAbsent for experts that did not label a
/// unit; the availability mask A_i is therefore `votes(i, r) != kAbsent`.
/// A Dataset is validated on construction and immutable afterwards.
class Dataset {
 public:
  Dataset(Matrix features, VoteMatrix votes, std::optional<Labels> true_labels = std::nullopt);

  const Matrix& features() const { return features_; }
  const VoteMatrix& votes() const { return votes_; }
  const std::optional<Labels>& true_labels() const { return true_labels_; }
  bool has_true_labels() const { return true_labels_.has_value(); }

  Index n() const { return features_.rows(); }
  Index d() const { return votes_.cols(); }
  Index k() const { return features_.cols(); }

  bool available(Index unit, Index expert) const { return votes_(unit, expert) != kAbsent; }
  int vote(Index unit, Index expert) const { return votes_(unit, expert); }
  Index vote_count(Index unit) const;

  // Rows in the given order.
  Dataset select_rows(std::span<const Index> rows) const;
  Dataset with_features(Matrix features) const;
  Dataset with_true_labels(std::optional<Labels> labels) const;

 private:
  Matrix features_;
  VoteMatrix votes_;
  std::optional<Labels> true_labels_;
};

struct SplitSpec {
  double test_fraction = 0.3;
  std::uint64_t seed = 0;
  bool stratify = false;  // on the majority-vote label
};

struct SplitIndices {
  std::vector<Index> train;
  std::vector<Index> test;
};

// Test size is round(n * test_fraction) clamped so both parts keep a unit.
// Indices in each part are ascending.
SplitIndices split_indices(const Dataset& ds, const SplitSpec& spec);
std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec);

/// Per-column affine map x -> (x - mean) / scale, with scale the sample
/// standard deviation (divisor n - 1).
struct StandardizationRecord {
  Vector mean;
  Vector scale;

  Matrix apply(const Matrix& features) const;
  Matrix invert(const Matrix& standardized) const;
  Vector apply_row(const Vector& x) const;
};

std::pair<Dataset, StandardizationRecord> standardize(const Dataset& ds);

// CSV ingestion. One row per unit; a first row containing a non-numeric cell
// is treated as a header. Vote cells are "0", "1" or empty (absent).
Dataset load_csv(const std::filesystem::path& features_path,
                 const std::filesystem::path& votes_path,
                 const std::optional<std::filesystem::path>& labels_path = std::nullopt);

Matrix read_feature_csv(const std::filesystem::path& path);
// With allow_empty_rows, units without any vote are accepted (used for
// partial votes at prediction time).
VoteMatrix read_vote_csv(const std::filesystem::path& path, bool allow_empty_rows = false);
Labels read_label_csv(const std::filesystem::path& path);

// Writes with 17 significant digits, so load_csv reproduces the values exactly.
void save_csv(const Dataset& ds,
              const std::filesystem::path& features_path,
              const std::filesystem::path& votes_path,
              const std::optional<std::filesystem::path>& labels_path = std::nullopt);

std::string format_double(double value);

}  // namespace crowdsel
