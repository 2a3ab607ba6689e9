#include <crowdsel/data_model.hpp>
#include <crowdsel/random.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

namespace crowdsel {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      break;
    }
    cells.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return cells;
}

std::optional<double> parse_number(std::string_view cell) {
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) return std::nullopt;
  return value;
}

struct CsvTable {
  std::vector<std::vector<std::string_view>> rows;
  std::vector<std::size_t> line_numbers;
  std::string storage;
};

// Reads non-blank lines and drops a header row. Rows may carry extra trailing
// empty cells beyond the established width (a trailing comma).
CsvTable read_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  CsvTable table;
  std::ostringstream buffer;
  buffer << in.rdbuf();
  table.storage = buffer.str();

  std::string_view text(table.storage);
  std::size_t line_no = 0;
  std::size_t width = 0;
  bool first = true;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_cells(line);
    if (first) {
      first = false;
      const bool header = std::any_of(cells.begin(), cells.end(), [](std::string_view c) {
        return !c.empty() && !parse_number(c).has_value();
      });
      width = cells.size();
      if (header) continue;
    }
    while (cells.size() > width && cells.back().empty()) cells.pop_back();
    if (cells.size() != width) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(width) + " cells, found " + std::to_string(cells.size()));
    }
    table.rows.push_back(std::move(cells));
    table.line_numbers.push_back(line_no);
  }
  if (table.rows.empty()) throw ValidationError("'" + path.string() + "' contains no data rows");
  return table;
}

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

int majority_label_of(const VoteMatrix& votes, Index unit) {
  int ones = 0;
  int cast = 0;
  for (Index r = 0; r < votes.cols(); ++r) {
    if (votes(unit, r) == kAbsent) continue;
    ++cast;
    ones += votes(unit, r);
  }
  return 2 * ones >= cast ? 1 : 0;
}

}  // namespace

Dataset::Dataset(Matrix features, VoteMatrix votes, std::optional<Labels> true_labels)
    : features_(std::move(features)), votes_(std::move(votes)), true_labels_(std::move(true_labels)) {
  if (features_.rows() == 0) throw ValidationError("dataset has no units");
  if (votes_.rows() != features_.rows()) {
    throw ValidationError("dimension mismatch: " + std::to_string(features_.rows()) + " feature rows vs " +
                          std::to_string(votes_.rows()) + " vote rows");
  }
  if (votes_.cols() == 0) throw ValidationError("dataset has no experts");
  if (!features_.allFinite()) throw ValidationError("non-finite feature value");
  for (Index i = 0; i < votes_.rows(); ++i) {
    Index cast = 0;
    for (Index r = 0; r < votes_.cols(); ++r) {
      const auto v = votes_(i, r);
      if (v != kAbsent && v != 0 && v != 1) {
        throw ValidationError("non-binary vote at unit " + std::to_string(i) + ", expert " + std::to_string(r));
      }
      cast += v != kAbsent;
    }
    if (cast == 0) throw ValidationError("unit " + std::to_string(i) + " has no votes");
  }
  if (true_labels_) {
    if (true_labels_->size() != features_.rows()) {
      throw ValidationError("dimension mismatch: " + std::to_string(true_labels_->size()) + " labels vs " +
                            std::to_string(features_.rows()) + " units");
    }
    for (Index i = 0; i < true_labels_->size(); ++i) {
      const int z = (*true_labels_)(i);
      if (z != 0 && z != 1) throw ValidationError("non-binary true label at unit " + std::to_string(i));
    }
  }
}

Index Dataset::vote_count(Index unit) const {
  Index cast = 0;
  for (Index r = 0; r < d(); ++r) cast += available(unit, r);
  return cast;
}

Dataset Dataset::select_rows(std::span<const Index> rows) const {
  Matrix f(static_cast<Index>(rows.size()), k());
  VoteMatrix v(static_cast<Index>(rows.size()), d());
  std::optional<Labels> z;
  if (true_labels_) z = Labels(static_cast<Index>(rows.size()));
  for (std::size_t a = 0; a < rows.size(); ++a) {
    const Index i = rows[a];
    if (i < 0 || i >= n()) throw ValidationError("row index out of range");
    const auto row = static_cast<Index>(a);
    f.row(row) = features_.row(i);
    v.row(row) = votes_.row(i);
    if (z) (*z)(row) = (*true_labels_)(i);
  }
  return Dataset(std::move(f), std::move(v), std::move(z));
}

Dataset Dataset::with_features(Matrix features) const { return Dataset(std::move(features), votes_, true_labels_); }

Dataset Dataset::with_true_labels(std::optional<Labels> labels) const {
  return Dataset(features_, votes_, std::move(labels));
}

SplitIndices split_indices(const Dataset& ds, const SplitSpec& spec) {
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0)) {
    throw ValidationError("test_fraction must lie in (0, 1)");
  }
  const Index n = ds.n();
  if (n < 2) throw ValidationError("cannot split fewer than 2 units");
  const Index n_test = std::clamp<Index>(std::llround(static_cast<double>(n) * spec.test_fraction), 1, n - 1);

  Rng rng = make_rng(spec.seed, Stream::kSplit);
  std::vector<char> is_test(static_cast<std::size_t>(n), 0);
  if (!spec.stratify) {
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    portable_shuffle(order.begin(), order.end(), rng);
    for (Index a = 0; a < n_test; ++a) is_test[static_cast<std::size_t>(order[static_cast<std::size_t>(a)])] = 1;
  } else {
    std::vector<Index> strata[2];
    for (Index i = 0; i < n; ++i) strata[majority_label_of(ds.votes(), i)].push_back(i);
    // Largest-remainder allocation of n_test across the two strata.
    double share[2];
    Index take[2];
    for (int s = 0; s < 2; ++s) {
      share[s] = static_cast<double>(strata[s].size()) * static_cast<double>(n_test) / static_cast<double>(n);
      take[s] = static_cast<Index>(std::floor(share[s]));
    }
    if (take[0] + take[1] < n_test) {
      const int s = (share[0] - static_cast<double>(take[0])) >= (share[1] - static_cast<double>(take[1])) ? 0 : 1;
      ++take[s];
    }
    for (int s = 0; s < 2; ++s) {
      take[s] = std::min<Index>(take[s], static_cast<Index>(strata[s].size()));
      portable_shuffle(strata[s].begin(), strata[s].end(), rng);
      for (Index a = 0; a < take[s]; ++a) is_test[static_cast<std::size_t>(strata[s][static_cast<std::size_t>(a)])] = 1;
    }
  }
  SplitIndices out;
  for (Index i = 0; i < n; ++i) (is_test[static_cast<std::size_t>(i)] ? out.test : out.train).push_back(i);
  if (out.train.empty() || out.test.empty()) throw ValidationError("degenerate split");
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec) {
  const auto idx = split_indices(ds, spec);
  return {ds.select_rows(idx.train), ds.select_rows(idx.test)};
}

Matrix StandardizationRecord::apply(const Matrix& features) const {
  if (features.cols() != mean.size()) throw ValidationError("standardization width mismatch");
  return (features.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

Matrix StandardizationRecord::invert(const Matrix& standardized) const {
  if (standardized.cols() != mean.size()) throw ValidationError("standardization width mismatch");
  Matrix out = standardized.array().rowwise() * scale.transpose().array();
  return out.rowwise() + mean.transpose();
}

Vector StandardizationRecord::apply_row(const Vector& x) const {
  if (x.size() != mean.size()) throw ValidationError("standardization width mismatch");
  return (x - mean).cwiseQuotient(scale);
}

std::pair<Dataset, StandardizationRecord> standardize(const Dataset& ds) {
  if (ds.n() < 2) throw ValidationError("standardization needs at least 2 units");
  StandardizationRecord rec;
  rec.mean = ds.features().colwise().mean().transpose();
  rec.scale.resize(ds.k());
  for (Index j = 0; j < ds.k(); ++j) {
    const double ss = (ds.features().col(j).array() - rec.mean(j)).square().sum();
    const double sd = std::sqrt(ss / static_cast<double>(ds.n() - 1));
    if (!(sd > 0.0)) throw ValidationError("feature column " + std::to_string(j) + " is constant");
    rec.scale(j) = sd;
  }
  return {ds.with_features(rec.apply(ds.features())), rec};
}

Matrix read_feature_csv(const std::filesystem::path& path) {
  const auto table = read_table(path);
  const auto rows = static_cast<Index>(table.rows.size());
  const auto cols = static_cast<Index>(table.rows.front().size());
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const auto& cells = table.rows[static_cast<std::size_t>(i)];
    for (Index j = 0; j < cols; ++j) {
      const auto value = parse_number(cells[static_cast<std::size_t>(j)]);
      if (!value || !std::isfinite(*value)) {
        throw ValidationError(where(path, table.line_numbers[static_cast<std::size_t>(i)]) +
                              "non-numeric feature cell '" + std::string(cells[static_cast<std::size_t>(j)]) + "'");
      }
      out(i, j) = *value;
    }
  }
  return out;
}

VoteMatrix read_vote_csv(const std::filesystem::path& path, bool allow_empty_rows) {
  const auto table = read_table(path);
  const auto rows = static_cast<Index>(table.rows.size());
  const auto cols = static_cast<Index>(table.rows.front().size());
  VoteMatrix out(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const auto& cells = table.rows[static_cast<std::size_t>(i)];
    const auto line = table.line_numbers[static_cast<std::size_t>(i)];
    Index cast = 0;
    for (Index r = 0; r < cols; ++r) {
      const auto cell = cells[static_cast<std::size_t>(r)];
      if (cell.empty()) {
        out(i, r) = kAbsent;
      } else if (cell == "0" || cell == "1") {
        out(i, r) = static_cast<std::int8_t>(cell[0] - '0');
        ++cast;
      } else {
        throw ValidationError(where(path, line) + "non-binary vote '" + std::string(cell) + "'");
      }
    }
    if (cast == 0 && !allow_empty_rows) throw ValidationError(where(path, line) + "unit has zero votes");
  }
  return out;
}

Labels read_label_csv(const std::filesystem::path& path) {
  const auto table = read_table(path);
  if (table.rows.front().size() != 1) throw ValidationError("'" + path.string() + "' must have one column");
  Labels out(static_cast<Index>(table.rows.size()));
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto cell = table.rows[i][0];
    if (cell != "0" && cell != "1") {
      throw ValidationError(where(path, table.line_numbers[i]) + "non-binary label '" + std::string(cell) + "'");
    }
    out(static_cast<Index>(i)) = cell[0] - '0';
  }
  return out;
}

Dataset load_csv(const std::filesystem::path& features_path,
                 const std::filesystem::path& votes_path,
                 const std::optional<std::filesystem::path>& labels_path) {
  Matrix features = read_feature_csv(features_path);
  VoteMatrix votes = read_vote_csv(votes_path);
  std::optional<Labels> labels;
  if (labels_path) labels = read_label_csv(*labels_path);
  return Dataset(std::move(features), std::move(votes), std::move(labels));
}

std::string format_double(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

void save_csv(const Dataset& ds,
              const std::filesystem::path& features_path,
              const std::filesystem::path& votes_path,
              const std::optional<std::filesystem::path>& labels_path) {
  auto open = [](const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw ValidationError("cannot write '" + p.string() + "'");
    return out;
  };
  {
    auto out = open(features_path);
    for (Index i = 0; i < ds.n(); ++i) {
      for (Index j = 0; j < ds.k(); ++j) {
        if (j) out << ',';
        out << format_double(ds.features()(i, j));
      }
      out << '\n';
    }
  }
  {
    auto out = open(votes_path);
    for (Index i = 0; i < ds.n(); ++i) {
      for (Index r = 0; r < ds.d(); ++r) {
        if (r) out << ',';
        if (ds.available(i, r)) out << ds.vote(i, r);
      }
      out << '\n';
    }
  }
  if (labels_path) {
    if (!ds.has_true_labels()) throw ValidationError("dataset has no true labels to write");
    auto out = open(*labels_path);
    for (Index i = 0; i < ds.n(); ++i) out << (*ds.true_labels())(i) << '\n';
  }
}

}  // namespace crowdsel
