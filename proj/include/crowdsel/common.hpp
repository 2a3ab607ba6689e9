#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>

namespace crowdsel {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Labels = Eigen::VectorXi;
using VoteMatrix = Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Cell value of a vote that was never cast.
inline constexpr std::int8_t kAbsent = -1;

// Malformed input: bad files, bad dimensions, violated preconditions.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A computation produced a non-finite value or could not be completed.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace crowdsel
