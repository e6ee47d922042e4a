#pragma once

#include <stdexcept>
#include <string>

namespace tabatt {

struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidAxis : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonScalarLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidGeometry : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateBatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SingularSystem : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidSpec : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TooShort : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TooFewSamples : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonPositiveTarget : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidEpoch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GradcheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace tabatt
