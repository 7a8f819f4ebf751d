#pragma once

#include <stdexcept>
#include <string>

namespace tgd {

/// Base of every error raised by the library. `kind()` is a stable short tag
/// (e.g. "format", "shape") that the command-line front end maps to exit codes.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

// Input data problems.
struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error("format", w) {}
};
struct UnsupportedModeError : Error {
  explicit UnsupportedModeError(const std::string& w) : Error("unsupported-mode", w) {}
};
struct TruncationError : Error {
  explicit TruncationError(const std::string& w) : Error("truncation", w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error("io", w) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error("shape", w) {}
};
struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error("dimension", w) {}
};
struct LayoutError : Error {
  explicit LayoutError(const std::string& w) : Error("layout", w) {}
};
struct ParameterError : Error {
  explicit ParameterError(const std::string& w) : Error("parameter", w) {}
};
struct FrequencyError : Error {
  explicit FrequencyError(const std::string& w) : Error("frequency", w) {}
};
struct DegenerateBankError : Error {
  explicit DegenerateBankError(const std::string& w) : Error("degenerate-bank", w) {}
};
struct DensityError : Error {
  explicit DensityError(const std::string& w) : Error("density", w) {}
};
struct SpecError : Error {
  explicit SpecError(const std::string& w) : Error("spec", w) {}
};

// Numerical failures.
struct SingularNoiseError : Error {
  explicit SingularNoiseError(const std::string& w) : Error("singular-noise", w) {}
};
struct InvalidMapError : Error {
  explicit InvalidMapError(const std::string& w) : Error("invalid-map", w) {}
};
struct IntegrationError : Error {
  explicit IntegrationError(const std::string& w) : Error("numerical-integration", w) {}
};
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& w) : Error("divergence", w) {}
};
struct NonFiniteLossError : Error {
  NonFiniteLossError(const std::string& w, std::string last_good)
      : Error("non-finite-loss", w), last_good_checkpoint(std::move(last_good)) {}
  std::string last_good_checkpoint;
};

/// True for errors that represent numerical failure rather than bad input.
inline bool is_numerical(const Error& e) {
  const auto& k = e.kind();
  return k == "singular-noise" || k == "invalid-map" || k == "numerical-integration" ||
         k == "divergence" || k == "non-finite-loss";
}

}  // namespace tgd
