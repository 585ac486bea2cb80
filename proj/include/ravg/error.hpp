#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ravg {

enum class Errc {
  invalid_dimension,
  invalid_observation,
  invalid_argument,
  invalid_sparsity,
  unsupported_merge,
  corrupt_snapshot,
  insufficient_data,
  degenerate_moments,
  singular_system,
  breakdown,
  diverged,
  undefined_metric,
  bound_inapplicable,
  parse_error,
  io_error,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_dimension: return "invalid-dimension";
    case Errc::invalid_observation: return "invalid-observation";
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::invalid_sparsity: return "invalid-sparsity";
    case Errc::unsupported_merge: return "unsupported-merge";
    case Errc::corrupt_snapshot: return "corrupt-snapshot";
    case Errc::insufficient_data: return "insufficient-data";
    case Errc::degenerate_moments: return "degenerate-moments";
    case Errc::singular_system: return "singular-system";
    case Errc::breakdown: return "breakdown";
    case Errc::diverged: return "diverged";
    case Errc::undefined_metric: return "undefined-metric";
    case Errc::bound_inapplicable: return "bound-inapplicable";
    case Errc::parse_error: return "parse-error";
    case Errc::io_error: return "io-error";
  }
  return "unknown";
}

/// Numeric failures (exit code 1 in the CLI) as opposed to bad input (exit code 2).
constexpr bool is_numeric_failure(Errc code) noexcept {
  return code == Errc::singular_system || code == Errc::breakdown ||
         code == Errc::diverged || code == Errc::degenerate_moments ||
         code == Errc::bound_inapplicable;
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace ravg
