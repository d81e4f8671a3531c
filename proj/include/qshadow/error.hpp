#pragma once

#include <stdexcept>
#include <string>

namespace qshadow {

enum class Errc {
  dimension_mismatch,
  precondition,
  invalid_argument,
  unknown_system,
  gap_violation,
  intersection_dimension,
  no_block_index,
  overflow,
  divergence,
  contract_failure,
  retry_exhausted,
  no_transition,
  sample_budget,
  config,
};

const char* to_string(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace qshadow
