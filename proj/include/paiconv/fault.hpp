#pragma once

namespace paiconv {

/// Deliberate defects for mutation-testing the verification suite.
enum class Fault {
  kNone,
  kBackwardSign,  // flips the sign of the filter-weight gradient
};

void inject_fault(Fault f);
Fault active_fault();

}  // namespace paiconv
