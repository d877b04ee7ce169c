#pragma once

#include <iosfwd>

namespace ssda::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kTrainingFault = 3,
  kCorruptArtifact = 4,
};

/// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ssda::cli
