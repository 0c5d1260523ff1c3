#pragma once

namespace covshift {

/// Entry point of the `covshift` tool. Returns the process exit code:
/// 0 success, 1 usage or I/O error, 2 failed invariant or bound check.
int run_cli(int argc, char** argv);

}  // namespace covshift
