#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace snp {

// Runs one `snp` invocation. args[0] is the program name. Returns the process
// exit code: 0 success, 1 usage error, 2 data or format error, 3 internal
// invariant violation.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace snp
