#pragma once

#include <ostream>

namespace dsaf::cli {

// Runs the `dsaf` command line. Returns the process exit code: 0 success,
// 1 usage or configuration error, 2 data error, 3 numerical failure.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dsaf::cli
