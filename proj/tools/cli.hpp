#pragma once

#include <ostream>

namespace sphsde {

/// Entry point of the `sphsde` command. Exit codes: 0 success, 2 usage or
/// configuration error, 3 numerical failure.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sphsde
