#pragma once

#include <memory>

namespace CLI {
class App;
}

namespace sobelkey {

// Bound CLI11 app with its option storage riding along (reflection tests walk
// the parser table through this).
std::shared_ptr<CLI::App> make_cli_app();

// exit codes: 0 ok, 1 usage, 2 data error, 3 numeric abort
int cli_run(int argc, const char* const* argv);

}  // namespace sobelkey
