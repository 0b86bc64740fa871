#pragma once

namespace hypergrad {

// Sends library logging to stderr at the level named by HYPERGRAD_LOG
// (error, info or debug; default info). Unknown values fall back to info
// with a warning.
void init_logging_from_env();

} // namespace hypergrad
