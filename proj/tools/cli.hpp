#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mmif::cli {

/// Runs one command line (args exclude the program name). Returns 0 on success, 2 on usage
/// errors (after printing usage to `err`) and 1 on any other failure, reported as a single
/// "error: ..." line on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Keeps freed blocks in the heap instead of returning them to the OS. Training allocates and
/// frees the same large buffers every step, and page faults dominated otherwise.
void keep_freed_memory();

}  // namespace mmif::cli
