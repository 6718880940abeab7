#pragma once

#include <stdexcept>
#include <string>

namespace pscl {

// Error taxonomy. Exit-code mapping lives in the CLI: config 2, runtime 3, io 4.

struct dim_error : std::runtime_error {
  explicit dim_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct contract_error : std::logic_error {
  explicit contract_error(const std::string& msg) : std::logic_error(msg) {}
};

struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when training hits a non-finite loss; carries the diagnostic dump.
struct train_abort_error : std::runtime_error {
  explicit train_abort_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check_contract(bool ok, const std::string& msg) {
  if (!ok) throw contract_error(msg);
}

}  // namespace pscl
