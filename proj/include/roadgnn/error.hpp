#pragma once

#include <stdexcept>
#include <string>

namespace roadgnn {

// Error kinds map to CLI exit codes: "config" -> 2, everything else -> 1.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

inline Error io_error(const std::string& msg) { return Error("io", msg); }
inline Error parse_error(const std::string& msg) { return Error("parse", msg); }
inline Error invariant_error(const std::string& msg) { return Error("invariant", msg); }
inline Error config_error(const std::string& msg) { return Error("config", msg); }
inline Error engine_error(const std::string& msg) { return Error("engine", msg); }
inline Error train_error(const std::string& msg) { return Error("train", msg); }

}  // namespace roadgnn
