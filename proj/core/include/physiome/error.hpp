#pragma once

#include <stdexcept>
#include <string>

namespace physiome {

// Exit codes shared by the command-line tool.
enum class ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kUsage = 2,
    kConfig = 3,
    kStage = 4,
    kNumeric = 5,
};

class Error : public std::runtime_error {
public:
    Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ExitCode code() const { return code_; }

private:
    ExitCode code_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

class StageError : public Error {
public:
    explicit StageError(const std::string& what) : Error(ExitCode::kStage, what) {}
};

// Raised when a loss or activation becomes non-finite.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ExitCode::kNumeric, what) {}
};

class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error(ExitCode::kFailure, what) {}
};

}  // namespace physiome
