#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace c2f {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

class EmptySceneError : public Error {
public:
    using Error::Error;
};

/// No cloud point fell inside the crop cube. Carries the cube center.
class EmptyCropError : public Error {
public:
    EmptyCropError(const std::string& what, Eigen::Vector3d center)
        : Error(what), center_(std::move(center)) {}
    const Eigen::Vector3d& center() const noexcept { return center_; }

private:
    Eigen::Vector3d center_;
};

class OutOfBoundsError : public Error {
public:
    using Error::Error;
};

/// Every candidate scored (numerically) zero.
class NoSignalError : public Error {
public:
    using Error::Error;
};

class ContractError : public Error {
public:
    using Error::Error;
};

class AlignmentError : public Error {
public:
    AlignmentError(const std::string& what, std::size_t plan_steps, std::size_t keyframes)
        : Error(what), plan_steps_(plan_steps), keyframes_(keyframes) {}
    std::size_t plan_steps() const noexcept { return plan_steps_; }
    std::size_t keyframes() const noexcept { return keyframes_; }

private:
    std::size_t plan_steps_;
    std::size_t keyframes_;
};

class UnknownProgressError : public Error {
public:
    using Error::Error;
};

/// Planner output could not be parsed. Keeps the raw text for diagnosis.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::string raw) : Error(what), raw_(std::move(raw)) {}
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

class ProtocolViolation : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class GenerationError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

}  // namespace c2f
