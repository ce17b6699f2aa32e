#pragma once

#include <stdexcept>
#include <string>

namespace vdc {

// Every failure the library reports derives from Error so callers can catch
// one type at the CLI boundary and still dispatch on category when needed.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class PlanError : public Error {
 public:
  using Error::Error;
};

class CompatibilityError : public Error {
 public:
  using Error::Error;
};

class SelectionError : public Error {
 public:
  using Error::Error;
};

class StatsError : public Error {
 public:
  using Error::Error;
};

class CacheError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss during expert or evaluation training.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch)
      : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

// Non-finite loss inside an unrolled inner loop.
class UnrollError : public Error {
 public:
  UnrollError(const std::string& what, int step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

// Expert segment whose endpoints coincide; the normalized loss is undefined.
class DegenerateSegmentError : public Error {
 public:
  using Error::Error;
};

// Outer distillation loop failure (non-finite objective at some iteration).
class DistillError : public Error {
 public:
  DistillError(const std::string& what, int iteration)
      : Error(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

class EvalError : public Error {
 public:
  EvalError(const std::string& what, int seed, int epoch)
      : Error(what + " (seed " + std::to_string(seed) + ", epoch " + std::to_string(epoch) + ")"),
        seed_(seed),
        epoch_(epoch) {}
  int seed() const noexcept { return seed_; }
  int epoch() const noexcept { return epoch_; }

 private:
  int seed_;
  int epoch_;
};

class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace vdc
