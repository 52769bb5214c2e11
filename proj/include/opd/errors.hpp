#ifndef OPD_ERRORS_HPP_
#define OPD_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace opd {

// Invalid configuration: bad spec fields, unknown keys, dimension mismatch.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An operation was called outside its contract (stepping a terminal state,
// empty batch, missing labels...).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite gradients or losses during optimization.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A teacher that does not meet the required greedy success rate.
class TeacherQualityError : public std::runtime_error {
 public:
  TeacherQualityError(const std::string& what, double measured_rate)
      : std::runtime_error(what), measured_rate_(measured_rate) {}
  double measured_rate() const { return measured_rate_; }

 private:
  double measured_rate_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace opd

#endif  // OPD_ERRORS_HPP_
