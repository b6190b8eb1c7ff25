#pragma once

#include <stdexcept>
#include <string>

namespace mnode {

/// A state that was required to lie on the manifold does not.
class OffManifold : public std::domain_error {
 public:
  explicit OffManifold(const std::string& what) : std::domain_error(what) {}
};

/// Zero vector or singular matrix handed to a projection.
class DegenerateInput : public std::domain_error {
 public:
  explicit DegenerateInput(const std::string& what) : std::domain_error(what) {}
};

class InvalidConfig : public std::invalid_argument {
 public:
  explicit InvalidConfig(const std::string& what) : std::invalid_argument(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mnode
