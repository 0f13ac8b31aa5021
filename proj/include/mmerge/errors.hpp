#pragma once

#include <stdexcept>
#include <string>

namespace mmerge {

// Bad input data: malformed corpus, lexicon or model files.
class parse_error : public std::runtime_error {
  public:
    explicit parse_error(const std::string& what) : std::runtime_error(what) {}
};

// Bad configuration: contradictory options, missing lexicon entries, etc.
class config_error : public std::runtime_error {
  public:
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// A violated internal invariant.  Seeing one of these is a bug.
class internal_error : public std::logic_error {
  public:
    explicit internal_error(const std::string& what) : std::logic_error(what) {}
};

} // namespace mmerge
