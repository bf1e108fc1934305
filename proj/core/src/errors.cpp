#include "calm/errors.hpp"

#include <utility>

namespace calm {

FileError::FileError(std::string path, const std::string& what)
    : std::runtime_error(path + ": " + what), path_(std::move(path)) {}

SchemaError::SchemaError(std::string field, const std::string& what)
    : std::runtime_error("field '" + field + "': " + what), field_(std::move(field)) {}

DimensionError::DimensionError(std::string field, const std::string& what)
    : std::runtime_error("field '" + field + "': " + what), field_(std::move(field)) {}

}  // namespace calm
