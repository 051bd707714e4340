#pragma once

#include <stdexcept>
#include <string>

namespace relmatch {

// Base for all contract violations raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};

struct DegenerateBox : Error {
  using Error::Error;
};

struct EmptyPhrase : Error {
  using Error::Error;
};

struct IndexSetMismatch : Error {
  using Error::Error;
};

struct NoRelations : Error {
  using Error::Error;
};

struct BudgetExceeded : Error {
  using Error::Error;
};

struct GenerationFailed : Error {
  using Error::Error;
};

struct InsufficientSamples : Error {
  using Error::Error;
};

struct EmptyDataset : Error {
  using Error::Error;
};

}  // namespace relmatch
