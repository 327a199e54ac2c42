#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace fcrec {

enum class UserId : std::uint32_t {};
enum class ItemId : std::uint32_t {};

template <typename Id>
constexpr auto raw(Id id) {
  return static_cast<std::underlying_type_t<Id>>(id);
}

// Non-finite loss or gradient during local training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fcrec
