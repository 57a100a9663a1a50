#include "bag/errors.hpp"

#include <fmt/format.h>

namespace bag {

PartialFailure::PartialFailure(std::size_t failed_, std::size_t total_,
                               const std::string& first_error)
    : GatewayError(fmt::format("{} of {} samples failed: {}", failed_, total_, first_error)),
      failed(failed_),
      total(total_) {}

PartialBelief::PartialBelief(std::size_t failed_, std::size_t k_)
    : Error(fmt::format("belief state incomplete: {} of {} samples failed", failed_, k_)),
      failed(failed_),
      k(k_) {}

MissingSlot::MissingSlot(const std::string& slot_)
    : Error(fmt::format("missing slot '{}'", slot_)), slot(slot_) {}

UnknownSlot::UnknownSlot(const std::string& slot_)
    : Error(fmt::format("unknown slot '{}'", slot_)), slot(slot_) {}

}  // namespace bag
