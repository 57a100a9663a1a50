#pragma once

#include <span>
#include <string_view>

namespace bag::detail {

struct PromptAsset {
    std::string_view file;
    std::string_view content;
};

/// Every file under prompts/, embedded at build time, sorted by name.
std::span<const PromptAsset> prompt_assets();

}  // namespace bag::detail
