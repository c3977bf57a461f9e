#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace unept {

/// Integer class-label grid. 255 is reserved as the ignore value and never
/// participates in losses or metrics.
struct LabelMap {
    static constexpr std::int32_t kIgnore = 255;

    int height = 0;
    int width = 0;
    std::vector<std::int32_t> values;  // row-major

    LabelMap() = default;
    LabelMap(int h, int w, std::int32_t fill = 0)
        : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    std::int32_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    std::int32_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }

    std::size_t size() const { return values.size(); }

    bool operator==(const LabelMap& o) const {
        return height == o.height && width == o.width && values == o.values;
    }
};

}  // namespace unept
