#pragma once

// Published per-spot aperture counts (kcounts) with the printed fractional
// and rounded ion numbers, for the two implanted areas.

#include <array>

namespace reference {

struct SpotRow {
    int spot;
    double kcounts;
    double units;  // as printed, two decimals at most
    long rounded;
};

inline constexpr double kUnitA = 395.0;  // kcounts
inline constexpr double kUnitB = 334.0;  // kcounts

inline constexpr std::array<SpotRow, 12> kAreaA{{
    {1, 1231, 3.12, 3},
    {2, 778, 1.97, 2},
    {3, 1998, 5.06, 5},
    {4, 1883, 4.77, 5},
    {5, 396, 1.00, 1},
    {6, 732, 1.85, 2},
    {7, 871, 2.21, 2},
    {8, 434, 1.10, 1},
    {9, 1516, 3.84, 4},
    {10, 1105, 2.80, 3},
    {11, 717, 1.82, 2},
    {12, 876, 2.22, 2},
}};

inline constexpr std::array<SpotRow, 12> kAreaB{{
    {1, 900, 2.69, 3},
    {2, 677, 2.03, 2},
    {3, 723, 2.16, 2},
    {4, 956, 2.86, 3},
    {5, 299, 0.90, 1},
    {6, 702, 2.10, 2},
    {7, 563, 1.69, 2},
    {8, 424, 1.27, 1},
    {9, 644, 1.93, 2},
    {10, 964, 2.89, 3},
    {11, 371, 1.11, 1},
    {12, 413, 1.24, 1},
}};

inline constexpr long kSumA = 32;
inline constexpr long kSumB = 23;

}  // namespace reference
