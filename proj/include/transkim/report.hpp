#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "transkim/trace.hpp"

namespace transkim {

struct Rgb {
  std::uint8_t r, g, b;
};

// Twelve steps from teal (pruned early) to navy (pruned late).
inline constexpr std::array<Rgb, 12> kPrunePalette{{
    {38, 206, 205}, {36, 185, 195}, {35, 167, 187}, {34, 149, 179},
    {33, 133, 171}, {31, 114, 162}, {30, 96, 154},  {29, 82, 147},
    {28, 68, 141},  {27, 55, 135},  {27, 55, 135},  {27, 55, 135},
}};
inline constexpr Rgb kNeverPruned{0, 0, 0};

// Colour of a token skimmed entering layer k (1..L); L + 1 maps to black.
Rgb prune_color(int prune_layer, int n_layers);

// Layer count a trace was recorded with (0 when it has no examples).
std::size_t trace_layers(const SkimTrace& trace);

// Self-contained HTML page: one row of coloured tokens per example, a legend
// and the retention curve. Output is a pure function of the trace.
std::string render_html(const SkimTrace& trace);

// "layer,retention" header then one row per curve entry (layer 0..L).
std::string render_csv(const SkimTrace& trace);

}  // namespace transkim
