#include "transkim/report.hpp"

#include <cstdio>
#include <sstream>

#include "transkim/errors.hpp"
#include "transkim/flops_report.hpp"

namespace transkim {

Rgb prune_color(int prune_layer, int n_layers) {
  if (n_layers < 1 || prune_layer < 1 || prune_layer > n_layers + 1) {
    throw ContractError("prune_color: layer " + std::to_string(prune_layer) +
                        " outside [1, " + std::to_string(n_layers + 1) + "]");
  }
  if (prune_layer == n_layers + 1) return kNeverPruned;
  const auto step = static_cast<std::size_t>((prune_layer - 1) * 12 / n_layers);
  return kPrunePalette[step];
}

std::size_t trace_layers(const SkimTrace& trace) {
  return trace.examples.empty() ? 0 : trace.examples.front().kept_per_layer.size();
}

namespace {

std::string hex(Rgb c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (const char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string render_html(const SkimTrace& trace) {
  const std::size_t L = trace_layers(trace);
  std::ostringstream os;
  os << "<!DOCTYPE html>\n"
     << "<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n"
     << "<title>Skim trace " << escape(trace.config_digest) << "</title>\n"
     << "<style>\n"
     << "body{font-family:sans-serif;margin:1.5em}\n"
     << ".tok{display:inline-block;padding:1px 3px;margin:1px;color:#fff;"
        "font-family:monospace;border-radius:2px}\n"
     << ".ex{margin:.4em 0}\n.id{color:#666;margin-right:.5em}\n"
     << "table{border-collapse:collapse}td,th{padding:2px 8px;text-align:right}\n"
     << "</style>\n</head>\n<body>\n"
     << "<h1>Token skimming</h1>\n"
     << "<p>config " << escape(trace.config_digest) << ", " << trace.examples.size()
     << " examples, " << L << " layers</p>\n";
  if (trace.examples.empty()) {
    os << "<p class=\"banner\">no examples</p>\n</body>\n</html>\n";
    return os.str();
  }

  os << "<h2>Legend</h2>\n<div class=\"legend\">\n";
  for (std::size_t k = 1; k <= L + 1; ++k) {
    const Rgb c = prune_color(static_cast<int>(k), static_cast<int>(L));
    os << "<span class=\"tok\" style=\"background:" << hex(c) << "\">"
       << (k == L + 1 ? std::string("never skimmed") : "layer " + std::to_string(k))
       << "</span>\n";
  }
  os << "</div>\n<h2>Examples</h2>\n";
  for (const auto& ex : trace.examples) {
    os << "<div class=\"ex\"><span class=\"id\">#" << ex.id << "</span>";
    for (std::size_t n = 0; n < ex.tokens.size(); ++n) {
      const int pl = ex.prune_layer[n];
      os << "<span class=\"tok\" data-prune=\"" << pl << "\" style=\"background:"
         << hex(prune_color(pl, static_cast<int>(L))) << "\" title=\"prune layer " << pl
         << "\">" << escape(ex.tokens[n]) << "</span>";
    }
    os << "</div>\n";
  }

  const auto curve = layerwise_curve(std::span<const SkimTrace>(&trace, 1));
  os << "<h2>Retention</h2>\n<table>\n<tr><th>layer</th><th>retention</th></tr>\n";
  for (std::size_t l = 0; l < curve.size(); ++l) {
    os << "<tr><td>" << l << "</td><td>" << fixed(curve[l], 4) << "</td></tr>\n";
  }
  os << "</table>\n<p>normalized area " << fixed(curve_area(curve), 4) << "</p>\n";
  const double w = 40.0 * static_cast<double>(curve.size());
  os << "<svg width=\"" << fixed(w + 20, 0) << "\" height=\"120\" "
     << "xmlns=\"http://www.w3.org/2000/svg\">\n<polyline fill=\"none\" stroke=\"#1b3787\" "
     << "stroke-width=\"2\" points=\"";
  for (std::size_t l = 0; l < curve.size(); ++l) {
    os << (l ? " " : "") << fixed(10 + 40.0 * static_cast<double>(l), 1) << ","
       << fixed(110 - 100 * curve[l], 1);
  }
  os << "\"/>\n</svg>\n</body>\n</html>\n";
  return os.str();
}

std::string render_csv(const SkimTrace& trace) {
  std::string out = "layer,retention\n";
  if (trace.examples.empty()) return out;
  const auto curve = layerwise_curve(std::span<const SkimTrace>(&trace, 1));
  char buf[64];
  for (std::size_t l = 0; l < curve.size(); ++l) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", l, curve[l]);
    out += buf;
  }
  return out;
}

}  // namespace transkim
