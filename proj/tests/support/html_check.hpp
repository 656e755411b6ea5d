#pragma once

// Minimal HTML well-formedness check: every non-void element is closed in
// order, attributes are quoted, and the document has html/head/body.

#include <algorithm>
#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace transkim::testing {

// Empty string when well formed, else a description of the first problem.
inline std::string html_problem(std::string_view doc) {
  static constexpr std::array<std::string_view, 6> kVoid{"meta", "br", "hr", "img", "link", "input"};
  std::vector<std::string> stack;
  bool saw_html = false, saw_head = false, saw_body = false;
  std::size_t i = 0;
  while ((i = doc.find('<', i)) != std::string_view::npos) {
    const std::size_t end = doc.find('>', i);
    if (end == std::string_view::npos) return "unterminated tag at " + std::to_string(i);
    std::string_view tag = doc.substr(i + 1, end - i - 1);
    i = end + 1;
    if (tag.starts_with("!")) continue;  // doctype
    const bool closing = tag.starts_with("/");
    if (closing) tag.remove_prefix(1);
    const bool self_closing = tag.ends_with("/");
    std::size_t n = 0;
    while (n < tag.size() && (std::isalnum(static_cast<unsigned char>(tag[n])) != 0)) ++n;
    const std::string name(tag.substr(0, n));
    if (name.empty()) return "empty tag name before offset " + std::to_string(i);
    if (std::count(tag.begin(), tag.end(), '"') % 2 != 0) return "unbalanced quotes in <" + name;
    saw_html |= name == "html";
    saw_head |= name == "head";
    saw_body |= name == "body";
    if (closing) {
      if (stack.empty() || stack.back() != name) {
        return "</" + name + "> does not close <" + (stack.empty() ? "" : stack.back()) + ">";
      }
      stack.pop_back();
    } else if (!self_closing && std::find(kVoid.begin(), kVoid.end(), name) == kVoid.end()) {
      stack.push_back(name);
    }
  }
  if (!stack.empty()) return "<" + stack.back() + "> is never closed";
  if (!saw_html || !saw_head || !saw_body) return "missing html, head or body";
  return {};
}

}  // namespace transkim::testing
