#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "anonqcd/errors.hpp"
#include "presets_embedded.hpp"

namespace cli {

struct PresetInfo {
  std::string name;
  std::string summary;  // first comment line of the file
  std::string text;
};

// Presets in natural order: fig1, fig2, ..., fig10.
inline std::vector<PresetInfo> presets() {
  std::vector<PresetInfo> out;
  for (const auto& [name, text] : kEmbeddedPresets) {
    PresetInfo p{std::string(name), "", std::string(text)};
    if (p.text.rfind("# ", 0) == 0) p.summary = p.text.substr(2, p.text.find('\n') - 2);
    out.push_back(std::move(p));
  }
  auto key = [](const std::string& s) {
    const auto digits = s.find_first_of("0123456789");
    const std::string stem = s.substr(0, digits);
    const int n = digits == std::string::npos ? -1 : std::stoi(s.substr(digits));
    return std::make_pair(stem, n);
  };
  std::sort(out.begin(), out.end(), [&](const PresetInfo& a, const PresetInfo& b) { return key(a.name) < key(b.name); });
  return out;
}

inline std::string preset_text(const std::string& name) {
  for (const auto& [n, text] : kEmbeddedPresets)
    if (n == name) return std::string(text);
  std::string known;
  for (const auto& p : presets()) known += (known.empty() ? "" : " ") + p.name;
  throw anonqcd::ConfigError("unknown preset `" + name + "` (known: " + known + ")");
}

}  // namespace cli
