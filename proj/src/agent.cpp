#include "rlar/agent.hpp"

#include <array>
#include <cctype>
#include <utility>

#include "rlar/error.hpp"

namespace rlar {

namespace {

constexpr std::pair<std::string_view, std::string_view> kPromptAssets[] = {
#include "rlar/prompt_assets.inc"
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string NullAgent::complete(const std::string&) {
  fail(ErrorCode::kBackendUnavailable, "no agent endpoint configured");
}

std::string_view prompt_template(std::string_view name) {
  for (const auto& [asset, text] : kPromptAssets) {
    if (asset == name) return text;
  }
  fail(ErrorCode::kInvalidArgument, "unknown prompt asset '" + std::string(name) + "'");
}

std::string render_prompt(std::string_view name, const std::map<std::string, std::string>& vars) {
  const std::string_view tmpl = prompt_template(name);
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const std::string key(tmpl.substr(i + 1, close - i - 1));
        if (auto it = vars.find(key); it != vars.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

std::string first_line(std::string_view reply) {
  std::size_t start = 0;
  while (start < reply.size()) {
    auto end = reply.find('\n', start);
    if (end == std::string_view::npos) end = reply.size();
    const auto line = trim(reply.substr(start, end - start));
    if (!line.empty()) return std::string(line);
    start = end + 1;
  }
  return {};
}

std::string truncate_text(std::string_view text, std::size_t max_chars) {
  if (text.size() <= max_chars) return std::string(text);
  std::size_t cut = max_chars;
  // Do not split a UTF-8 sequence.
  while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
  return std::string(text.substr(0, cut)) + " [truncated]";
}

}  // namespace rlar
