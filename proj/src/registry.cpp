#include "rlar/registry.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <set>
#include <sstream>

#include "rlar/error.hpp"

namespace rlar {

namespace fs = std::filesystem;

const RewardTool* ToolLibrary::find(std::string_view name) const {
  for (const auto& tool : tools) {
    if (tool.name == name) return &tool;
  }
  return nullptr;
}

std::size_t ToolLibrary::verified_count() const {
  return static_cast<std::size_t>(
      std::count_if(tools.begin(), tools.end(), [](const RewardTool& t) { return t.verified; }));
}

fs::path ToolLibrary::base_dir() const {
  if (manifest_path.empty()) return fs::current_path();
  const auto parent = manifest_path.parent_path();
  return parent.empty() ? fs::current_path() : parent;
}

ToolLibrary init_library(std::span<const RewardTool> seed_tools, fs::path manifest_path) {
  if (seed_tools.empty()) fail(ErrorCode::kEmptySeedSet, "seed tool set is empty");
  std::set<std::string> names;
  ToolLibrary lib;
  lib.version = 0;
  lib.manifest_path = std::move(manifest_path);
  for (const auto& tool : seed_tools) {
    validate_tool(tool);
    if (!tool.verified) {
      fail(ErrorCode::kUnverifiedTool, "seed tool '" + tool.name + "' is not verified");
    }
    if (!names.insert(tool.name).second) {
      fail(ErrorCode::kDuplicateName, "duplicate seed tool name '" + tool.name + "'");
    }
    lib.tools.push_back(tool);
  }
  save_manifest(lib);
  return lib;
}

ToolLibrary commit_tool(const ToolLibrary& lib, RewardTool tool) {
  validate_tool(tool);
  if (!tool.verified) {
    fail(ErrorCode::kUnverifiedTool, "tool '" + tool.name + "' has not passed verification");
  }
  if (lib.contains(tool.name)) {
    fail(ErrorCode::kDuplicateName, "tool '" + tool.name + "' already exists");
  }
  ToolLibrary next = lib;
  next.version = lib.version + 1;
  next.tools.push_back(std::move(tool));
  save_manifest(next);
  return next;
}

std::optional<RewardTool> lookup(const ToolLibrary& lib, std::string_view name) {
  if (const auto* tool = lib.find(name)) return *tool;
  return std::nullopt;
}

Json manifest_json(const ToolLibrary& lib) {
  return Json{{"version", lib.version}, {"tools", lib.tools}};
}

ToolLibrary library_from_manifest(const Json& manifest, fs::path manifest_path) {
  ToolLibrary lib;
  lib.manifest_path = std::move(manifest_path);
  try {
    lib.version = manifest.at("version").get<std::uint64_t>();
    std::set<std::string> names;
    for (const auto& entry : manifest.at("tools")) {
      auto tool = entry.get<RewardTool>();
      validate_tool(tool);
      if (!names.insert(tool.name).second) {
        fail(ErrorCode::kManifestCorrupt, "manifest lists '" + tool.name + "' twice");
      }
      lib.tools.push_back(std::move(tool));
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::kManifestCorrupt, std::string("manifest schema violation: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kManifestCorrupt) throw;
    fail(ErrorCode::kManifestCorrupt, e.what());
  }
  return lib;
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  static std::atomic<unsigned> counter{0};
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kPersistenceFailure, "cannot open " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      fail(ErrorCode::kPersistenceFailure, "cannot write " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    fail(ErrorCode::kPersistenceFailure, "cannot rename onto " + path.string());
  }
}

void save_manifest(const ToolLibrary& lib) {
  if (lib.manifest_path.empty()) return;
  write_file_atomic(lib.manifest_path, manifest_json(lib).dump(2) + "\n");
}

ToolLibrary load_library(const fs::path& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) fail(ErrorCode::kPersistenceFailure, "cannot read manifest " + manifest_path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  Json manifest;
  try {
    manifest = Json::parse(buf.str());
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::kManifestCorrupt, std::string("manifest is not valid JSON: ") + e.what());
  }
  return library_from_manifest(manifest, manifest_path);
}

std::vector<RewardTool> default_seed_tools() {
  const Timestamp epoch{};
  std::vector<RewardTool> seeds;
  seeds.push_back(RewardTool{
      "generic-rm", ToolKind::kBuiltin,
      "General-purpose fallback scorer: lexical overlap F1 of the response against the "
      "reference, or against the query when no reference is given.",
      {}, Backend{BackendType::kBuiltin, "lexical_overlap"}, true, epoch, "seed"});
  seeds.push_back(RewardTool{
      "nem-math", ToolKind::kBuiltin,
      "Numeric exact match for math word problems; the final answer must follow '####'.",
      {"math", "gsm8k"}, Backend{BackendType::kBuiltin, "nem_hash4"}, true, epoch, "seed"});
  seeds.push_back(RewardTool{
      "bleu2", ToolKind::kBuiltin,
      "Sentence BLEU-2 with brevity penalty between response and reference.",
      {"translation"}, Backend{BackendType::kBuiltin, "bleu2"}, true, epoch, "seed"});
  return seeds;
}

bool is_general_purpose(const RewardTool& tool) {
  return tool.kind == ToolKind::kBuiltin &&
         (tool.task_tags.empty() || tool.task_tags.contains("general"));
}

LibraryStore::LibraryStore(ToolLibrary initial)
    : current_(std::make_shared<const ToolLibrary>(std::move(initial))) {}

std::shared_ptr<const ToolLibrary> LibraryStore::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return current_;
}

std::shared_ptr<const ToolLibrary> LibraryStore::commit(RewardTool tool) {
  std::lock_guard writer(writer_mutex_);
  auto next = std::make_shared<const ToolLibrary>(commit_tool(*snapshot(), std::move(tool)));
  std::lock_guard lock(snapshot_mutex_);
  current_ = next;
  return next;
}

}  // namespace rlar
