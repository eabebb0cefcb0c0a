#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "rlar/serialization.hpp"
#include "rlar/types.hpp"

namespace rlar {

/// The versioned, append-only reward tool library. Values are immutable
/// snapshots; growth produces a new value at version + 1.
struct ToolLibrary {
  std::uint64_t version = 0;
  std::vector<RewardTool> tools;
  // Empty path means the library lives in memory only.
  std::filesystem::path manifest_path;

  const RewardTool* find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }
  std::size_t verified_count() const;

  /// Directory that relative script locators resolve against.
  std::filesystem::path base_dir() const;

  friend bool operator==(const ToolLibrary&, const ToolLibrary&) = default;
};

ToolLibrary init_library(std::span<const RewardTool> seed_tools,
                         std::filesystem::path manifest_path);

/// Appends a verified tool. The manifest is rewritten before the new value is
/// returned, so a persistence failure leaves the caller's library untouched.
ToolLibrary commit_tool(const ToolLibrary& lib, RewardTool tool);

std::optional<RewardTool> lookup(const ToolLibrary& lib, std::string_view name);

Json manifest_json(const ToolLibrary& lib);
ToolLibrary library_from_manifest(const Json& manifest, std::filesystem::path manifest_path);

/// Write-temp-then-rename.
void save_manifest(const ToolLibrary& lib);
ToolLibrary load_library(const std::filesystem::path& manifest_path);

/// Writes `contents` to `path` atomically. Throws kPersistenceFailure.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// The builtin tools a fresh library is seeded with: the general-purpose
/// "generic-rm", "nem-math" and "bleu2".
std::vector<RewardTool> default_seed_tools();

/// A builtin with no task tags, or tagged "general", counts as a
/// general-purpose fallback tool.
bool is_general_purpose(const RewardTool& tool);

/// Shared holder for the current library snapshot. Readers take a snapshot
/// and keep using it; commits are serialized through a single writer and
/// publish the new snapshot only after the manifest is on disk.
class LibraryStore {
 public:
  explicit LibraryStore(ToolLibrary initial);

  std::shared_ptr<const ToolLibrary> snapshot() const;

  /// Commits against the latest snapshot and returns the published result.
  std::shared_ptr<const ToolLibrary> commit(RewardTool tool);

 private:
  mutable std::mutex snapshot_mutex_;
  std::mutex writer_mutex_;
  std::shared_ptr<const ToolLibrary> current_;
};

}  // namespace rlar
