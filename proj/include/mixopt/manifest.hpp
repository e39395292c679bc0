#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mixopt {

std::string sha256_hex(const std::string& bytes);
std::string digest_file(const std::string& path);

/// Reproducibility record written next to every command's outputs. Digests
/// are recomputed on read; a mismatch means the files were tampered with.
struct RunManifest {
  std::string command_line;
  std::string tool_version;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config;         // flag -> value
  std::map<std::string, std::string> input_digests;  // path -> sha256
  std::map<std::string, std::string> output_digests;
  double wall_seconds = 0.0;
  std::vector<std::string> warnings;
};

std::string manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const std::string& text);
RunManifest load_manifest(const std::string& path);

/// Atomic write: temp file in the same directory, then rename.
void write_manifest(const RunManifest& m, const std::string& path);

/// Recomputes every digest recorded in the manifest; returns the paths that
/// no longer match.
std::vector<std::string> verify_manifest_digests(const RunManifest& m);

}  // namespace mixopt
