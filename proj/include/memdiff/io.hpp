#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace memdiff::io {

// %.17g round-trip formatting; all CSV output goes through this so reruns
// are byte-identical.
std::string fmt(double v);
std::string fmt(int v);
std::string fmt(uint64_t v);

std::string join_csv(const std::vector<std::string>& fields);

void write_text(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);

void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

void ensure_dir(const std::string& path);
std::string timestamp_tag();

uint64_t fnv1a(const std::string& s);
std::string hex64(uint64_t v);

std::string version_string();

}  // namespace memdiff::io
