// Copyright 2026 The asr-toolkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "asr/config.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace asr::config {

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream is(path);
  ASR_REQUIRE(is.good(), "config: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    auto begin = line.find_first_not_of(" \t\r");
    if (begin == std::string::npos) continue;
    auto end = line.find_last_not_of(" \t\r");
    line = line.substr(begin, end - begin + 1);
    auto eq = line.find('=');
    ASR_REQUIRE(eq != std::string::npos,
                "config: line " + std::to_string(lineno) + " is not key=value in " + path);
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    ASR_REQUIRE(!key.empty(), "config: empty key on line " + std::to_string(lineno));
    ASR_REQUIRE(kv.emplace(key, value).second, "config: duplicate key '" + key + "' in " + path);
  }
  return kv;
}

std::string KvReader::get_string(const std::string& key, const std::string& fallback) {
  consumed_[key] = true;
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

double KvReader::get_double(const std::string& key, double fallback) {
  consumed_[key] = true;
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stod(it->second);
}

long KvReader::get_long(const std::string& key, long fallback) {
  consumed_[key] = true;
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stol(it->second);
}

bool KvReader::get_bool(const std::string& key, bool fallback) {
  consumed_[key] = true;
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  fail("config: '" + key + "' has non-boolean value '" + v + "'");
}

void KvReader::reject_unknown() const {
  std::string unknown;
  for (const auto& [key, value] : kv_)
    if (!consumed_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
  ASR_REQUIRE(unknown.empty(), "config: unknown keys: " + unknown);
}

uint64_t file_content_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  ASR_REQUIRE(is.good(), "hash: cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0)
    h = fnv1a64(buf, static_cast<size_t>(is.gcount()), h);
  return h;
}

void write_run_manifest(const std::string& out_dir, const std::string& command,
                        const std::map<std::string, std::string>& resolved,
                        const std::vector<std::string>& input_files) {
  std::filesystem::create_directories(out_dir);
  nlohmann::json j;
  j["command"] = command;
  j["config"] = resolved;
  nlohmann::json inputs = nlohmann::json::object();
  for (const auto& f : input_files) {
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(file_content_hash(f)));
    inputs[f] = hex;
  }
  j["input_hashes"] = inputs;
  std::ofstream os(out_dir + "/run_manifest.json");
  ASR_REQUIRE(os.good(), "manifest: cannot write to " + out_dir);
  os << j.dump(2) << '\n';
}

}  // namespace asr::config
