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

#ifndef ASR_CONFIG_HPP
#define ASR_CONFIG_HPP

#include <map>
#include <string>
#include <vector>

#include "asr/common.hpp"

namespace asr::config {

// Flat key=value text file; '#' starts a comment, blank lines ignored.
std::map<std::string, std::string> parse_kv_file(const std::string& path);

// Typed reader over a parsed map that records which keys were consumed,
// so unknown keys can be rejected wholesale.
class KvReader {
 public:
  explicit KvReader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  long get_long(const std::string& key, long fallback);
  bool get_bool(const std::string& key, bool fallback);
  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  // Throws listing every key that was never consumed.
  void reject_unknown() const;
  const std::map<std::string, std::string>& all() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
  std::map<std::string, bool> consumed_;
};

uint64_t file_content_hash(const std::string& path);

// Records the resolved configuration and the content hash of every input,
// one JSON object, written as <out_dir>/run_manifest.json.
void write_run_manifest(const std::string& out_dir, const std::string& command,
                        const std::map<std::string, std::string>& resolved,
                        const std::vector<std::string>& input_files);

}  // namespace asr::config

#endif  // ASR_CONFIG_HPP
