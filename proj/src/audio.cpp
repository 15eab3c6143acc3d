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

#include "asr/audio.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace asr {

namespace {

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t read_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<char*>(b), 4);
}

void write_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<char*>(b), 2);
}

}  // namespace

AudioClip read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  ASR_REQUIRE(is.good(), "read_wav: cannot open " + path);

  char tag[5] = {0};
  is.read(tag, 4);
  ASR_REQUIRE(std::memcmp(tag, "RIFF", 4) == 0, "read_wav: not a RIFF file: " + path);
  read_u32(is);  // riff size
  is.read(tag, 4);
  ASR_REQUIRE(std::memcmp(tag, "WAVE", 4) == 0, "read_wav: not a WAVE file: " + path);

  uint16_t channels = 0, bits = 0, format = 0;
  uint32_t rate = 0;
  std::vector<char> payload;
  while (is.read(tag, 4)) {
    uint32_t chunk_size = read_u32(is);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      format = read_u16(is);
      channels = read_u16(is);
      rate = read_u32(is);
      read_u32(is);  // byte rate
      read_u16(is);  // block align
      bits = read_u16(is);
      if (chunk_size > 16) is.seekg(chunk_size - 16, std::ios::cur);
    } else if (std::memcmp(tag, "data", 4) == 0) {
      payload.resize(chunk_size);
      is.read(payload.data(), chunk_size);
      break;
    } else {
      is.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
    }
  }
  ASR_REQUIRE(format == 1 && bits == 16, "read_wav: only PCM16 is supported: " + path);
  ASR_REQUIRE(channels >= 1 && rate > 0, "read_wav: malformed fmt chunk: " + path);
  ASR_REQUIRE(!payload.empty(), "read_wav: missing data chunk: " + path);

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  size_t frame_bytes = static_cast<size_t>(channels) * 2;
  size_t frames = payload.size() / frame_bytes;
  clip.samples.resize(frames);
  for (size_t i = 0; i < frames; ++i) {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(payload.data()) + i * frame_bytes;
    int16_t s = static_cast<int16_t>(p[0] | (p[1] << 8));
    clip.samples[i] = static_cast<real>(s) / 32768.0;
  }
  return clip;
}

void write_wav(const std::string& path, const AudioClip& clip) {
  ASR_REQUIRE(clip.sample_rate > 0, "write_wav: sample_rate must be positive");
  std::ofstream os(path, std::ios::binary);
  ASR_REQUIRE(os.good(), "write_wav: cannot open " + path);

  uint32_t data_bytes = static_cast<uint32_t>(clip.samples.size() * 2);
  os.write("RIFF", 4);
  write_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  write_u32(os, 16);
  write_u16(os, 1);  // PCM
  write_u16(os, 1);  // mono
  write_u32(os, static_cast<uint32_t>(clip.sample_rate));
  write_u32(os, static_cast<uint32_t>(clip.sample_rate) * 2);
  write_u16(os, 2);
  write_u16(os, 16);
  os.write("data", 4);
  write_u32(os, data_bytes);
  for (real s : clip.samples) {
    long q = std::lround(static_cast<double>(s) * 32768.0);
    q = std::clamp(q, -32768L, 32767L);
    write_u16(os, static_cast<uint16_t>(static_cast<int16_t>(q)));
  }
}

AudioClip read_raw_f32(const std::string& path, int sample_rate) {
  ASR_REQUIRE(sample_rate > 0, "read_raw_f32: sample_rate must be positive");
  std::ifstream is(path, std::ios::binary);
  ASR_REQUIRE(is.good(), "read_raw_f32: cannot open " + path);
  is.seekg(0, std::ios::end);
  size_t bytes = static_cast<size_t>(is.tellg());
  is.seekg(0);
  ASR_REQUIRE(bytes % 4 == 0, "read_raw_f32: byte count is not a multiple of 4: " + path);

  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.samples.resize(bytes / 4);
  for (size_t i = 0; i < clip.samples.size(); ++i) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t u = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                 (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    clip.samples[i] = static_cast<real>(f);
  }
  return clip;
}

void write_raw_f32(const std::string& path, const AudioClip& clip) {
  std::ofstream os(path, std::ios::binary);
  ASR_REQUIRE(os.good(), "write_raw_f32: cannot open " + path);
  for (real s : clip.samples) {
    float f = static_cast<float>(s);
    uint32_t u;
    std::memcpy(&u, &f, 4);
    unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                          static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
    os.write(reinterpret_cast<char*>(b), 4);
  }
}

}  // namespace asr
