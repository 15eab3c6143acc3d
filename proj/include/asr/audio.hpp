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

#ifndef ASR_AUDIO_HPP
#define ASR_AUDIO_HPP

#include <string>
#include <vector>

#include "asr/common.hpp"

namespace asr {

struct AudioClip {
  std::vector<real> samples;
  int sample_rate = 0;

  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

// PCM16 WAV. Multi-channel input is reduced to its first channel.
AudioClip read_wav(const std::string& path);
void write_wav(const std::string& path, const AudioClip& clip);

// Raw little-endian float32 samples at a declared rate.
AudioClip read_raw_f32(const std::string& path, int sample_rate);
void write_raw_f32(const std::string& path, const AudioClip& clip);

}  // namespace asr

#endif  // ASR_AUDIO_HPP
