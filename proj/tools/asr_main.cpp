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
//
// Single entry point for the whole stack: training, decoding, the dataset
// pipeline, the language model builder, the inference service and the
// benchmark harnesses.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "asr/allreduce.hpp"
#include "asr/audio.hpp"
#include "asr/config.hpp"
#include "asr/ctc.hpp"
#include "asr/datapipe.hpp"
#include "asr/decoder.hpp"
#include "asr/dispatch.hpp"
#include "asr/features.hpp"
#include "asr/lm.hpp"
#include "asr/memarena.hpp"
#include "asr/metrics.hpp"
#include "asr/network.hpp"
#include "asr/trainer.hpp"

namespace {

using namespace asr;

AudioClip load_audio(const std::string& path, int raw_rate) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".f32")
    return read_raw_f32(path, raw_rate);
  return read_wav(path);
}

struct LoadedUtterance {
  std::string id;
  std::string audio_path;
  Matrix features;
  LabelSequence label;
  std::string transcript;
};

std::vector<LoadedUtterance> load_utterances(const std::string& manifest_path,
                                             const Alphabet& alphabet,
                                             const SpectrogramConfig& spec_cfg, int raw_rate,
                                             bool normalize_features) {
  std::vector<LoadedUtterance> out;
  for (const auto& entry : datapipe::read_manifest(manifest_path)) {
    LoadedUtterance u;
    u.id = entry.id;
    u.audio_path = entry.audio_path;
    u.transcript = entry.transcript;
    AudioClip clip = load_audio(entry.audio_path, raw_rate);
    FeatureSequence feats = compute_spectrogram(clip, spec_cfg);
    u.features = normalize_features ? normalize(feats.frames, NormalizeMode::kWholeUtterance)
                                    : std::move(feats.frames);
    u.label = alphabet.encode_text(entry.transcript);
    out.push_back(std::move(u));
  }
  return out;
}

nn::NetworkConfig model_config_from(config::KvReader& kv, int input_bins, int alphabet_size,
                                    uint64_t alphabet_hash) {
  nn::NetworkConfig cfg;
  cfg.input_bins = input_bins;
  cfg.alphabet_size = alphabet_size;
  cfg.alphabet_hash = alphabet_hash;
  cfg.hidden = static_cast<int>(kv.get_long("model.hidden", 32));
  cfg.rnn_layers = static_cast<int>(kv.get_long("model.rnn_layers", 1));
  cfg.fc_layers = static_cast<int>(kv.get_long("model.fc_layers", 0));
  cfg.batchnorm = kv.get_bool("model.batchnorm", true);
  cfg.row_conv_tau = static_cast<int>(kv.get_long("model.row_conv_tau", -1));
  std::string kind = kv.get_string("model.rnn_kind", "simple");
  ASR_REQUIRE(kind == "simple" || kind == "gru", "model.rnn_kind must be simple or gru");
  cfg.rnn_kind = kind == "gru" ? nn::RnnKind::kGru : nn::RnnKind::kSimple;
  std::string dir = kv.get_string("model.direction", "bidirectional");
  ASR_REQUIRE(dir == "bidirectional" || dir == "forward", "model.direction must be bidirectional or forward");
  cfg.direction = dir == "forward" ? nn::Direction::kForwardOnly : nn::Direction::kBidirectional;
  if (kv.get_long("model.conv_layers", 0) > 0) {
    long layers = kv.get_long("model.conv_layers", 0);
    for (long i = 0; i < layers; ++i) {
      nn::ConvSpec conv;
      conv.out_channels = static_cast<int>(kv.get_long("model.conv_channels", 4));
      conv.filter_time = static_cast<int>(kv.get_long("model.conv_filter_time", 5));
      conv.filter_freq = static_cast<int>(kv.get_long("model.conv_filter_freq", 5));
      conv.stride_time = static_cast<int>(kv.get_long("model.conv_stride_time", 2));
      conv.stride_freq = static_cast<int>(kv.get_long("model.conv_stride_freq", 2));
      cfg.convs.push_back(conv);
    }
  }
  return cfg;
}

// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, uint64_t seed_override, bool has_seed, int workers,
              const std::string& out_dir) {
  config::KvReader kv(config::parse_kv_file(config_path));
  std::string manifest = kv.get_string("data.manifest", "");
  std::string alphabet_path = kv.get_string("data.alphabet", "");
  int raw_rate = static_cast<int>(kv.get_long("data.raw_rate", 16000));
  ASR_REQUIRE(!manifest.empty() && !alphabet_path.empty(),
              "train: data.manifest and data.alphabet are required");

  SpectrogramConfig spec_cfg;
  spec_cfg.window_s = kv.get_double("feature.window_s", 0.020);
  spec_cfg.hop_s = kv.get_double("feature.hop_s", 0.010);

  trainer::TrainConfig tcfg;
  tcfg.learning_rate = kv.get_double("train.lr", 3e-4);
  tcfg.anneal_factor = kv.get_double("train.anneal", 1.2);
  tcfg.momentum = kv.get_double("train.momentum", 0.99);
  tcfg.clip_threshold = kv.get_double("train.clip", 400.0);
  tcfg.minibatch_size = static_cast<int>(kv.get_long("train.batch", 8));
  tcfg.epochs = static_cast<int>(kv.get_long("train.epochs", 20));
  tcfg.sortagrad = kv.get_bool("train.sortagrad", true);
  tcfg.seed = static_cast<uint64_t>(kv.get_long("train.seed", 1));
  double dev_fraction = kv.get_double("train.dev_fraction", 0.0);
  if (has_seed) tcfg.seed = seed_override;

  Alphabet alphabet = Alphabet::from_file(alphabet_path);
  auto utterances = load_utterances(manifest, alphabet, spec_cfg, raw_rate, true);
  ASR_REQUIRE(!utterances.empty(), "train: empty dataset");

  // Dataset-fraction scaling: train on a seeded uniform subsample.
  double fraction = kv.get_double("data.fraction", 1.0);
  uint64_t fraction_seed = static_cast<uint64_t>(kv.get_long("data.fraction_seed", 1));
  if (fraction < 1.0) {
    auto keep = datapipe::scale_sample(utterances.size(), fraction, fraction_seed);
    std::vector<LoadedUtterance> subset;
    for (size_t idx : keep) subset.push_back(std::move(utterances[idx]));
    utterances = std::move(subset);
    ASR_REQUIRE(!utterances.empty(), "train: data.fraction left no utterances");
  }

  trainer::Dataset train_set, dev_set;
  size_t dev_n = static_cast<size_t>(dev_fraction * static_cast<double>(utterances.size()));
  for (size_t i = 0; i < utterances.size(); ++i) {
    trainer::Utterance u{utterances[i].features, utterances[i].label};
    (i + dev_n >= utterances.size() ? dev_set : train_set).push_back(std::move(u));
  }

  int bins = train_set[0].features.cols();
  nn::NetworkConfig net_cfg = model_config_from(kv, bins, alphabet.size(), alphabet.hash());
  kv.reject_unknown();

  std::filesystem::create_directories(out_dir);
  std::ofstream metrics(out_dir + "/metrics.tsv");
  metrics << "epoch\tloss\tlr\twall_s\tclip_activations\n";

  double best_dev = std::numeric_limits<double>::infinity();
  // Per-worker replicas start identical and stay identical: the only
  // cross-worker interaction is the all-reduce.
  std::vector<nn::Network> nets;
  for (int r = 0; r < workers; ++r) {
    nets.push_back(nn::build_network(net_cfg));
    nn::init_params(nets.back(), tcfg.seed);
  }
  std::vector<trainer::OptimizerState> states(workers);
  allreduce::InProcessHub hub(workers);

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    trainer::EpochStats stats;
    if (workers == 1) {
      stats = trainer::train_epoch(nets[0], train_set, tcfg, states[0], epoch);
    } else {
      std::vector<std::thread> threads;
      std::vector<trainer::EpochStats> all(workers);
      for (int r = 0; r < workers; ++r) {
        threads.emplace_back([&, r] {
          all[r] = trainer::train_epoch(nets[r], train_set, tcfg, states[r], epoch, {r, workers},
                                        &hub.transport(r));
        });
      }
      for (auto& th : threads) th.join();
      stats = all[0];
    }
    metrics << epoch << '\t' << stats.mean_loss << '\t' << stats.learning_rate << '\t'
            << stats.wall_seconds << '\t' << stats.clip_activations << '\n';
    std::cout << "epoch " << epoch << " loss " << stats.mean_loss << " lr " << stats.learning_rate
              << " clip " << stats.clip_activations << "\n";

    if (!dev_set.empty()) {
      double dev_loss = trainer::evaluate_mean_loss(nets[0], dev_set);
      if (dev_loss < best_dev) {
        best_dev = dev_loss;
        nn::save_checkpoint(nets[0], out_dir + "/best_checkpoint.bin");
      }
    }
  }

  nn::save_checkpoint(nets[0], out_dir + "/checkpoint.bin");
  states[0].save(out_dir + "/optimizer_state.bin");
  config::write_run_manifest(out_dir, "train", kv.all(), {config_path, manifest, alphabet_path});
  std::cout << "checkpoint written to " << out_dir << "/checkpoint.bin\n";
  return 0;
}

int cmd_decode(const std::string& ckpt, const std::string& manifest_path,
               const std::string& alphabet_path, const std::string& lm_path, double alpha,
               double beta, int beam, double prune_p, int max_symbols, bool char_mode,
               const std::string& out_path, double window_s, double hop_s, int raw_rate) {
  Alphabet alphabet = Alphabet::from_file(alphabet_path);
  nn::Network net = nn::load_checkpoint(ckpt);
  ASR_REQUIRE(net.output_dim() == alphabet.size() + 1, "decode: checkpoint/alphabet width mismatch");
  if (net.alphabet_hash != 0)
    ASR_REQUIRE(net.alphabet_hash == alphabet.hash(), "decode: alphabet hash mismatch with checkpoint");

  std::unique_ptr<lm::NGramModel> model;
  if (!lm_path.empty()) model = std::make_unique<lm::NGramModel>(lm::NGramModel::load(lm_path));

  SpectrogramConfig spec_cfg;
  spec_cfg.window_s = window_s;
  spec_cfg.hop_s = hop_s;

  decoder::DecoderConfig dcfg;
  dcfg.alpha = alpha;
  dcfg.beta = beta;
  dcfg.beam_width = beam;
  dcfg.prune_p = prune_p;
  dcfg.max_symbols = max_symbols;
  dcfg.char_mode = char_mode;

  std::ofstream file_out;
  if (!out_path.empty() && out_path != "-") file_out.open(out_path);
  std::ostream& os = file_out.is_open() ? file_out : std::cout;

  for (const auto& u : load_utterances(manifest_path, alphabet, spec_cfg, raw_rate, true)) {
    nn::Batch logits = net.forward({u.features}, /*train=*/false);
    Matrix probs = nn::softmax_rows(logits[0]);
    LabelSequence labels;
    if (beam == 1 && alpha == 0) {
      // A width-1 beam degenerates to best-path decoding.
      labels = decoder::greedy_decode(probs, alphabet.blank());
    } else {
      labels = decoder::beam_search(probs, alphabet, model.get(), dcfg).labels;
    }
    os << u.id << '\t' << alphabet.decode(labels) << '\n';
  }
  return 0;
}

int cmd_align(const std::string& ckpt, const std::string& manifest_path,
              const std::string& alphabet_path, const std::string& out_path, double window_s,
              double hop_s, int raw_rate) {
  Alphabet alphabet = Alphabet::from_file(alphabet_path);
  nn::Network net = nn::load_checkpoint(ckpt);
  SpectrogramConfig spec_cfg;
  spec_cfg.window_s = window_s;
  spec_cfg.hop_s = hop_s;

  std::ofstream file_out;
  if (!out_path.empty() && out_path != "-") file_out.open(out_path);
  std::ostream& os = file_out.is_open() ? file_out : std::cout;

  for (const auto& u : load_utterances(manifest_path, alphabet, spec_cfg, raw_rate, true)) {
    auto alignment = datapipe::align_long(u.features, u.label, net);
    os << u.id << '\t';
    if (!alignment.has_value()) {
      os << "<infeasible>\n";
      continue;
    }
    for (size_t t = 0; t < alignment->size(); ++t) {
      if (t) os << ',';
      int sym = (*alignment)[t];
      os << (sym == alphabet.blank() ? "_" : alphabet.symbol(sym));
    }
    os << '\n';
  }
  return 0;
}

int cmd_segment(const std::string& ckpt, const std::string& manifest_path,
                const std::string& alphabet_path, int min_blank_run, bool require_space,
                const std::string& out_dir, double window_s, double hop_s, int raw_rate) {
  Alphabet alphabet = Alphabet::from_file(alphabet_path);
  nn::Network net = nn::load_checkpoint(ckpt);
  SpectrogramConfig spec_cfg;
  spec_cfg.window_s = window_s;
  spec_cfg.hop_s = hop_s;
  std::filesystem::create_directories(out_dir);

  std::vector<datapipe::ManifestEntry> out_entries;
  for (const auto& entry : datapipe::read_manifest(manifest_path)) {
    AudioClip clip = load_audio(entry.audio_path, raw_rate);
    FeatureSequence feats = compute_spectrogram(clip, spec_cfg);
    Matrix normalized = normalize(feats.frames, NormalizeMode::kWholeUtterance);
    LabelSequence transcript = alphabet.encode_text(entry.transcript);

    auto alignment = datapipe::align_long(normalized, transcript, net);
    if (!alignment.has_value()) {
      std::cerr << "segment: rejecting " << entry.id << " (alignment infeasible)\n";
      continue;
    }
    int hop = static_cast<int>(std::lround(hop_s * clip.sample_rate));
    int window = static_cast<int>(std::lround(window_s * clip.sample_rate));
    auto segments = datapipe::segment(*alignment, alphabet.blank(), alphabet.space_id(),
                                      min_blank_run, require_space, entry.id);
    for (const auto& seg : segments) {
      size_t s0 = static_cast<size_t>(seg.start_frame) * hop;
      size_t s1 = std::min(clip.samples.size(), static_cast<size_t>(seg.end_frame) * hop + window);
      AudioClip piece;
      piece.sample_rate = clip.sample_rate;
      piece.samples.assign(clip.samples.begin() + s0, clip.samples.begin() + s1);
      std::string name = seg.provenance_id;
      for (auto& c : name)
        if (c == '/' || c == ':') c = '_';
      std::string wav_path = out_dir + "/" + name + ".wav";
      write_wav(wav_path, piece);
      out_entries.push_back({seg.provenance_id, wav_path, alphabet.decode(seg.transcript),
                             piece.duration_s()});
    }
  }
  datapipe::write_manifest(out_dir + "/manifest.jsonl", out_entries);
  config::write_run_manifest(out_dir, "segment", {}, {manifest_path, alphabet_path, ckpt});
  std::cout << "wrote " << out_entries.size() << " segments to " << out_dir << "\n";
  return 0;
}

int cmd_augment(const std::string& manifest_path, const std::string& noise_manifest,
                double fraction, double snr_lo, double snr_hi, uint64_t seed,
                const std::string& out_dir, int raw_rate) {
  std::filesystem::create_directories(out_dir);
  auto entries = datapipe::read_manifest(manifest_path);
  std::vector<AudioClip> clips;
  for (const auto& e : entries) clips.push_back(load_audio(e.audio_path, raw_rate));
  std::vector<AudioClip> noise;
  for (const auto& e : datapipe::read_manifest(noise_manifest))
    noise.push_back(load_audio(e.audio_path, raw_rate));

  datapipe::AugmentConfig cfg;
  cfg.fraction = fraction;
  cfg.snr_db_lo = snr_lo;
  cfg.snr_db_hi = snr_hi;
  cfg.seed = seed;
  auto touched = datapipe::augment_noise(clips, noise, cfg);

  std::vector<datapipe::ManifestEntry> out_entries;
  for (size_t i = 0; i < entries.size(); ++i) {
    std::string wav_path = out_dir + "/" + entries[i].id + ".wav";
    write_wav(wav_path, clips[i]);
    out_entries.push_back({entries[i].id, wav_path, entries[i].transcript, clips[i].duration_s()});
  }
  datapipe::write_manifest(out_dir + "/manifest.jsonl", out_entries);
  config::write_run_manifest(out_dir, "augment", {{"fraction", std::to_string(fraction)}},
                             {manifest_path, noise_manifest});
  std::cout << "augmented " << touched.size() << " of " << entries.size() << " utterances\n";
  return 0;
}

int cmd_lm_build(const std::string& corpus_path, int order, bool chars, double discount,
                 long min_count, double unk_logprob, const std::string& out_path) {
  std::ifstream is(corpus_path);
  ASR_REQUIRE(is.good(), "lm-build: cannot open " + corpus_path);
  std::vector<lm::TokenSeq> corpus;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    corpus.push_back(chars ? lm::tokenize_chars(line) : lm::tokenize_words(line));
  }
  lm::NGramConfig cfg;
  cfg.order = order;
  cfg.discount = discount;
  cfg.min_count_prune = min_count;
  cfg.unknown_logprob = unk_logprob;
  auto model = lm::NGramModel::train(corpus, cfg);
  model.save(out_path);
  std::cout << "model with vocabulary " << model.vocabulary().size() - 1 << " written to "
            << out_path << "\n";
  return 0;
}

int cmd_serve(const std::string& ckpt, const std::string& alphabet_path, int port, int max_batch,
              double alpha, double beta, int beam, double prune_p, int max_symbols, bool char_mode,
              const std::string& lm_path, double run_seconds) {
  Alphabet alphabet = Alphabet::from_file(alphabet_path);
  nn::Network net = nn::load_checkpoint(ckpt);
  decoder::DecoderConfig dcfg;
  dcfg.alpha = alpha;
  dcfg.beta = beta;
  dcfg.beam_width = beam;
  dcfg.prune_p = prune_p;
  dcfg.max_symbols = max_symbols;
  dcfg.char_mode = char_mode;
  (void)lm_path;  // LM-fused serving would thread the model here

  dispatch::InferenceServer server(
      dispatch::StreamingEngine(std::move(net), alphabet, dcfg), port, max_batch);
  server.start();
  std::cout << "serving on port " << server.port() << "\n";
  if (run_seconds > 0) {
    std::this_thread::sleep_for(std::chrono::duration<double>(run_seconds));
  } else {
    for (;;) std::this_thread::sleep_for(std::chrono::seconds(3600));
  }
  auto stats = server.stats();
  std::cout << "batches " << stats.batches << " mean size " << stats.mean_batch_size() << "\n";
  server.stop();
  return 0;
}

int cmd_loadgen_sim(int streams, double duration, double interarrival, int frames_per_chunk,
                    double overhead, double per_frame, int max_batch, bool serial, uint64_t seed) {
  dispatch::SimConfig cfg;
  cfg.concurrent_streams = streams;
  cfg.duration_s = duration;
  cfg.mean_interarrival_s = interarrival;
  cfg.frames_per_chunk = frames_per_chunk;
  cfg.batch_overhead_s = overhead;
  cfg.per_frame_s = per_frame;
  cfg.max_batch = max_batch;
  cfg.serial = serial;
  cfg.seed = seed;
  auto res = dispatch::simulate_load(cfg);
  std::cout << "load\tmedian_ms\tp98_ms\tmean_batch\tfraction_ge2\n";
  std::cout << streams << '\t' << res.latency.median_ms() << '\t' << res.latency.p98_ms() << '\t'
            << res.batches.mean_batch_size() << '\t' << res.batches.fraction_of_work_in_ge2()
            << '\n';
  std::cout << "batch_size\tcount\n";
  for (size_t s = 1; s < res.batches.size_histogram.size(); ++s)
    if (res.batches.size_histogram[s] > 0)
      std::cout << s << '\t' << res.batches.size_histogram[s] << '\n';
  return 0;
}

int cmd_loadgen_wall(const std::string& host, int port, int streams, double duration, int dim,
                     int frames_per_chunk, uint64_t seed) {
  std::vector<std::thread> threads;
  std::mutex mu;
  std::vector<double> latencies_ms;
  auto until = std::chrono::steady_clock::now() + std::chrono::duration<double>(duration);
  for (int s = 0; s < streams; ++s) {
    threads.emplace_back([&, s] {
      Rng rng(seed + s);
      while (std::chrono::steady_clock::now() < until) {
        Matrix feats(frames_per_chunk * (1 + static_cast<int>(rng.below(3))), dim);
        for (size_t i = 0; i < feats.size(); ++i)
          feats.data()[i] = static_cast<real>(rng.uniform(-1, 1));
        auto begin = std::chrono::steady_clock::now();
        dispatch::transcribe_over_socket(host, port, feats, frames_per_chunk);
        double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - begin).count();
        std::lock_guard<std::mutex> lock(mu);
        latencies_ms.push_back(ms);
      }
    });
  }
  for (auto& th : threads) th.join();
  ASR_REQUIRE(!latencies_ms.empty(), "loadgen: no requests completed");
  std::cout << "load\tmedian_ms\tp98_ms\n";
  std::cout << streams << '\t' << metrics::percentile(latencies_ms, 50) << '\t'
            << metrics::percentile(latencies_ms, 98) << '\n';
  return 0;
}

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

int cmd_bench_allreduce(const std::string& sizes_csv, const std::string& workers_csv, int repeats) {
  std::vector<size_t> sizes;
  for (const auto& s : split_csv(sizes_csv)) sizes.push_back(std::stoul(s));
  std::vector<int> workers;
  for (const auto& s : split_csv(workers_csv)) workers.push_back(std::stoi(s));
  auto rows = allreduce::bench_allreduce(sizes, workers, repeats);
  std::cout << "elements\tworkers\tseconds\tMB_per_s\tmsgs_per_worker\tpayload_bytes_per_worker\n";
  for (const auto& r : rows)
    std::cout << r.elements << '\t' << r.workers << '\t' << r.seconds << '\t' << r.mb_per_s << '\t'
              << r.messages_per_worker << '\t' << r.payload_bytes_per_worker << '\n';
  return 0;
}

int cmd_bench_alloc(long ops, long min_kb, long max_kb, int live) {
  // The training allocation pattern: a rolling window of large short-lived
  // activation buffers.
  auto run = [&](bool use_arena) {
    Rng rng(42);
    memarena::ArenaConfig acfg;
    acfg.capacity = 256ull << 20;
    memarena::Arena arena(acfg);
    std::vector<memarena::BlockHandle> arena_live;
    std::vector<char*> sys_live;
    auto begin = std::chrono::steady_clock::now();
    for (long i = 0; i < ops; ++i) {
      size_t bytes = static_cast<size_t>(min_kb + rng.below(max_kb - min_kb + 1)) * 1024;
      if (use_arena) {
        arena_live.push_back(arena.alloc(bytes));
        static_cast<char*>(arena.data(arena_live.back()))[0] = 1;
        if (static_cast<int>(arena_live.size()) > live) {
          size_t victim = rng.below(arena_live.size());
          arena.free(arena_live[victim]);
          arena_live[victim] = arena_live.back();
          arena_live.pop_back();
        }
      } else {
        sys_live.push_back(new char[bytes]);
        sys_live.back()[0] = 1;
        if (static_cast<int>(sys_live.size()) > live) {
          size_t victim = rng.below(sys_live.size());
          delete[] sys_live[victim];
          sys_live[victim] = sys_live.back();
          sys_live.pop_back();
        }
      }
    }
    for (auto& h : arena_live) arena.free(h);
    for (char* p : sys_live) delete[] p;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - begin).count();
  };
  double arena_s = run(true);
  double system_s = run(false);
  std::cout << "allocator\tseconds\tops_per_s\n";
  std::cout << "arena\t" << arena_s << '\t' << ops / arena_s << '\n';
  std::cout << "system\t" << system_s << '\t' << ops / system_s << '\n';
  return 0;
}

int cmd_eval_wer(const std::string& ref_path, const std::string& hyp_path, bool use_cer) {
  auto read_lines = [](const std::string& path) {
    std::ifstream is(path);
    ASR_REQUIRE(is.good(), "eval-wer: cannot open " + path);
    std::vector<std::pair<std::string, std::string>> lines;  // id (may be empty), text
    std::string line;
    long n = 0;
    while (std::getline(is, line)) {
      auto tab = line.find('\t');
      if (tab != std::string::npos) {
        lines.push_back({line.substr(0, tab), line.substr(tab + 1)});
      } else {
        lines.push_back({std::to_string(n), line});
      }
      ++n;
    }
    return lines;
  };
  auto ref = read_lines(ref_path);
  auto hyp = read_lines(hyp_path);
  std::map<std::string, std::string> hyp_by_id;
  for (const auto& [id, text] : hyp) hyp_by_id[id] = text;

  double distance = 0, total = 0;
  for (const auto& [id, text] : ref) {
    auto it = hyp_by_id.find(id);
    std::string hyp_text = it == hyp_by_id.end() ? "" : it->second;
    if (use_cer) {
      auto r = utf8_graphemes(text);
      auto h = utf8_graphemes(hyp_text);
      distance += static_cast<double>(metrics::edit_distance(r, h));
      total += static_cast<double>(r.size());
    } else {
      std::istringstream rs(text), hs(hyp_text);
      std::vector<std::string> r, h;
      std::string w;
      while (rs >> w) r.push_back(w);
      while (hs >> w) h.push_back(w);
      distance += static_cast<double>(metrics::edit_distance(r, h));
      total += static_cast<double>(r.size());
    }
  }
  std::cout << (total > 0 ? distance / total : 0.0) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"End-to-end speech recognition toolkit: training, decoding, data pipeline, "
               "deployment scheduler and benchmarks"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a model from a key=value config");
  std::string train_config, train_out = "train_out";
  uint64_t seed = 0;
  int workers = 1;
  train->add_option("--config", train_config, "key=value config file")->required();
  auto* seed_opt = train->add_option("--seed", seed, "overrides train.seed");
  train->add_option("--workers", workers, "in-process data-parallel workers")->default_val(1);
  train->add_option("--out", train_out, "output directory");

  // decode
  auto* decode = app.add_subcommand("decode", "Beam-search decode a manifest");
  std::string d_ckpt, d_manifest, d_alphabet, d_lm, d_out;
  double d_alpha = 0, d_beta = 0, d_prune = 1.0, d_window = 0.020, d_hop = 0.010;
  int d_beam = 500, d_max_symbols = 0, d_raw_rate = 16000;
  bool d_char = false;
  decode->add_option("--checkpoint", d_ckpt)->required();
  decode->add_option("--manifest", d_manifest)->required();
  decode->add_option("--alphabet", d_alphabet)->required();
  decode->add_option("--lm", d_lm, "n-gram model file");
  decode->add_option("--alpha", d_alpha, "LM weight");
  decode->add_option("--beta", d_beta, "insertion bonus");
  decode->add_option("--beam", d_beam, "beam width");
  decode->add_option("--prune-p", d_prune, "candidate cumulative probability cutoff");
  decode->add_option("--max-symbols", d_max_symbols, "candidate cap per frame");
  decode->add_flag("--char-mode", d_char, "score the LM per character");
  decode->add_option("--out", d_out, "output file ('-' for stdout)");
  decode->add_option("--window-s", d_window);
  decode->add_option("--hop-s", d_hop);
  decode->add_option("--raw-rate", d_raw_rate);

  // align
  auto* align = app.add_subcommand("align", "CTC Viterbi alignment of a manifest");
  std::string a_ckpt, a_manifest, a_alphabet, a_out;
  double a_window = 0.020, a_hop = 0.010;
  int a_raw_rate = 16000;
  align->add_option("--checkpoint", a_ckpt)->required();
  align->add_option("--manifest", a_manifest)->required();
  align->add_option("--alphabet", a_alphabet)->required();
  align->add_option("--out", a_out);
  align->add_option("--window-s", a_window);
  align->add_option("--hop-s", a_hop);
  align->add_option("--raw-rate", a_raw_rate);

  // segment
  auto* segment = app.add_subcommand("segment", "Split long recordings at aligned silence");
  std::string s_ckpt, s_manifest, s_alphabet, s_out = "segments_out";
  int s_min_run = 10, s_raw_rate = 16000;
  bool s_require_space = false;
  double s_window = 0.020, s_hop = 0.010;
  segment->add_option("--checkpoint", s_ckpt)->required();
  segment->add_option("--manifest", s_manifest)->required();
  segment->add_option("--alphabet", s_alphabet)->required();
  segment->add_option("--min-blank-run", s_min_run, "frames of silence that cut");
  segment->add_flag("--require-space", s_require_space, "cut only at word boundaries");
  segment->add_option("--out-dir", s_out);
  segment->add_option("--window-s", s_window);
  segment->add_option("--hop-s", s_hop);
  segment->add_option("--raw-rate", s_raw_rate);

  // augment
  auto* augment = app.add_subcommand("augment", "Mix noise into a fraction of a dataset");
  std::string g_manifest, g_noise, g_out = "augment_out";
  double g_fraction = 0.4, g_snr_lo = 0, g_snr_hi = 30;
  uint64_t g_seed = 1;
  int g_raw_rate = 16000;
  augment->add_option("--manifest", g_manifest)->required();
  augment->add_option("--noise-manifest", g_noise)->required();
  augment->add_option("--fraction", g_fraction);
  augment->add_option("--snr-lo", g_snr_lo);
  augment->add_option("--snr-hi", g_snr_hi);
  augment->add_option("--seed", g_seed);
  augment->add_option("--out-dir", g_out);
  augment->add_option("--raw-rate", g_raw_rate);

  // lm-build
  auto* lm_build = app.add_subcommand("lm-build", "Train a Kneser-Ney n-gram model");
  std::string l_corpus, l_out = "model.arpa";
  int l_order = 5;
  bool l_chars = false;
  double l_discount = 0.75, l_unk = -20.0;
  long l_min_count = 1;
  lm_build->add_option("--corpus", l_corpus)->required();
  lm_build->add_option("--order", l_order);
  lm_build->add_flag("--chars", l_chars, "character-level tokens");
  lm_build->add_option("--discount", l_discount);
  lm_build->add_option("--min-count", l_min_count, "prune n-grams below this count");
  lm_build->add_option("--unk-logprob", l_unk);
  lm_build->add_option("--out", l_out);

  // serve
  auto* serve = app.add_subcommand("serve", "Streaming inference service (Batch Dispatch)");
  std::string v_ckpt, v_alphabet, v_lm;
  int v_port = 9050, v_max_batch = 32, v_beam = 200, v_max_symbols = 40;
  double v_alpha = 0, v_beta = 0, v_prune = 0.99, v_run_seconds = 0;
  bool v_char = true;
  serve->add_option("--checkpoint", v_ckpt)->required();
  serve->add_option("--alphabet", v_alphabet)->required();
  serve->add_option("--port", v_port);
  serve->add_option("--max-batch", v_max_batch);
  serve->add_option("--alpha", v_alpha);
  serve->add_option("--beta", v_beta);
  serve->add_option("--beam", v_beam);
  serve->add_option("--prune-p", v_prune);
  serve->add_option("--max-symbols", v_max_symbols);
  serve->add_flag("--char-mode,!--word-mode", v_char);
  serve->add_option("--lm", v_lm);
  serve->add_option("--run-seconds", v_run_seconds, "0 runs until interrupted");

  // loadgen
  auto* loadgen = app.add_subcommand("loadgen", "Latency/batch-size study of Batch Dispatch");
  std::string mode = "sim", w_host = "127.0.0.1";
  int lg_streams = 10, lg_frames = 20, lg_max_batch = 32, w_port = 9050, w_dim = 16;
  double lg_duration = 30, lg_interarrival = 0.030, lg_overhead = 0.008, lg_per_frame = 0.0006;
  bool lg_serial = false;
  uint64_t lg_seed = 1;
  loadgen->add_option("--mode", mode, "sim (virtual time) or wall (live server)");
  loadgen->add_option("--streams", lg_streams);
  loadgen->add_option("--duration", lg_duration);
  loadgen->add_option("--interarrival", lg_interarrival);
  loadgen->add_option("--frames-per-chunk", lg_frames);
  loadgen->add_option("--overhead", lg_overhead, "simulated per-batch overhead seconds");
  loadgen->add_option("--per-frame", lg_per_frame, "simulated seconds per frame");
  loadgen->add_option("--max-batch", lg_max_batch);
  loadgen->add_flag("--serial", lg_serial, "process one request per batch");
  loadgen->add_option("--seed", lg_seed);
  loadgen->add_option("--host", w_host);
  loadgen->add_option("--port", w_port);
  loadgen->add_option("--dim", w_dim, "feature dim (wall mode)");

  // bench-allreduce
  auto* bench_ar = app.add_subcommand("bench-allreduce", "Time the ring collective");
  std::string b_sizes = "1024,65536,1048576", b_workers = "1,2,4";
  int b_repeats = 3;
  bench_ar->add_option("--sizes", b_sizes, "comma-separated element counts");
  bench_ar->add_option("--workers", b_workers, "comma-separated worker counts");
  bench_ar->add_option("--repeats", b_repeats);

  // bench-alloc
  auto* bench_alloc = app.add_subcommand("bench-alloc", "Arena vs system allocator");
  long ba_ops = 20000, ba_min_kb = 64, ba_max_kb = 2048;
  int ba_live = 32;
  bench_alloc->add_option("--ops", ba_ops);
  bench_alloc->add_option("--min-kb", ba_min_kb);
  bench_alloc->add_option("--max-kb", ba_max_kb);
  bench_alloc->add_option("--live", ba_live, "live buffers kept in flight");

  // eval-wer
  auto* eval = app.add_subcommand("eval-wer", "Word (or character) error rate of two files");
  std::string e_ref, e_hyp;
  bool e_cer = false;
  eval->add_option("ref", e_ref, "reference transcript file")->required();
  eval->add_option("hyp", e_hyp, "hypothesis transcript file")->required();
  eval->add_flag("--cer", e_cer, "character error rate instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);  // prints usage or help text
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(train))
      return cmd_train(train_config, seed, seed_opt->count() > 0, workers, train_out);
    if (app.got_subcommand(decode))
      return cmd_decode(d_ckpt, d_manifest, d_alphabet, d_lm, d_alpha, d_beta, d_beam, d_prune,
                        d_max_symbols, d_char, d_out, d_window, d_hop, d_raw_rate);
    if (app.got_subcommand(align))
      return cmd_align(a_ckpt, a_manifest, a_alphabet, a_out, a_window, a_hop, a_raw_rate);
    if (app.got_subcommand(segment))
      return cmd_segment(s_ckpt, s_manifest, s_alphabet, s_min_run, s_require_space, s_out,
                         s_window, s_hop, s_raw_rate);
    if (app.got_subcommand(augment))
      return cmd_augment(g_manifest, g_noise, g_fraction, g_snr_lo, g_snr_hi, g_seed, g_out,
                         g_raw_rate);
    if (app.got_subcommand(lm_build))
      return cmd_lm_build(l_corpus, l_order, l_chars, l_discount, l_min_count, l_unk, l_out);
    if (app.got_subcommand(serve))
      return cmd_serve(v_ckpt, v_alphabet, v_port, v_max_batch, v_alpha, v_beta, v_beam, v_prune,
                       v_max_symbols, v_char, v_lm, v_run_seconds);
    if (app.got_subcommand(loadgen)) {
      if (mode == "sim")
        return cmd_loadgen_sim(lg_streams, lg_duration, lg_interarrival, lg_frames, lg_overhead,
                               lg_per_frame, lg_max_batch, lg_serial, lg_seed);
      return cmd_loadgen_wall(w_host, w_port, lg_streams, lg_duration, w_dim, lg_frames, lg_seed);
    }
    if (app.got_subcommand(bench_ar)) return cmd_bench_allreduce(b_sizes, b_workers, b_repeats);
    if (app.got_subcommand(bench_alloc))
      return cmd_bench_alloc(ba_ops, ba_min_kb, ba_max_kb, ba_live);
    if (app.got_subcommand(eval)) return cmd_eval_wer(e_ref, e_hyp, e_cer);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
