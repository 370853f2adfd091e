#pragma once

// Waveform perturbations: additive Gaussian noise, background noise at a
// target SNR, convolutional reverberation and speed perturbation.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace unitslu {

struct Waveform {
  int sample_rate = 16000;
  Eigen::VectorXf samples;

  Eigen::Index size() const { return samples.size(); }
};

/// Mean squared amplitude, accumulated in double.
double mean_power(const Eigen::Ref<const Eigen::VectorXf>& samples);

/// out = in + amplitude * z, z ~ N(0, 1) i.i.d. No clipping.
Waveform add_gaussian(const Waveform& wave, double amplitude, std::uint64_t seed);

/// Tiles/crops `noise` from a seeded offset to the signal length and scales it
/// so that 10 log10(P_signal / P_noise) equals snr_db.
Waveform mix_at_snr(const Waveform& wave, const Waveform& noise, double snr_db,
                    std::uint64_t seed);

/// The scaled noise segment mix_at_snr would add (for measuring the achieved SNR).
Eigen::VectorXf scaled_noise_segment(const Waveform& wave, const Waveform& noise, double snr_db,
                                     std::uint64_t seed);

/// Linear convolution truncated to the input length. When the result's peak
/// exceeds 1 it is rescaled to the input's peak.
Waveform apply_reverb(const Waveform& wave, const Waveform& rir);

/// Linear-interpolation resampling; output length round(N / factor).
Waveform speed_perturb(const Waveform& wave, double factor);

/// Exponentially decaying noise impulse response with a unit direct path.
Waveform synthetic_rir(int sample_rate, double length_seconds, double decay_seconds,
                       std::uint64_t seed);

struct NoiseSpec {
  enum class Kind { kGaussian, kBackground, kReverb, kSpeed };
  Kind kind = Kind::kGaussian;
  double amplitude = 0.0;           // gaussian
  double snr_db = 0.0;              // background
  std::string noise_path;           // background
  std::string rir_path;             // reverb
  double factor = 1.0;              // speed
  std::uint64_t seed = 0;
};

/// Parses gaussian:<amp> | snr:<db>:<noisefile> | reverb:<rirfile> | speed:<factor>.
NoiseSpec parse_noise_spec(std::string_view text, std::uint64_t seed);

/// Loads any referenced noise/RIR file and applies the perturbation.
Waveform apply_noise(const Waveform& wave, const NoiseSpec& spec);

/// 16-bit PCM mono RIFF/WAVE. Samples are scaled by 1/32768.
Waveform read_wav(const std::string& path);
void write_wav(const Waveform& wave, const std::string& path);

}  // namespace unitslu
