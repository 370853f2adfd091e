#include "unitslu/augment.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace unitslu {
namespace {

Waveform sine(double hz, int n, int rate = 16000, double amp = 0.5) {
  Waveform w{rate, Eigen::VectorXf(n)};
  for (int i = 0; i < n; ++i) {
    w.samples[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * i / rate));
  }
  return w;
}

Waveform random_wave(std::mt19937_64& rng, int n, double scale = 0.3) {
  std::normal_distribution<float> normal(0.0f, static_cast<float>(scale));
  Waveform w{16000, Eigen::VectorXf(n)};
  for (int i = 0; i < n; ++i) w.samples[i] = normal(rng);
  return w;
}

double measured_snr(const Waveform& wave, const Waveform& noise, double snr, std::uint64_t seed) {
  const Eigen::VectorXf scaled = scaled_noise_segment(wave, noise, snr, seed);
  return 10.0 * std::log10(mean_power(wave.samples) / mean_power(scaled));
}

TEST(AddGaussian, ZeroAmplitudeIsIdentity) {
  const Waveform w = sine(100, 1000);
  EXPECT_TRUE(add_gaussian(w, 0.0, 3).samples == w.samples);
  EXPECT_THROW(add_gaussian(w, -0.1, 3), std::invalid_argument);
}

TEST(AddGaussian, NoiseStdMatchesAmplitude) {
  const Waveform w = sine(100, 160000);
  for (double amp : {0.005, 0.01, 0.02}) {
    const Waveform out = add_gaussian(w, amp, 42);
    const Eigen::VectorXd d = (out.samples - w.samples).cast<double>();
    const double mean = d.mean();
    const double sd = std::sqrt((d.array() - mean).square().sum() / static_cast<double>(d.size() - 1));
    EXPECT_NEAR(sd, amp, 0.05 * amp);
  }
}

TEST(AddGaussian, SeededDeterminism) {
  const Waveform w = sine(100, 500);
  EXPECT_TRUE(add_gaussian(w, 0.01, 1).samples == add_gaussian(w, 0.01, 1).samples);
  EXPECT_FALSE(add_gaussian(w, 0.01, 1).samples == add_gaussian(w, 0.01, 2).samples);
}

TEST(MixAtSnr, HitsTarget) {
  std::mt19937_64 rng(1);
  const Waveform speech = sine(220, 32000);
  const Waveform noise = random_wave(rng, 5000);
  for (double snr : {20.0, 10.0, 0.0, -5.0}) {
    EXPECT_NEAR(measured_snr(speech, noise, snr, 7), snr, 0.1);
    const Waveform mixed = mix_at_snr(speech, noise, snr, 7);
    const Eigen::VectorXf added = mixed.samples - speech.samples;
    EXPECT_NEAR(10 * std::log10(mean_power(speech.samples) / mean_power(added)), snr, 0.1);
  }
}

TEST(MixAtSnr, RandomSignalsProperty) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const Waveform s = random_wave(rng, std::uniform_int_distribution<int>(100, 4000)(rng), 0.2);
    const Waveform n = random_wave(rng, std::uniform_int_distribution<int>(50, 3000)(rng), 0.7);
    const double snr = std::uniform_real_distribution<double>(-10, 30)(rng);
    EXPECT_NEAR(measured_snr(s, n, snr, static_cast<std::uint64_t>(i)), snr, 0.1);
  }
}

TEST(MixAtSnr, HighSnrBarelyChangesSignal) {
  std::mt19937_64 rng(3);
  const Waveform speech = sine(300, 8000);
  const Waveform out = mix_at_snr(speech, random_wave(rng, 1000), 100.0, 1);
  const double rms = std::sqrt(mean_power(speech.samples));
  EXPECT_LE((out.samples - speech.samples).cwiseAbs().maxCoeff(), 1e-4 * rms);
}

TEST(MixAtSnr, Errors) {
  const Waveform speech = sine(300, 800);
  Waveform silent{16000, Eigen::VectorXf::Zero(100)};
  EXPECT_THROW(mix_at_snr(speech, silent, 10, 0), std::invalid_argument);
  EXPECT_THROW(mix_at_snr(silent, speech, 10, 0), std::invalid_argument);
  Waveform other = speech;
  other.sample_rate = 8000;
  EXPECT_THROW(mix_at_snr(speech, other, 10, 0), std::invalid_argument);
}

TEST(Reverb, ImpulseAndDelay) {
  std::mt19937_64 rng(4);
  const Waveform w = random_wave(rng, 300, 0.1);
  Waveform impulse{16000, Eigen::VectorXf::Ones(1)};
  EXPECT_TRUE(apply_reverb(w, impulse).samples == w.samples);
  Waveform delay{16000, Eigen::VectorXf::Zero(3)};
  delay.samples[2] = 1.0f;
  const Waveform d = apply_reverb(w, delay);
  EXPECT_EQ(d.samples[0], 0.0f);
  EXPECT_EQ(d.samples[1], 0.0f);
  for (int i = 2; i < 300; ++i) EXPECT_EQ(d.samples[i], w.samples[i - 2]);
  EXPECT_THROW(apply_reverb(w, Waveform{16000, Eigen::VectorXf(0)}), std::invalid_argument);
}

TEST(Reverb, MatchesNaiveConvolution) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Waveform w = random_wave(rng, 500, 0.05);
    const Waveform h = random_wave(rng, std::uniform_int_distribution<int>(1, 64)(rng), 0.05);
    const Waveform out = apply_reverb(w, h);
    const std::vector<double> x(w.samples.data(), w.samples.data() + w.size());
    const std::vector<double> hh(h.samples.data(), h.samples.data() + h.size());
    const auto ref = oracle::convolve_truncated(x, hh);
    ASSERT_LE(std::abs(*std::max_element(ref.begin(), ref.end(),
                                         [](double a, double b) { return std::abs(a) < std::abs(b); })),
              1.0);
    for (int i = 0; i < w.size(); ++i) EXPECT_NEAR(out.samples[i], ref[i], 1e-6);
  }
}

TEST(Reverb, LinearBeforeNormalisationAndPeakNormalised) {
  std::mt19937_64 rng(6);
  const Waveform w = random_wave(rng, 400, 0.02);
  const Waveform h = synthetic_rir(16000, 0.004, 0.002, 3);
  Waveform scaled = w;
  scaled.samples *= 2.0f;
  const Waveform a = apply_reverb(w, h);
  const Waveform b = apply_reverb(scaled, h);
  for (int i = 0; i < w.size(); ++i) EXPECT_NEAR(b.samples[i], 2 * a.samples[i], 1e-6);

  Waveform loud = sine(100, 2000, 16000, 0.9);
  Waveform gain{16000, Eigen::VectorXf::Constant(1, 3.0f)};
  const Waveform out = apply_reverb(loud, gain);
  EXPECT_NEAR(out.samples.cwiseAbs().maxCoeff(), loud.samples.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(SpeedPerturb, LengthAndIdentity) {
  const Waveform w = sine(100, 900);
  EXPECT_TRUE(speed_perturb(w, 1.0).samples == w.samples);
  EXPECT_EQ(speed_perturb(w, 0.9).size(), 1000);
  EXPECT_EQ(speed_perturb(w, 1.1).size(), 818);
  EXPECT_THROW(speed_perturb(w, 0.0), std::invalid_argument);
  EXPECT_THROW(speed_perturb(w, -1.0), std::invalid_argument);
}

TEST(SpeedPerturb, ScalesDominantFrequency) {
  const Waveform w = sine(100, 16000);
  for (double f : {0.9, 1.1}) {
    const Waveform out = speed_perturb(w, f);
    EXPECT_NEAR(oracle::dominant_frequency(out.samples, 16000, 50, 200), 100 * f, 1.0);
  }
}

TEST(AllOps, PreserveRateAndFiniteness) {
  std::mt19937_64 rng(7);
  Waveform w = random_wave(rng, 1000);
  w.sample_rate = 8000;
  Waveform n = random_wave(rng, 200);
  n.sample_rate = 8000;
  const Waveform rir = synthetic_rir(8000, 0.01, 0.005, 1);
  for (const Waveform& out : {add_gaussian(w, 0.01, 1), mix_at_snr(w, n, 10, 1),
                              apply_reverb(w, rir), speed_perturb(w, 1.1)}) {
    EXPECT_EQ(out.sample_rate, 8000);
    EXPECT_TRUE(out.samples.allFinite());
  }
}

TEST(NoiseSpec, ParseAndApply) {
  const auto dir = std::filesystem::temp_directory_path() / "unitslu_augment_test";
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(8);
  const Waveform speech = sine(200, 4000);
  write_wav(random_wave(rng, 1000), (dir / "noise.wav").string());
  write_wav(synthetic_rir(16000, 0.01, 0.003, 2), (dir / "rir.wav").string());

  EXPECT_EQ(parse_noise_spec("gaussian:0.01", 0).amplitude, 0.01);
  EXPECT_EQ(parse_noise_spec("speed:1.1", 0).factor, 1.1);
  const NoiseSpec snr = parse_noise_spec("snr:20:" + (dir / "noise.wav").string(), 3);
  EXPECT_EQ(snr.kind, NoiseSpec::Kind::kBackground);
  EXPECT_EQ(snr.snr_db, 20.0);
  EXPECT_EQ(apply_noise(speech, snr).size(), speech.size());
  EXPECT_EQ(apply_noise(speech, parse_noise_spec("reverb:" + (dir / "rir.wav").string(), 0)).size(),
            speech.size());
  for (const char* bad : {"", "gaussian", "gaussian:x", "snr:10", "speed:0", "blur:1", "gaussian:-1"}) {
    EXPECT_THROW(parse_noise_spec(bad, 0), std::invalid_argument) << bad;
  }
  std::filesystem::remove_all(dir);
}

TEST(Wav, RoundTripIs16BitExact) {
  const auto path = (std::filesystem::temp_directory_path() / "unitslu_wav_test.wav").string();
  Waveform w{22050, Eigen::VectorXf(5)};
  w.samples << 0.0f, 0.5f, -0.5f, -1.0f, 32767.0f / 32768.0f;
  write_wav(w, path);
  const Waveform back = read_wav(path);
  EXPECT_EQ(back.sample_rate, 22050);
  EXPECT_TRUE(back.samples == w.samples);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace unitslu
