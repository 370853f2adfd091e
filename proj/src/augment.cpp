#include "unitslu/augment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <vector>

#include "unitslu/binary_io.hpp"

namespace unitslu {
namespace {

void check_rates(const Waveform& a, const Waveform& b, const char* who) {
  if (a.sample_rate != b.sample_rate) {
    throw std::invalid_argument(std::string(who) + ": sample rate mismatch (" +
                                std::to_string(a.sample_rate) + " vs " +
                                std::to_string(b.sample_rate) + ")");
  }
}

double parse_double(const std::string& s, std::string_view what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) {
    throw std::invalid_argument("noise spec: bad " + std::string(what) + " '" + s + "'");
  }
  return v;
}

}  // namespace

double mean_power(const Eigen::Ref<const Eigen::VectorXf>& samples) {
  if (samples.size() == 0) return 0.0;
  return samples.cast<double>().squaredNorm() / static_cast<double>(samples.size());
}

Waveform add_gaussian(const Waveform& wave, double amplitude, std::uint64_t seed) {
  if (!(amplitude >= 0.0)) throw std::invalid_argument("add_gaussian: negative amplitude");
  Waveform out = wave;
  if (amplitude == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    out.samples[i] = static_cast<float>(static_cast<double>(wave.samples[i]) + amplitude * normal(rng));
  }
  return out;
}

Eigen::VectorXf scaled_noise_segment(const Waveform& wave, const Waveform& noise, double snr_db,
                                     std::uint64_t seed) {
  check_rates(wave, noise, "mix_at_snr");
  const double p_signal = mean_power(wave.samples);
  if (!(p_signal > 0.0)) throw std::invalid_argument("mix_at_snr: silent signal");
  if (!(mean_power(noise.samples) > 0.0)) throw std::invalid_argument("mix_at_snr: silent noise");

  std::mt19937_64 rng(seed);
  const Eigen::Index n = noise.size();
  const Eigen::Index offset = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
  Eigen::VectorXd segment(wave.size());
  for (Eigen::Index i = 0; i < wave.size(); ++i) {
    segment[i] = noise.samples[(offset + i) % n];
  }
  const double p_noise = segment.squaredNorm() / static_cast<double>(segment.size());
  if (!(p_noise > 0.0)) throw std::invalid_argument("mix_at_snr: silent noise segment");
  const double gain = std::sqrt(p_signal / (p_noise * std::pow(10.0, snr_db / 10.0)));
  return (gain * segment).cast<float>();
}

Waveform mix_at_snr(const Waveform& wave, const Waveform& noise, double snr_db,
                    std::uint64_t seed) {
  Waveform out = wave;
  out.samples += scaled_noise_segment(wave, noise, snr_db, seed);
  return out;
}

Waveform apply_reverb(const Waveform& wave, const Waveform& rir) {
  check_rates(wave, rir, "apply_reverb");
  if (rir.size() == 0) throw std::invalid_argument("apply_reverb: empty impulse response");
  const Eigen::Index n = wave.size();
  const Eigen::Index m = rir.size();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double h = rir.samples[j];
    if (h == 0.0) continue;
    for (Eigen::Index i = j; i < n; ++i) acc[i] += h * wave.samples[i - j];
  }
  Waveform out{wave.sample_rate, acc.cast<float>()};
  const double peak = out.size() ? out.samples.cwiseAbs().maxCoeff() : 0.0;
  if (peak > 1.0) {
    const double in_peak = wave.samples.cwiseAbs().maxCoeff();
    out.samples = (acc * (in_peak / peak)).cast<float>();
  }
  return out;
}

Waveform speed_perturb(const Waveform& wave, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("speed_perturb: factor must be > 0");
  if (factor == 1.0) return wave;
  const Eigen::Index n = wave.size();
  const auto len = static_cast<Eigen::Index>(std::llround(static_cast<double>(n) / factor));
  Waveform out{wave.sample_rate, Eigen::VectorXf(len)};
  for (Eigen::Index j = 0; j < len; ++j) {
    const double pos = static_cast<double>(j) * factor;
    const auto i0 = static_cast<Eigen::Index>(std::floor(pos));
    if (i0 >= n - 1) {
      out.samples[j] = wave.samples[n - 1];
      continue;
    }
    const double frac = pos - static_cast<double>(i0);
    out.samples[j] = static_cast<float>((1.0 - frac) * wave.samples[i0] +
                                        frac * wave.samples[i0 + 1]);
  }
  return out;
}

Waveform synthetic_rir(int sample_rate, double length_seconds, double decay_seconds,
                       std::uint64_t seed) {
  if (sample_rate <= 0 || !(length_seconds > 0.0) || !(decay_seconds > 0.0)) {
    throw std::invalid_argument("synthetic_rir: rate, length and decay must be positive");
  }
  const auto len = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::llround(length_seconds * sample_rate)));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Waveform rir{sample_rate, Eigen::VectorXf(len)};
  rir.samples[0] = 1.0f;
  for (Eigen::Index i = 1; i < len; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    rir.samples[i] = static_cast<float>(0.5 * normal(rng) * std::exp(-t / decay_seconds));
  }
  return rir;
}

NoiseSpec parse_noise_spec(std::string_view text, std::uint64_t seed) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    if (c == ':' && parts.size() < 2) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);

  NoiseSpec spec;
  spec.seed = seed;
  const std::string& kind = parts[0];
  auto require = [&](std::size_t n) {
    if (parts.size() != n) {
      throw std::invalid_argument("noise spec '" + std::string(text) + "': wrong field count");
    }
  };
  if (kind == "gaussian") {
    require(2);
    spec.kind = NoiseSpec::Kind::kGaussian;
    spec.amplitude = parse_double(parts[1], "amplitude");
    if (spec.amplitude < 0.0) throw std::invalid_argument("noise spec: negative amplitude");
  } else if (kind == "snr") {
    require(3);
    spec.kind = NoiseSpec::Kind::kBackground;
    spec.snr_db = parse_double(parts[1], "snr");
    spec.noise_path = parts[2];
  } else if (kind == "reverb") {
    // The path may itself contain ':'.
    if (parts.size() < 2) throw std::invalid_argument("noise spec: reverb needs a file");
    spec.kind = NoiseSpec::Kind::kReverb;
    spec.rir_path = std::string(text.substr(kind.size() + 1));
  } else if (kind == "speed") {
    require(2);
    spec.kind = NoiseSpec::Kind::kSpeed;
    spec.factor = parse_double(parts[1], "factor");
    if (!(spec.factor > 0.0)) throw std::invalid_argument("noise spec: factor must be > 0");
  } else {
    throw std::invalid_argument("noise spec: unknown kind '" + kind + "'");
  }
  return spec;
}

Waveform apply_noise(const Waveform& wave, const NoiseSpec& spec) {
  switch (spec.kind) {
    case NoiseSpec::Kind::kGaussian:
      return add_gaussian(wave, spec.amplitude, spec.seed);
    case NoiseSpec::Kind::kBackground:
      return mix_at_snr(wave, read_wav(spec.noise_path), spec.snr_db, spec.seed);
    case NoiseSpec::Kind::kReverb:
      return apply_reverb(wave, read_wav(spec.rir_path));
    case NoiseSpec::Kind::kSpeed:
      return speed_perturb(wave, spec.factor);
  }
  throw std::logic_error("apply_noise: unhandled kind");
}

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read wav '" + path + "'");
  auto fail = [&](const std::string& why) -> std::runtime_error {
    return std::runtime_error("wav '" + path + "': " + why);
  };
  if (!binary::read_magic(in, "RIFF")) throw fail("not a RIFF file");
  binary::read_u32(in);
  if (!binary::read_magic(in, "WAVE")) throw fail("not a WAVE file");

  int rate = 0;
  bool have_fmt = false;
  while (true) {
    char id[4];
    in.read(id, 4);
    if (in.gcount() != 4) throw fail("missing data chunk");
    const std::uint32_t size = binary::read_u32(in);
    const std::string chunk(id, 4);
    if (chunk == "fmt ") {
      const auto format = binary::read_le<std::uint16_t>(in);
      const auto channels = binary::read_le<std::uint16_t>(in);
      rate = static_cast<int>(binary::read_u32(in));
      binary::read_u32(in);                 // byte rate
      binary::read_le<std::uint16_t>(in);   // block align
      const auto bits = binary::read_le<std::uint16_t>(in);
      if (format != 1 || channels != 1 || bits != 16) {
        throw fail("only 16-bit PCM mono is supported");
      }
      in.ignore(size - 16 + (size & 1));
      have_fmt = true;
    } else if (chunk == "data") {
      if (!have_fmt) throw fail("data chunk before fmt chunk");
      Waveform w{rate, Eigen::VectorXf(size / 2)};
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        const auto raw = static_cast<std::int16_t>(binary::read_le<std::uint16_t>(in));
        w.samples[i] = static_cast<float>(raw) / 32768.0f;
      }
      return w;
    } else {
      in.ignore(size + (size & 1));
    }
  }
}

void write_wav(const Waveform& wave, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write wav '" + path + "'");
  const auto data_bytes = static_cast<std::uint32_t>(wave.size() * 2);
  out.write("RIFF", 4);
  binary::write_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  binary::write_u32(out, 16);
  binary::write_le<std::uint16_t>(out, 1);
  binary::write_le<std::uint16_t>(out, 1);
  binary::write_u32(out, static_cast<std::uint32_t>(wave.sample_rate));
  binary::write_u32(out, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  binary::write_le<std::uint16_t>(out, 2);
  binary::write_le<std::uint16_t>(out, 16);
  out.write("data", 4);
  binary::write_u32(out, data_bytes);
  for (Eigen::Index i = 0; i < wave.size(); ++i) {
    const long v = std::lround(static_cast<double>(wave.samples[i]) * 32768.0);
    const auto clipped = static_cast<std::int16_t>(std::clamp<long>(v, -32768, 32767));
    binary::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(clipped));
  }
}

}  // namespace unitslu
