// SPDX-License-Identifier: Apache-2.0

#include "mpsl/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "mpsl/errors.hpp"
#include "mpsl/json_fields.hpp"
#include "mpsl/serialize.hpp"

namespace mpsl::data {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError("synthetic spec: " + msg);
}

bool has(const SyntheticSpec& s, Modality m) {
  return std::find(s.modalities.begin(), s.modalities.end(), m) != s.modalities.end();
}

std::size_t levels(const SyntheticSpec& s) { return s.vocab_size / std::max<std::size_t>(s.text_len, 1); }

std::vector<double> gaussian(std::mt19937_64& rng, std::size_t n, double scale) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = scale * nd(rng);
  return v;
}

struct Tones {
  double freq[3];
  double amp[3];
  double phase[3];
};

Tones random_tones(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> bin(2, 30);
  std::uniform_real_distribution<double> amp(0.5, 1.0), ph(0.0, 2.0 * std::numbers::pi);
  Tones t{};
  for (int i = 0; i < 3; ++i) {
    t.freq[i] = bin(rng) / 64.0;
    t.amp[i] = amp(rng);
    t.phase[i] = ph(rng);
  }
  return t;
}

std::vector<double> render(const Tones& t, std::size_t n, double signal) {
  std::vector<double> v(n, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    for (int i = 0; i < 3; ++i) {
      v[s] += signal * t.amp[i] * std::sin(2.0 * std::numbers::pi * t.freq[i] * static_cast<double>(s) + t.phase[i]);
    }
  }
  return v;
}

void add_noise(std::vector<double>& v, std::mt19937_64& rng, double noise) {
  if (noise == 0.0) return;
  std::normal_distribution<double> nd(0.0, noise);
  for (auto& x : v) x += nd(rng);
}

template <typename T>
void shuffle_split(std::vector<T>& items, std::mt19937_64& rng) {
  std::shuffle(items.begin(), items.end(), rng);
}

Dataset generate_classification(const SyntheticSpec& s) {
  std::mt19937_64 rng(s.seed);
  const std::size_t image_n = s.image_size * s.image_size * s.image_channels;
  const std::size_t slice = std::max<std::size_t>(1, s.vocab_size / s.num_classes);
  std::vector<std::vector<double>> img_proto;
  std::vector<Tones> tone_proto;
  std::vector<std::vector<std::size_t>> text_proto;
  for (std::size_t c = 0; c < s.num_classes; ++c) {
    img_proto.push_back(gaussian(rng, image_n, s.signal));
    tone_proto.push_back(random_tones(rng));
    std::vector<std::size_t> t(s.text_len);
    std::uniform_int_distribution<std::size_t> tok(0, slice - 1);
    for (auto& x : t) x = (c * slice + tok(rng)) % s.vocab_size;
    text_proto.push_back(std::move(t));
  }

  Dataset d;
  d.spec = s;
  d.num_labels = s.num_classes;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> any_tok(0, s.vocab_size - 1);
  const double replace = std::clamp(s.noise, 0.0, 1.0);
  const std::size_t n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(s.samples_per_class)));
  for (std::size_t c = 0; c < s.num_classes; ++c) {
    std::vector<Sample> cls;
    for (std::size_t i = 0; i < s.samples_per_class; ++i) {
      Sample z;
      z.label = c;
      if (has(s, Modality::kVision)) {
        z.image = img_proto[c];
        add_noise(*z.image, rng, s.noise);
      }
      if (has(s, Modality::kAudio)) {
        z.audio = render(tone_proto[c], s.audio_samples, s.signal);
        add_noise(*z.audio, rng, s.noise);
      }
      if (has(s, Modality::kText)) {
        z.text = text_proto[c];
        for (auto& t : *z.text) {
          if (u(rng) < replace) t = any_tok(rng);
        }
      }
      cls.push_back(std::move(z));
    }
    d.train.insert(d.train.end(), cls.begin(), cls.begin() + static_cast<std::ptrdiff_t>(n_train));
    d.test.insert(d.test.end(), cls.begin() + static_cast<std::ptrdiff_t>(n_train), cls.end());
  }
  shuffle_split(d.train, rng);
  shuffle_split(d.test, rng);
  return d;
}

Dataset generate_retrieval(const SyntheticSpec& s) {
  std::mt19937_64 rng(s.seed);
  const std::size_t q = levels(s);
  const std::size_t k = s.text_len;
  const std::size_t image_n = s.image_size * s.image_size * s.image_channels;
  std::vector<std::vector<double>> basis;
  for (std::size_t j = 0; j < k; ++j) basis.push_back(gaussian(rng, image_n, 1.0));
  const double norm = 1.0 / std::sqrt(static_cast<double>(k));

  Dataset d;
  d.spec = s;
  d.num_labels = s.num_pairs;
  std::uniform_int_distribution<std::size_t> level(0, q - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double replace = std::clamp(s.noise, 0.0, 1.0);
  std::vector<Sample> all;
  for (std::size_t p = 0; p < s.num_pairs; ++p) {
    std::vector<std::size_t> code(k);
    for (auto& c : code) c = level(rng);
    Sample z;
    z.label = p;
    auto centered = [&](std::size_t j) { return q == 1 ? 0.0 : 2.0 * double(code[j]) / double(q - 1) - 1.0; };
    if (has(s, Modality::kVision)) {
      std::vector<double> img(image_n, 0.0);
      for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t i = 0; i < image_n; ++i) img[i] += s.signal * norm * centered(j) * basis[j][i];
      }
      add_noise(img, rng, s.noise);
      z.image = std::move(img);
    }
    if (has(s, Modality::kAudio)) {
      std::vector<double> a(s.audio_samples, 0.0);
      for (std::size_t j = 0; j < k; ++j) {
        const double f = static_cast<double>(2 + j % 29) / 64.0;
        for (std::size_t t = 0; t < a.size(); ++t) {
          a[t] += s.signal * norm * centered(j) * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(t) + j);
        }
      }
      add_noise(a, rng, s.noise);
      z.audio = std::move(a);
    }
    if (has(s, Modality::kText)) {
      std::vector<std::size_t> t(k);
      for (std::size_t j = 0; j < k; ++j) t[j] = j * q + (u(rng) < replace ? level(rng) : code[j]);
      z.text = std::move(t);
    }
    all.push_back(std::move(z));
  }
  const std::size_t n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(s.num_pairs)));
  d.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  d.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
  return d;
}

const char* split_name(bool train) { return train ? "train" : "test"; }

}  // namespace

void SyntheticSpec::validate() const {
  require(!modalities.empty(), "at least one modality is required");
  require(signal > 0.0, "signal must be positive");
  require(noise >= 0.0, "noise must be non-negative");
  if (task == Task::kClassification) {
    require(num_classes >= 2, "classification needs num_classes >= 2");
    require(samples_per_class > 0, "samples_per_class must be positive");
  } else {
    require(num_pairs >= 2, "retrieval needs num_pairs >= 2");
    require(modalities.size() == 2, "retrieval needs exactly two modalities");
    if (has(*this, Modality::kText)) require(levels(*this) >= 2, "vocab_size must be at least 2 * text_len");
  }
  if (has(*this, Modality::kVision)) require(image_size > 0 && image_channels > 0, "image dims must be positive");
  if (has(*this, Modality::kAudio)) require(audio_samples > 0, "audio_samples must be positive");
  if (has(*this, Modality::kText)) require(vocab_size > 0 && text_len > 0, "vocab_size and text_len must be positive");
}

void SyntheticSpec::match(const model::ModelConfig& c) {
  task = c.task;
  modalities = c.modalities;
  if (task == Task::kClassification) num_classes = c.num_classes;
  image_size = c.image_size;
  image_channels = c.image_channels;
  audio_samples = c.audio_samples;
  text_len = c.max_text_len;
  vocab_size = c.vocab_size;
}

nlohmann::json to_json(const SyntheticSpec& s) {
  nlohmann::json mods = nlohmann::json::array();
  for (Modality m : s.modalities) mods.push_back(model::to_string(m));
  return {{"task", model::to_string(s.task)},
          {"modalities", mods},
          {"num_classes", s.num_classes},
          {"num_pairs", s.num_pairs},
          {"samples_per_class", s.samples_per_class},
          {"signal", s.signal},
          {"noise", s.noise},
          {"seed", s.seed},
          {"image_size", s.image_size},
          {"image_channels", s.image_channels},
          {"audio_samples", s.audio_samples},
          {"text_len", s.text_len},
          {"vocab_size", s.vocab_size}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j, const std::string& path) {
  JsonFields f(j, path,
               {"task", "modalities", "num_classes", "num_pairs", "samples_per_class", "signal", "noise", "seed",
                "image_size", "image_channels", "audio_samples", "text_len", "vocab_size"});
  SyntheticSpec s;
  f.parsed("task", s.task, model::parse_task);
  if (f.has("modalities")) {
    const auto& m = f.raw("modalities");
    if (!m.is_array()) throw ConfigError(f.path("modalities") + ": expected an array");
    s.modalities.clear();
    for (const auto& v : m) {
      if (!v.is_string()) throw ConfigError(f.path("modalities") + ": expected strings");
      try {
        s.modalities.push_back(model::parse_modality(v.get<std::string>()));
      } catch (const ConfigError& e) {
        throw ConfigError(f.path("modalities") + ": " + e.what());
      }
    }
  }
  f.size("num_classes", s.num_classes);
  f.size("num_pairs", s.num_pairs);
  f.size("samples_per_class", s.samples_per_class);
  f.real("signal", s.signal);
  f.real("noise", s.noise);
  f.u64("seed", s.seed);
  f.size("image_size", s.image_size);
  f.size("image_channels", s.image_channels);
  f.size("audio_samples", s.audio_samples);
  f.size("text_len", s.text_len);
  f.size("vocab_size", s.vocab_size);
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return s;
}

Dataset generate(const SyntheticSpec& spec) {
  spec.validate();
  return spec.task == Task::kClassification ? generate_classification(spec) : generate_retrieval(spec);
}

std::vector<std::size_t> labels(const std::vector<Sample>& samples) {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

void export_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (bool train : {true, false}) {
    const auto& samples = train ? d.train : d.test;
    const std::size_t n = samples.size();
    const std::string split = split_name(train);
    std::vector<double> lab;
    for (const auto& s : samples) lab.push_back(static_cast<double>(s.label));
    save_tensor(dir / (split + "_labels.tensor"), Tensor::from_data({n}, lab));
    for (Modality m : d.spec.modalities) {
      std::vector<double> flat;
      std::size_t width = 0;
      for (const auto& s : samples) {
        if (m == Modality::kText) {
          width = s.text->size();
          for (auto t : *s.text) flat.push_back(static_cast<double>(t));
        } else {
          const auto& v = m == Modality::kVision ? *s.image : *s.audio;
          width = v.size();
          flat.insert(flat.end(), v.begin(), v.end());
        }
      }
      save_tensor(dir / (split + "_" + model::to_string(m) + ".tensor"), Tensor::from_data({n, width}, flat));
    }
  }
  nlohmann::json manifest = {{"format", "mpsl-dataset"},
                             {"version", 1},
                             {"spec", to_json(d.spec)},
                             {"num_labels", d.num_labels},
                             {"train", d.train.size()},
                             {"test", d.test.size()},
                             {"split", "80/20 stratified"}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

Dataset import_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot read " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError((dir / "manifest.json").string() + ": " + e.what());
  }
  Dataset d;
  d.spec = synthetic_spec_from_json(manifest.at("spec"), "manifest.spec");
  d.num_labels = manifest.at("num_labels").get<std::size_t>();
  for (bool train : {true, false}) {
    auto& samples = train ? d.train : d.test;
    const std::string split = split_name(train);
    const Tensor lab = load_tensor(dir / (split + "_labels.tensor"));
    samples.resize(lab.numel());
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i].label = static_cast<std::size_t>(lab.data()[i]);
    for (Modality m : d.spec.modalities) {
      const auto path = dir / (split + "_" + model::to_string(m) + ".tensor");
      const Tensor t = load_tensor(path);
      if (t.rank() != 2 || t.dim(0) != samples.size()) throw DataError(path.string() + ": row count mismatch");
      const std::size_t w = t.dim(1);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto row = t.data().subspan(i * w, w);
        if (m == Modality::kText) {
          samples[i].text.emplace();
          for (double v : row) samples[i].text->push_back(static_cast<std::size_t>(v));
        } else if (m == Modality::kVision) {
          samples[i].image.emplace(row.begin(), row.end());
        } else {
          samples[i].audio.emplace(row.begin(), row.end());
        }
      }
    }
  }
  return d;
}

}  // namespace mpsl::data
