#pragma once

// Embedding-ensemble datasets: JSONL ingest/export, synthetic generation,
// noise augmentation and mini-batch sampling.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ensad/numkit.hpp"

namespace ensad {

struct EmbeddingEnsemble {
  std::string id;
  Vec h0;                         // source-language sentence embedding
  std::vector<Vec> translations;  // m translation embeddings
  std::optional<std::string> source_text;
  std::optional<std::vector<std::string>> translation_texts;

  std::size_t m() const { return translations.size(); }

  // H = (h0, h1, ..., hm), d x (m+1).
  Mat matrix() const {
    std::vector<Vec> cols;
    cols.reserve(translations.size() + 1);
    cols.push_back(h0);
    cols.insert(cols.end(), translations.begin(), translations.end());
    return Mat::from_columns(cols);
  }
};

// Desk-scale stand-in for an image: a vector with entries in [-1, 1].
struct ImageVec {
  Vec data;
};

struct DataItem {
  EmbeddingEnsemble text;
  ImageVec image;
};

struct Dataset {
  std::size_t d = 0;
  std::size_t m = 0;
  std::size_t d_img = 0;
  std::vector<DataItem> items;

  std::size_t size() const { return items.size(); }
};

struct SyntheticSpec {
  std::size_t n_items = 1000;
  std::size_t d = 512;
  std::size_t m = 12;
  std::size_t d_img = 48;
  double sigma_source = 0.4;
  double sigma_trans = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_items == 0 || d == 0 || m == 0 || d_img == 0)
      throw ValidationError("synthetic spec: dimensions and n_items must be positive");
    if (!(sigma_source >= 0.0) || !(sigma_trans >= 0.0))
      throw ValidationError("synthetic spec: sigmas must be >= 0");
  }
};

inline constexpr double kUnitNormTolerance = 1e-9;
inline constexpr double kLoadRenormTolerance = 1e-6;

inline void validate_dataset(const Dataset& ds) {
  if (ds.items.empty()) throw ValidationError("dataset is empty");
  if (ds.d == 0 || ds.m == 0 || ds.d_img == 0) throw ValidationError("dataset dimensions must be positive");
  for (const auto& it : ds.items) {
    if (it.text.h0.size() != ds.d || it.text.m() != ds.m || it.image.data.size() != ds.d_img)
      throw ValidationError("dataset item '" + it.text.id + "' has inconsistent dimensions");
  }
}

// ---------------------------------------------------------------------------
// Synthetic data

// Each item draws a latent u uniform on the sphere; the source and translation
// embeddings are independently perturbed copies of u, and the "real image" is
// tanh(M u) for a dataset-wide matrix M. M is drawn first from the seed.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SeededRng rng(spec.seed);
  const Mat mix = gaussian_mat(rng, spec.d_img, spec.d, 1.0);

  Dataset ds{spec.d, spec.m, spec.d_img, {}};
  ds.items.reserve(spec.n_items);
  for (std::size_t n = 0; n < spec.n_items; ++n) {
    const Vec u = l2_normalize(gaussian(rng, spec.d));
    DataItem item;
    item.text.id = "syn-" + std::to_string(n);
    item.text.h0 = l2_normalize(u + spec.sigma_source * gaussian(rng, spec.d));
    for (std::size_t i = 0; i < spec.m; ++i)
      item.text.translations.push_back(l2_normalize(u + spec.sigma_trans * gaussian(rng, spec.d)));
    Vec img = matvec(mix, u.span());
    for (auto& x : img) x = std::tanh(x);
    item.image.data = std::move(img);
    ds.items.push_back(std::move(item));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Noise augmentation

struct NoiseMix {
  double source = 0.10;
  double translation = 0.01;
};

// x <- normalize((1 - p) x + p normalize(g)), g ~ N(0, I), applied to h0 with
// mix.source and to every translation with mix.translation. A zero weight
// leaves the vector untouched and consumes no randomness.
inline EmbeddingEnsemble augment_noise(const EmbeddingEnsemble& e, NoiseMix mix, SeededRng& rng) {
  if (!(mix.source >= 0.0 && mix.source <= 1.0) || !(mix.translation >= 0.0 && mix.translation <= 1.0))
    throw ValidationError("augment_noise: mixing weights must lie in [0, 1]");
  auto blend = [&rng](const Vec& x, double p) {
    if (p == 0.0) return x;
    const Vec g = l2_normalize(gaussian(rng, x.size()));
    return l2_normalize((1.0 - p) * x + p * g);
  };
  EmbeddingEnsemble out = e;
  out.h0 = blend(e.h0, mix.source);
  for (auto& t : out.translations) t = blend(t, mix.translation);
  return out;
}

// ---------------------------------------------------------------------------
// Batching

// Infinite stream of mini-batches. Within a batch items are distinct (partial
// Fisher-Yates); successive batches are independent draws.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch) : n_(dataset_size), batch_(batch) {
    if (batch == 0 || batch > dataset_size)
      throw ValidationError("batch size must be in [1, dataset size]");
  }

  std::vector<std::size_t> next(SeededRng& rng) const {
    std::vector<std::size_t> perm(n_);
    for (std::size_t i = 0; i < n_; ++i) perm[i] = i;
    for (std::size_t i = 0; i < batch_; ++i) {
      const std::size_t j = i + rng.uniform_index(n_ - i);
      std::swap(perm[i], perm[j]);
    }
    perm.resize(batch_);
    return perm;
  }

 private:
  std::size_t n_;
  std::size_t batch_;
};

// ---------------------------------------------------------------------------
// JSONL I/O

namespace detail {

inline Vec unit_vector_from_json(const nlohmann::json& j, std::size_t dim, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + ": expected an array");
  if (j.size() != dim)
    throw ValidationError(where + ": expected " + std::to_string(dim) + " values, got " + std::to_string(j.size()));
  Vec v(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    if (!j[i].is_number()) throw ValidationError(where + ": non-numeric entry");
    v[i] = j[i].get<double>();
  }
  if (!all_finite(v.span())) throw ValidationError(where + ": non-finite entry");
  const double n = norm(v.span());
  if (std::abs(n - 1.0) > kLoadRenormTolerance)
    throw ValidationError(where + ": norm " + std::to_string(n) + " deviates from 1 by more than 1e-6");
  if (std::abs(n - 1.0) > kUnitNormTolerance) v = l2_normalize(v);
  return v;
}

}  // namespace detail

inline nlohmann::json dataset_header_json(const Dataset& ds) {
  return {{"format", "ensad-jsonl"}, {"version", 1}, {"d", ds.d}, {"m", ds.m}, {"d_img", ds.d_img}};
}

inline nlohmann::json item_to_json(const DataItem& it) {
  nlohmann::json j;
  j["id"] = it.text.id;
  j["h0"] = it.text.h0.values();
  auto& tr = j["translations"] = nlohmann::json::array();
  for (const auto& t : it.text.translations) tr.push_back(t.values());
  j["image"] = it.image.data.values();
  if (it.text.source_text) j["source_text"] = *it.text.source_text;
  if (it.text.translation_texts) j["translation_texts"] = *it.text.translation_texts;
  return j;
}

inline void write_jsonl(std::ostream& os, const Dataset& ds) {
  os << dataset_header_json(ds).dump() << '\n';
  for (const auto& it : ds.items) os << item_to_json(it).dump() << '\n';
}

inline Dataset read_jsonl(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&lineno](const std::string& msg) -> ValidationError {
    return ValidationError("line " + std::to_string(lineno) + ": " + msg);
  };

  Dataset ds;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') throw fail("CRLF line endings are not supported");
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw fail(std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw fail("expected a JSON object");

    try {
      if (!have_header) {
        if (j.value("format", std::string{}) != "ensad-jsonl") throw fail("missing ensad-jsonl header");
        if (j.value("version", 0) != 1) throw fail("unsupported version");
        ds.d = j.at("d").get<std::size_t>();
        ds.m = j.at("m").get<std::size_t>();
        ds.d_img = j.at("d_img").get<std::size_t>();
        if (ds.d == 0 || ds.m == 0 || ds.d_img == 0) throw fail("header dimensions must be positive");
        have_header = true;
        continue;
      }

      DataItem it;
      it.text.id = j.at("id").get<std::string>();
      it.text.h0 = detail::unit_vector_from_json(j.at("h0"), ds.d, "h0");
      const auto& tr = j.at("translations");
      if (!tr.is_array() || tr.size() != ds.m)
        throw fail("expected m=" + std::to_string(ds.m) + " translations, got " +
                   std::to_string(tr.is_array() ? tr.size() : 0));
      for (std::size_t i = 0; i < ds.m; ++i)
        it.text.translations.push_back(
            detail::unit_vector_from_json(tr[i], ds.d, "translations[" + std::to_string(i) + "]"));

      const auto& img = j.at("image");
      if (!img.is_array() || img.size() != ds.d_img) throw fail("image must have d_img entries");
      it.image.data = Vec(img.get<std::vector<double>>());
      for (double x : it.image.data)
        if (!(x >= -1.0 && x <= 1.0)) throw fail("image entries must lie in [-1, 1]");

      if (j.contains("source_text")) it.text.source_text = j["source_text"].get<std::string>();
      if (j.contains("translation_texts")) {
        auto texts = j["translation_texts"].get<std::vector<std::string>>();
        if (texts.size() != ds.m) throw fail("translation_texts must have m entries");
        it.text.translation_texts = std::move(texts);
      }
      ds.items.push_back(std::move(it));
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      if (msg.rfind("line ", 0) == 0) throw;
      throw fail(msg);
    } catch (const nlohmann::json::exception& e) {
      throw fail(e.what());
    }
  }
  if (!have_header) throw ValidationError("empty dataset file");
  if (ds.items.empty()) throw ValidationError("dataset has no items");
  return ds;
}

inline Dataset load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open dataset file: " + path);
  return read_jsonl(in);
}

inline std::string to_jsonl(const Dataset& ds) {
  std::ostringstream os;
  write_jsonl(os, ds);
  return os.str();
}

}  // namespace ensad
