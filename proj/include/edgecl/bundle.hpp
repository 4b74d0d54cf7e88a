#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edgecl/dataset.hpp"
#include "edgecl/errors.hpp"
#include "edgecl/features.hpp"
#include "edgecl/losses.hpp"
#include "edgecl/network.hpp"
#include "edgecl/support_set.hpp"
#include "edgecl/trainer.hpp"

namespace edgecl {

inline constexpr int kBundleFormatVersion = 1;

namespace detail {

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

// Parameters travel as little-endian 32-bit floats regardless of host order.
inline void append_f32(std::vector<std::uint8_t>& out, double v) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  out.push_back(static_cast<std::uint8_t>(bits & 0xFF));
  out.push_back(static_cast<std::uint8_t>((bits >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((bits >> 16) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((bits >> 24) & 0xFF));
}

inline double read_f32(const std::vector<std::uint8_t>& in, std::size_t offset) {
  const std::uint32_t bits = static_cast<std::uint32_t>(in[offset]) |
                             (static_cast<std::uint32_t>(in[offset + 1]) << 8) |
                             (static_cast<std::uint32_t>(in[offset + 2]) << 16) |
                             (static_cast<std::uint32_t>(in[offset + 3]) << 24);
  return static_cast<double>(std::bit_cast<float>(bits));
}

inline std::string crc_hex(std::uint32_t crc) {
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", crc);
  return buf;
}

}  // namespace detail

// Everything the edge needs from the cloud: the embedding network, the
// exemplar support set (raw feature vectors in selection order), the feature
// normalization statistics and the configs they were produced under.
struct TransferBundle {
  SensorLayout layout;
  Normalizer normalizer;
  EmbeddingNetwork net;
  SupportSet support;
  TrainConfig config;
  std::vector<std::string> label_names;

  explicit TransferBundle(EmbeddingNetwork n) : net(std::move(n)) {}
};

namespace detail {

inline nlohmann::json layer_spec_json(const LayerSpec& s) {
  return {{"input_dim", s.input_dim},
          {"output_dim", s.output_dim},
          {"batchnorm", s.batchnorm},
          {"relu", s.relu}};
}

inline nlohmann::json train_config_json(const TrainConfig& c) {
  return {{"initial_lr", c.initial_lr},
          {"lr_halving", c.lr_halving},
          {"max_epochs", c.max_epochs},
          {"early_stop_delta", c.early_stop_delta},
          {"early_stop_patience", c.early_stop_patience},
          {"batch_size", c.batch_size},
          {"validation_fraction", c.validation_fraction},
          {"seed", c.seed},
          {"hidden_dims", c.hidden_dims},
          {"embedding_dim", c.embedding_dim},
          {"update_running_stats", c.update_running_stats},
          {"margin", c.loss.margin},
          {"alpha", c.loss.alpha},
          {"pair_strategy", std::string(to_string(c.loss.pair_strategy))},
          {"max_pairs", c.loss.max_pairs},
          {"normalize_terms", c.loss.normalize_terms}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.initial_lr = j.at("initial_lr").get<double>();
  c.lr_halving = j.at("lr_halving").get<bool>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.early_stop_delta = j.at("early_stop_delta").get<double>();
  c.early_stop_patience = j.at("early_stop_patience").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.validation_fraction = j.at("validation_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
  c.embedding_dim = j.at("embedding_dim").get<int>();
  c.update_running_stats = j.at("update_running_stats").get<bool>();
  c.loss.margin = j.at("margin").get<double>();
  c.loss.alpha = j.at("alpha").get<double>();
  c.loss.pair_strategy = pair_strategy_from_string(j.at("pair_strategy").get<std::string>());
  c.loss.max_pairs = j.at("max_pairs").get<std::size_t>();
  c.loss.normalize_terms = j.at("normalize_terms").get<bool>();
  return c;
}

struct TensorWriter {
  std::vector<std::uint8_t> payload;
  nlohmann::json table = nlohmann::json::array();

  void add(const std::string& name, std::size_t rows, std::size_t cols, const double* values) {
    table.push_back({{"name", name},
                     {"rows", rows},
                     {"cols", cols},
                     {"offset", payload.size()}});
    for (std::size_t i = 0; i < rows * cols; ++i) append_f32(payload, values[i]);
  }

  void add(const std::string& name, const std::vector<double>& v) {
    add(name, v.empty() ? 0 : 1, v.size(), v.data());
  }

  void add(const std::string& name, const Matrix& m) { add(name, m.rows(), m.cols(), m.data().data()); }
};

struct TensorReader {
  const std::vector<std::uint8_t>& payload;
  const nlohmann::json& table;
  std::size_t cursor = 0;

  // Tensors must appear in writer order; names and shapes are cross-checked.
  std::pair<std::size_t, std::size_t> next(const std::string& name, std::vector<double>& out) {
    if (cursor >= table.size()) throw ShapeError("bundle: missing tensor '" + name + "'");
    const nlohmann::json& rec = table[cursor++];
    if (rec.at("name").get<std::string>() != name)
      throw ShapeError("bundle: expected tensor '" + name + "', found '" +
                       rec.at("name").get<std::string>() + "'");
    const std::size_t rows = rec.at("rows").get<std::size_t>();
    const std::size_t cols = rec.at("cols").get<std::size_t>();
    const std::size_t offset = rec.at("offset").get<std::size_t>();
    if (offset + 4 * rows * cols > payload.size())
      throw ShapeError("bundle: tensor '" + name + "' overruns the payload");
    out.resize(rows * cols);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = read_f32(payload, offset + 4 * i);
    return {rows, cols};
  }

  Matrix next_matrix(const std::string& name, std::size_t want_rows, std::size_t want_cols) {
    std::vector<double> flat;
    const auto [rows, cols] = next(name, flat);
    if (rows != want_rows || cols != want_cols)
      throw ShapeError("bundle: tensor '" + name + "' is " + std::to_string(rows) + "x" +
                       std::to_string(cols) + ", expected " + std::to_string(want_rows) + "x" +
                       std::to_string(want_cols));
    Matrix m(rows, cols);
    m.data() = std::move(flat);
    return m;
  }

  std::vector<double> next_vector(const std::string& name, std::size_t want) {
    std::vector<double> flat;
    const auto [rows, cols] = next(name, flat);
    if (flat.size() != want)
      throw ShapeError("bundle: tensor '" + name + "' has " + std::to_string(flat.size()) +
                       " entries, expected " + std::to_string(want));
    return flat;
  }
};

}  // namespace detail

// Writes manifest.json + payload.bin into the destination directory. Equal
// bundles serialize to identical bytes.
inline void save_bundle(const TransferBundle& bundle, const std::string& destination) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(destination, ec);
  if (ec) throw IoError("cannot create " + destination + ": " + ec.message());

  detail::TensorWriter w;
  for (std::size_t k = 0; k < bundle.net.num_layers(); ++k) {
    const auto& p = bundle.net.layer(k);
    const std::string prefix = "layer" + std::to_string(k) + ".";
    w.add(prefix + "weight", p.weight);
    w.add(prefix + "bias", p.bias);
    if (bundle.net.spec(k).batchnorm) {
      w.add(prefix + "gamma", p.gamma);
      w.add(prefix + "beta", p.beta);
      w.add(prefix + "running_mean", p.running_mean);
      w.add(prefix + "running_var", p.running_var);
    }
  }
  w.add("normalizer.mean", bundle.normalizer.mean);
  w.add("normalizer.stddev", bundle.normalizer.stddev);

  nlohmann::json exemplars = nlohmann::json::array();
  for (int label : bundle.support.labels()) {
    const ExemplarSet& set = bundle.support.exemplar_set(label);
    w.add("exemplars." + std::to_string(label), set.as_matrix());
    exemplars.push_back({{"label", label},
                         {"count", set.size()},
                         {"source_indices", set.source_indices}});
  }

  nlohmann::json manifest;
  manifest["format_version"] = kBundleFormatVersion;
  manifest["layout"] = {{"triaxial_sensors", bundle.layout.triaxial_sensors},
                        {"scalar_sensors", bundle.layout.scalar_sensors},
                        {"sample_rate", bundle.layout.sample_rate}};
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSpec& s : bundle.net.specs()) layers.push_back(detail::layer_spec_json(s));
  manifest["layers"] = layers;
  manifest["embedding_dim"] = bundle.net.embedding_dim();
  manifest["train_config"] = detail::train_config_json(bundle.config);
  manifest["label_names"] = bundle.label_names;
  manifest["exemplars"] = exemplars;
  manifest["support_capacity"] = bundle.support.cache_capacity();
  manifest["tensors"] = w.table;
  manifest["payload_bytes"] = w.payload.size();
  manifest["payload_crc32"] = detail::crc_hex(detail::crc32(w.payload.data(), w.payload.size()));

  const fs::path dir(destination);
  {
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
    if (!out) throw IoError("write failed for " + (dir / "manifest.json").string());
  }
  {
    std::ofstream out(dir / "payload.bin", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "payload.bin").string());
    out.write(reinterpret_cast<const char*>(w.payload.data()),
              static_cast<std::streamsize>(w.payload.size()));
    if (!out) throw IoError("write failed for " + (dir / "payload.bin").string());
  }
}

inline TransferBundle load_bundle(const std::string& source) {
  namespace fs = std::filesystem;
  const fs::path dir(source);

  nlohmann::json manifest;
  {
    std::ifstream in(dir / "manifest.json", std::ios::binary);
    if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
    try {
      in >> manifest;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("bundle manifest: " + std::string(e.what()));
    }
  }

  if (!manifest.contains("format_version") || !manifest["format_version"].is_number_integer())
    throw VersionError("bundle: manifest carries no readable format version");
  const int version = manifest["format_version"].get<int>();
  if (version != kBundleFormatVersion)
    throw VersionError("bundle: format version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(kBundleFormatVersion) +
                       ")");

  std::vector<std::uint8_t> payload;
  {
    std::ifstream in(dir / "payload.bin", std::ios::binary);
    if (!in) throw IoError("cannot open " + (dir / "payload.bin").string());
    payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  const std::string want_crc = manifest.at("payload_crc32").get<std::string>();
  const std::string have_crc = detail::crc_hex(detail::crc32(payload.data(), payload.size()));
  if (payload.size() != manifest.at("payload_bytes").get<std::size_t>() || want_crc != have_crc)
    throw ChecksumError("bundle: payload checksum mismatch (manifest " + want_crc + ", payload " +
                        have_crc + ")");

  std::vector<LayerSpec> specs;
  for (const auto& j : manifest.at("layers"))
    specs.push_back(LayerSpec{j.at("input_dim").get<int>(), j.at("output_dim").get<int>(),
                              j.at("batchnorm").get<bool>(), j.at("relu").get<bool>()});
  const int embedding_dim = manifest.at("embedding_dim").get<int>();
  EmbeddingNetwork net = [&] {
    try {
      return EmbeddingNetwork(specs, embedding_dim, 0);
    } catch (const Error& e) {
      throw ShapeError("bundle: inconsistent layer table: " + std::string(e.what()));
    }
  }();

  detail::TensorReader r{payload, manifest.at("tensors")};
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    const LayerSpec& s = net.spec(k);
    const std::string prefix = "layer" + std::to_string(k) + ".";
    auto& p = net.layer_mut(k);
    p.weight = r.next_matrix(prefix + "weight", s.output_dim, s.input_dim);
    p.bias = r.next_vector(prefix + "bias", s.output_dim);
    if (s.batchnorm) {
      p.gamma = r.next_vector(prefix + "gamma", s.output_dim);
      p.beta = r.next_vector(prefix + "beta", s.output_dim);
      p.running_mean = r.next_vector(prefix + "running_mean", s.output_dim);
      p.running_var = r.next_vector(prefix + "running_var", s.output_dim);
    }
  }

  TransferBundle bundle(std::move(net));
  bundle.net.set_mode(Mode::Eval);

  const auto& jl = manifest.at("layout");
  bundle.layout.triaxial_sensors = jl.at("triaxial_sensors").get<int>();
  bundle.layout.scalar_sensors = jl.at("scalar_sensors").get<int>();
  bundle.layout.sample_rate = jl.at("sample_rate").get<double>();
  bundle.layout.validate();

  std::vector<double> flat;
  auto [mr, mc] = r.next("normalizer.mean", flat);
  bundle.normalizer.mean = flat;
  auto [sr, sc] = r.next("normalizer.stddev", flat);
  bundle.normalizer.stddev = flat;
  if (bundle.normalizer.mean.size() != bundle.normalizer.stddev.size())
    throw ShapeError("bundle: normalizer mean/stddev length mismatch");
  (void)mr, (void)mc, (void)sr, (void)sc;

  bundle.support.set_cache_capacity(manifest.value("support_capacity", std::size_t{0}));
  const std::size_t feature_dim = static_cast<std::size_t>(bundle.net.input_dim());
  for (const auto& je : manifest.at("exemplars")) {
    const int label = je.at("label").get<int>();
    const std::size_t count = je.at("count").get<std::size_t>();
    Matrix rows = r.next_matrix("exemplars." + std::to_string(label), count, feature_dim);
    ExemplarSet set;
    set.label = label;
    for (std::size_t i = 0; i < rows.rows(); ++i) set.exemplars.push_back(rows.row_copy(i));
    set.source_indices = je.at("source_indices").get<std::vector<std::size_t>>();
    if (set.source_indices.size() != set.exemplars.size())
      throw ShapeError("bundle: exemplar selection-order length mismatch for label " +
                       std::to_string(label));
    bundle.support.insert(std::move(set));
  }

  bundle.config = detail::train_config_from_json(manifest.at("train_config"));
  bundle.label_names = manifest.at("label_names").get<std::vector<std::string>>();
  return bundle;
}

}  // namespace edgecl
