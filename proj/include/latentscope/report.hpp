#pragma once

// Report encoders/decoders (CSV and JSON) and the run manifest.

#include <openssl/evp.h>

#include <chrono>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "latentscope/ablation.hpp"
#include "latentscope/corr.hpp"
#include "latentscope/embed.hpp"
#include "latentscope/errors.hpp"
#include "latentscope/io.hpp"
#include "latentscope/plot.hpp"
#include "latentscope/tucker.hpp"

namespace latentscope {

inline constexpr const char* kToolVersion = "0.1.0";

namespace report {

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0' || !std::isfinite(v)) throw FormatError(what + ": bad number '" + s + "'");
  return v;
}

/// Parses a CSV with an exact expected header into numeric rows.
inline std::vector<std::vector<double>> parse_csv(const std::string& text, const std::string& header,
                                                  const std::string& what) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header) throw FormatError(what + ": expected header '" + header + "'");
  const std::size_t cols = split(header).size();
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != cols) throw FormatError(what + ": ragged row");
    std::vector<double> row;
    for (const auto& c : cells) row.push_back(parse_double(c, what));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json space_label(const std::optional<std::size_t>& latent_dim) {
  return latent_dim ? Json(*latent_dim) : Json("original");
}

inline std::string space_name(const Json& label) {
  return label.is_string() ? label.get<std::string>() : "k=" + std::to_string(label.get<std::size_t>());
}

// ---- embedding -------------------------------------------------------------

inline std::string embedding_csv(const Embedding2D& e, const ClusterStats& c) {
  std::string out = "t,x,y,cluster\n";
  for (Eigen::Index t = 0; t < e.points.rows(); ++t) {
    out += std::to_string(t) + "," + format_double(e.points(t, 0)) + "," + format_double(e.points(t, 1)) + "," +
           std::to_string(c.labels[static_cast<std::size_t>(t)]) + "\n";
  }
  return out;
}

struct EmbeddingRow {
  std::size_t t;
  double x, y;
  std::size_t cluster;
};

inline std::vector<EmbeddingRow> parse_embedding_csv(const std::string& text) {
  std::vector<EmbeddingRow> out;
  for (const auto& r : parse_csv(text, "t,x,y,cluster", "embedding CSV")) {
    if (r[0] < 0 || r[3] < 0) throw FormatError("embedding CSV: negative index");
    out.push_back({static_cast<std::size_t>(r[0]), r[1], r[2], static_cast<std::size_t>(r[3])});
  }
  if (out.empty()) throw FormatError("embedding CSV: no rows");
  return out;
}

inline Json spread_json(const std::vector<SpreadRow>& rows) {
  Json out = Json::array();
  for (const auto& r : rows) {
    Json j;
    j["latent_dim"] = space_label(r.latent_dim);
    j["sigmas"] = r.clusters.sigmas;
    j["sizes"] = r.clusters.sizes;
    j["inertia"] = r.clusters.inertia;
    j["kl_divergence"] = r.embedding.kl_divergence;
    out.push_back(std::move(j));
  }
  return out;
}

// ---- correlation -----------------------------------------------------------

inline Json pca_json(const std::optional<std::size_t>& latent_dim, const PcaResult& p) {
  Json j;
  j["latent_dim"] = space_label(latent_dim);
  j["ratios"] = p.ratios;
  return j;
}

inline Json cca_json(const std::string& a, const std::string& b, const CcaResult& c, double ridge) {
  Json j;
  j["pair"] = {a, b};
  j["correlations"] = c.correlations;
  j["effective_rank"] = c.effective_rank();
  j["rank_x"] = c.rank_x;
  j["rank_y"] = c.rank_y;
  j["ridge"] = ridge;
  double mean = 0.0;
  for (double v : c.correlations) mean += v;
  j["mean_correlation"] = c.correlations.empty() ? 0.0 : mean / static_cast<double>(c.correlations.size());
  return j;
}

// ---- tucker ----------------------------------------------------------------

inline constexpr const char* kEntropyHeader = "r,entropy_truth,entropy_model,relerr_truth,relerr_model";

inline std::string entropy_csv(const std::vector<EntropyRow>& rows) {
  std::string out = std::string(kEntropyHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.r) + "," + format_double(r.entropy_truth) + "," + format_double(r.entropy_model) + "," +
           format_double(r.relerr_truth) + "," + format_double(r.relerr_model) + "\n";
  }
  return out;
}

inline std::vector<EntropyRow> parse_entropy_csv(const std::string& text) {
  std::vector<EntropyRow> out;
  for (const auto& r : parse_csv(text, kEntropyHeader, "entropy CSV")) {
    out.push_back({static_cast<std::size_t>(r[0]), r[1], r[2], r[3], r[4]});
  }
  if (out.empty()) throw FormatError("entropy CSV: no rows");
  return out;
}

inline std::string factors_csv(const std::vector<double>& abs_pearson) {
  std::string out = "component,abs_pearson\n";
  for (std::size_t i = 0; i < abs_pearson.size(); ++i) {
    out += std::to_string(i) + "," + format_double(abs_pearson[i]) + "\n";
  }
  return out;
}

inline std::vector<double> parse_factors_csv(const std::string& text) {
  std::vector<double> out;
  for (const auto& r : parse_csv(text, "component,abs_pearson", "factor CSV")) out.push_back(r[1]);
  return out;
}

// ---- ablation --------------------------------------------------------------

inline Json ablation_json(const AblationResult& r, AblationFill fill, const Coherence& coherence) {
  Json j;
  j["fill"] = to_string(fill);
  j["baseline_mse"] = r.baseline_mse;
  Json dims = Json::array();
  for (const auto& d : r.per_dim) {
    Json e;
    e["dim"] = d.dim;
    e["total_mse"] = d.total_mse;
    e["e_t"] = d.split.e_t;
    dims.push_back(std::move(e));
  }
  j["per_dim"] = std::move(dims);
  j["coherence"] = {{"same_label_fraction", coherence.observed},
                    {"permutation_mean", coherence.permuted_mean},
                    {"permutations", coherence.permuted.size()}};
  return j;
}

inline LabelGrid label_grid(const AttributionMap& m) { return {m.nlat, m.nlon, m.labels}; }

// ---- digests and manifest --------------------------------------------------

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string file_digest(const std::filesystem::path& p) { return sha256_hex(io::read_bytes(p)); }

}  // namespace report

/// Files written by one command. Everything registered is removed again
/// unless the command commits.
class OutputSet {
 public:
  OutputSet() = default;
  OutputSet(const OutputSet&) = delete;
  OutputSet& operator=(const OutputSet&) = delete;
  ~OutputSet() {
    if (!committed_) rollback();
  }

  const std::filesystem::path& track(const std::filesystem::path& p) {
    if (p.has_parent_path()) {
      std::filesystem::path dir;
      for (const auto& part : p.parent_path()) {
        dir /= part;
        if (!std::filesystem::exists(dir)) {
          std::filesystem::create_directory(dir);
          created_dirs_.push_back(dir);
        }
      }
    }
    if (seen_.insert(p.lexically_normal().string()).second) files_.push_back(p);
    return p;
  }

  void text(const std::filesystem::path& p, std::string_view s) { write_text(track(p), s); }
  void json(const std::filesystem::path& p, const Json& j) { write_json(track(p), j); }

  const std::vector<std::filesystem::path>& files() const { return files_; }
  void commit() { committed_ = true; }

  void rollback() {
    std::error_code ec;
    for (auto it = files_.rbegin(); it != files_.rend(); ++it) std::filesystem::remove(*it, ec);
    for (auto it = created_dirs_.rbegin(); it != created_dirs_.rend(); ++it) std::filesystem::remove(*it, ec);
    files_.clear();
    created_dirs_.clear();
  }

 private:
  std::vector<std::filesystem::path> files_;
  std::vector<std::filesystem::path> created_dirs_;
  std::set<std::string> seen_;
  bool committed_ = false;
};

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  Json config = Json::object();
  std::vector<std::filesystem::path> inputs;
  Json timings = Json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  Json to_json(const std::vector<std::filesystem::path>& outputs) const {
    Json j;
    j["tool"] = "latentscope";
    j["version"] = kToolVersion;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    Json in = Json::array();
    for (const auto& p : inputs) in.push_back({{"path", p.string()}, {"sha256", report::file_digest(p)}});
    j["inputs"] = std::move(in);
    Json out = Json::array();
    for (const auto& p : outputs) out.push_back(p.string());
    j["outputs"] = std::move(out);
    j["timings"] = timings;
    j["duration_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return j;
  }
};

}  // namespace latentscope
