#pragma once

// Analysis stages shared by the individual CLI commands and the sweep. Each
// stage computes one analysis and writes its reports through an OutputSet.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "latentscope/ablation.hpp"
#include "latentscope/corr.hpp"
#include "latentscope/embed.hpp"
#include "latentscope/field.hpp"
#include "latentscope/io.hpp"
#include "latentscope/mmgn.hpp"
#include "latentscope/parallel.hpp"
#include "latentscope/plot.hpp"
#include "latentscope/report.hpp"
#include "latentscope/tucker.hpp"

namespace latentscope::pipeline {

namespace fs = std::filesystem;

inline std::string space_file_tag(const std::optional<std::size_t>& k) {
  return k ? "k" + std::to_string(*k) : "original";
}

inline std::vector<SpreadRow> embed_stage(const std::vector<LatentSpace>& spaces, const Tensor3& field,
                                          const SpreadConfig& cfg, const fs::path& dir, OutputSet& out) {
  const auto rows = spread_sweep(spaces, field.frames(), cfg);
  for (const auto& r : rows) {
    out.text(dir / ("embedding_" + space_file_tag(r.latent_dim) + ".csv"), report::embedding_csv(r.embedding, r.clusters));
  }
  Json j;
  j["perplexity"] = cfg.tsne.perplexity;
  j["iterations"] = cfg.tsne.iterations;
  j["clusters"] = cfg.clusters;
  j["restarts"] = cfg.restarts;
  j["clustered"] = cfg.cluster_raw ? "raw" : "embedding";
  j["spaces"] = report::spread_json(rows);
  out.json(dir / "spread.json", j);
  return rows;
}

inline Json pca_stage(const std::vector<LatentSpace>& spaces, const Tensor3& field, const fs::path& path,
                      OutputSet& out) {
  Json j = Json::array();
  for (const auto& s : spaces) j.push_back(report::pca_json(s.latent_dim, pca_evr(s.latents)));
  j.push_back(report::pca_json(std::nullopt, pca_evr(field.frames())));
  out.json(path, j);
  return j;
}

inline Json cca_stage(const std::vector<LatentSpace>& spaces, const Tensor3& field, double ridge,
                      const fs::path& path, OutputSet& out) {
  const Matrix original = field.frames();
  Json j = Json::array();
  for (const auto& s : spaces) {
    j.push_back(report::cca_json("k=" + std::to_string(s.latent_dim), "original", cca(s.latents, original, ridge), ridge));
  }
  out.json(path, j);
  return j;
}

struct TuckerStageConfig {
  std::size_t r_max = 16;
  EntropyNorm norm = EntropyNorm::L1;
  HooiConfig hooi;
};

inline void tucker_stage(const Tensor3& truth, const Tensor3& model_out, const TuckerStageConfig& cfg,
                         const fs::path& dir, OutputSet& out) {
  const auto rows = entropy_sweep(truth, model_out, cfg.r_max, cfg.norm, cfg.hooi);
  out.text(dir / "entropy_sweep.csv", report::entropy_csv(rows));

  const std::size_t r = cfg.r_max;
  const TuckerResult a = tucker_hooi(truth, {r, r, r}, cfg.hooi);
  const TuckerResult b = tucker_hooi(model_out, {r, r, r}, cfg.hooi);
  static constexpr const char* kModeNames[3] = {"time", "lat", "lon"};
  Json modes = Json::object();
  for (std::size_t m = 0; m < 3; ++m) {
    const auto cmp = compare_factors(a.factors[m], b.factors[m]);
    out.text(dir / ("factors_" + std::string(kModeNames[m]) + ".csv"), report::factors_csv(cmp));
    modes[kModeNames[m]] = cmp;
  }
  Json zc = Json::array();
  for (Eigen::Index c = 0; c < a.factors[1].cols(); ++c) zc.push_back(zero_crossings(a.factors[1].col(c)));

  Json j;
  j["ranks"] = {r, r, r};
  j["entropy_log"] = "natural";
  j["entropy_normalization"] = to_string(cfg.norm);
  j["hooi_max_iters"] = cfg.hooi.max_iters;
  j["hooi_tol"] = cfg.hooi.tol;
  j["relerr_truth"] = a.rel_error;
  j["relerr_model"] = b.rel_error;
  j["factor_abs_pearson"] = std::move(modes);
  j["truth_lat_zero_crossings"] = std::move(zc);
  out.json(dir / "tucker.json", j);
}

struct AblationStageConfig {
  AblationFill fill = AblationFill::Zero;
  std::size_t permutations = 100;
  std::uint64_t seed = 0;
};

inline AttributionMap ablation_stage(const MmgnModel& model, const Matrix& latents, const Tensor3& truth,
                                     const AblationStageConfig& cfg, const fs::path& dir, OutputSet& out) {
  const AblationResult r = run_ablation(model, latents, truth, cfg.fill);
  const AttributionMap map = attribution_map(r);
  const Coherence c = spatial_coherence(map, cfg.permutations, cfg.seed);
  out.json(dir / "ablation.json", report::ablation_json(r, cfg.fill, c));
  write_label_grid(report::label_grid(map), out.track(dir / "attribution.fld"));
  return map;
}

// ---- plots -----------------------------------------------------------------

inline const std::vector<std::string>& plot_kinds() {
  static const std::vector<std::string> kinds{"embed", "evr", "entropy", "attr", "spread", "loss"};
  return kinds;
}

/// Renders one report file. Only values stored in the report are drawn.
inline std::string render_plot(const std::string& kind, const fs::path& in) {
  if (kind == "embed") {
    std::vector<plot::ScatterPoint> pts;
    for (const auto& r : report::parse_embedding_csv(read_text(in))) {
      pts.push_back(plot::ScatterPoint{static_cast<double>(r.t), r.x, r.y});
    }
    return plot::embedding_scatter(pts, "t-SNE of " + in.stem().string() + " (color = time)");
  }
  if (kind == "evr") {
    Json j = read_json(in);
    if (j.is_object()) j = Json::array({j});
    if (!j.is_array() || j.empty()) throw FormatError("evr plot: expected a PCA report");
    std::vector<plot::Series> series;
    for (const auto& e : j) {
      if (!e.contains("ratios") || !e.contains("latent_dim")) throw FormatError("evr plot: malformed PCA entry");
      auto ratios = e["ratios"].get<std::vector<double>>();
      if (ratios.empty()) throw FormatError("evr plot: empty ratio list");
      // The original-data curve has thousands of trailing zeros; cut it at
      // the widest latent curve so the shapes stay comparable.
      series.push_back({report::space_name(e["latent_dim"]), std::move(ratios)});
    }
    std::size_t widest = 0;
    for (const auto& s : series) {
      if (s.name != "original") widest = std::max(widest, s.values.size());
    }
    for (auto& s : series) {
      if (s.name == "original" && widest > 0 && s.values.size() > widest) s.values.resize(widest);
    }
    return plot::line_chart(series, "Explained variance ratio", "component", "ratio");
  }
  if (kind == "entropy") {
    const auto rows = report::parse_entropy_csv(read_text(in));
    plot::Series truth{"truth", {}}, model{"model", {}};
    for (const auto& r : rows) {
      truth.values.push_back(r.entropy_truth);
      model.values.push_back(r.entropy_model);
    }
    return plot::line_chart({truth, model}, "Tucker core entropy", "multirank r", "entropy (nats)");
  }
  if (kind == "attr") {
    const LabelGrid g = read_label_grid(in);
    return plot::label_heatmap(g.labels, g.nlat, g.nlon, "Most damaging latent dimension per grid point");
  }
  if (kind == "spread") {
    const Json j = read_json(in);
    if (!j.contains("spaces") || !j["spaces"].is_array()) throw FormatError("spread plot: expected a spread report");
    std::vector<plot::BoxGroup> groups;
    for (const auto& e : j["spaces"]) groups.push_back({report::space_name(e.at("latent_dim")), e.at("sigmas").get<std::vector<double>>()});
    return plot::spread_chart(groups, "Cluster spread per latent space");
  }
  if (kind == "loss") {
    const Json j = read_json(in);
    if (!j.contains("loss_history")) throw FormatError("loss plot: expected a training report");
    return plot::line_chart({{"loss", j["loss_history"].get<std::vector<double>>()}}, "Training objective", "epoch",
                            "loss");
  }
  throw ArgumentError("plot: unknown kind '" + kind + "'");
}

// ---- sweep -----------------------------------------------------------------

struct SweepConfig {
  std::vector<std::size_t> latent_dims{1, 2, 4, 8, 16, 32};
  std::size_t nlat = 32, nlon = 64, nt = 48;
  double rate = 0.05;
  std::uint64_t seed = 0;
  MmgnArch arch;
  TrainConfig train;
  SpreadConfig spread;
  double cca_ridge = 1e-8;
  TuckerStageConfig tucker;
  std::optional<std::size_t> tucker_dim;   // default: largest latent size
  std::optional<std::size_t> ablate_dim;   // default: 16 when swept, else largest
  AblationStageConfig ablation;

  std::size_t resolved_tucker_dim() const {
    return tucker_dim.value_or(*std::max_element(latent_dims.begin(), latent_dims.end()));
  }
  std::size_t resolved_ablate_dim() const {
    if (ablate_dim) return *ablate_dim;
    const bool has16 = std::find(latent_dims.begin(), latent_dims.end(), 16) != latent_dims.end();
    return has16 ? 16 : *std::max_element(latent_dims.begin(), latent_dims.end());
  }

  void validate() const {
    if (latent_dims.size() < 2) throw ArgumentError("sweep: need at least two latent sizes");
    std::vector<std::size_t> sorted = latent_dims;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ArgumentError("sweep: duplicate latent size");
    if (sorted.front() == 0) throw ArgumentError("sweep: latent sizes must be positive");
    for (std::size_t k : {resolved_tucker_dim(), resolved_ablate_dim()}) {
      if (!std::binary_search(sorted.begin(), sorted.end(), k)) {
        throw ArgumentError("sweep: analysis latent size " + std::to_string(k) + " is not in --latent-dims");
      }
    }
    if (tucker.r_max > std::min({nt, nlat, nlon})) throw ArgumentError("sweep: r-max exceeds smallest mode size");
  }
};

struct TrainedSpace {
  std::size_t k = 0;
  TrainResult result;
  Tensor3 recon;
  double relerr = 0.0;
  double seconds = 0.0;
};

inline Json train_report(const TrainedSpace& s, const TrainConfig& cfg) {
  Json j;
  j["latent_dim"] = s.k;
  j["epochs"] = cfg.epochs;
  j["parameter_count"] = s.result.model.parameter_count();
  j["final_data_loss"] = s.result.final_data_loss;
  j["relative_l2_error"] = s.relerr;
  j["loss_history"] = s.result.loss_history;
  return j;
}

/// Full pipeline: field, observations, one model per latent size, every
/// analysis, and plots. Timings go to `timings` (manifest only) so reports
/// stay byte-reproducible.
inline void run_sweep(const SweepConfig& cfg, const fs::path& dir, OutputSet& out, Json& timings) {
  cfg.validate();
  FieldConfig fc = default_field_config(cfg.seed);
  fc.nlat = cfg.nlat;
  fc.nlon = cfg.nlon;
  fc.nt = cfg.nt;
  const Tensor3 field = generate_field(fc);
  write_field(field, out.track(dir / "field.fld"));
  const ObservationSet obs = sample_observations(field, cfg.rate, cfg.seed + 1);
  write_observations(obs, out.track(dir / "obs.fld"));

  std::vector<std::size_t> dims = cfg.latent_dims;
  std::sort(dims.begin(), dims.end());
  std::vector<TrainedSpace> trained(dims.size());
  parallel_for(dims.size(), [&](std::size_t i) {
    TrainedSpace& s = trained[i];
    s.k = dims[i];
    MmgnArch arch = cfg.arch;
    arch.latent_dim = s.k;
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    const auto t0 = std::chrono::steady_clock::now();
    s.result = train(obs, tc, arch);
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    s.recon = reconstruct_grid(s.result.model, s.result.latents, field.dims());
    s.relerr = relative_l2_error(s.recon, field);
  });

  Json summary = Json::array();
  Json train_seconds = Json::object();
  std::vector<LatentSpace> spaces;
  for (const auto& s : trained) {
    const fs::path kd = dir / ("k" + std::to_string(s.k));
    write_model(s.result.model, out.track(kd / "model.mmgn"));
    write_latents_csv(s.result.latents, out.track(kd / "latents.csv"));
    write_field(s.recon, out.track(kd / "recon.fld"));
    out.json(kd / "train.json", train_report(s, cfg.train));
    summary.push_back({{"latent_dim", s.k}, {"relative_l2_error", s.relerr}, {"final_data_loss", s.result.final_data_loss}});
    train_seconds[std::to_string(s.k)] = s.seconds;
    spaces.push_back({s.k, s.result.latents});
  }
  timings["train_seconds"] = std::move(train_seconds);

  auto timed = [&](const char* name, auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    timings[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  SpreadConfig sc = cfg.spread;
  sc.tsne.seed = cfg.seed;
  timed("embed_seconds", [&] { embed_stage(spaces, field, sc, dir / "embed", out); });
  timed("pca_seconds", [&] { pca_stage(spaces, field, dir / "pca.json", out); });
  timed("cca_seconds", [&] { cca_stage(spaces, field, cfg.cca_ridge, dir / "cca.json", out); });

  auto find = [&](std::size_t k) -> const TrainedSpace& {
    return *std::find_if(trained.begin(), trained.end(), [k](const TrainedSpace& s) { return s.k == k; });
  };
  timed("tucker_seconds", [&] { tucker_stage(field, find(cfg.resolved_tucker_dim()).recon, cfg.tucker, dir / "tucker", out); });
  timed("ablation_seconds", [&] {
    const TrainedSpace& s = find(cfg.resolved_ablate_dim());
    AblationStageConfig ac = cfg.ablation;
    ac.seed = cfg.seed;
    ablation_stage(s.result.model, s.result.latents, field, ac, dir / "ablation", out);
  });

  Json j;
  j["seed"] = cfg.seed;
  j["grid"] = {cfg.nlat, cfg.nlon};
  j["steps"] = cfg.nt;
  j["rate"] = cfg.rate;
  j["epochs"] = cfg.train.epochs;
  j["tucker_latent_dim"] = cfg.resolved_tucker_dim();
  j["ablation_latent_dim"] = cfg.resolved_ablate_dim();
  j["runs"] = std::move(summary);
  out.json(dir / "summary.json", j);

  const fs::path pd = dir / "plots";
  for (const auto& s : spaces) {
    out.text(pd / ("embed_k" + std::to_string(s.latent_dim) + ".svg"),
             render_plot("embed", dir / "embed" / ("embedding_k" + std::to_string(s.latent_dim) + ".csv")));
  }
  out.text(pd / "embed_original.svg", render_plot("embed", dir / "embed" / "embedding_original.csv"));
  out.text(pd / "spread.svg", render_plot("spread", dir / "embed" / "spread.json"));
  out.text(pd / "evr.svg", render_plot("evr", dir / "pca.json"));
  out.text(pd / "entropy.svg", render_plot("entropy", dir / "tucker" / "entropy_sweep.csv"));
  out.text(pd / "attribution.svg", render_plot("attr", dir / "ablation" / "attribution.fld"));
}

}  // namespace latentscope::pipeline
