#pragma once

// Command-line dispatch. Exit codes: 0 success, 1 runtime failure, 2 usage.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "latentscope/pipeline.hpp"

namespace latentscope::cli {

namespace fs = std::filesystem;

class UsageError : public Error {
 public:
  using Error::Error;
};

inline std::pair<std::size_t, std::size_t> parse_grid(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw UsageError("--grid must look like NLATxNLON, got '" + s + "'");
  try {
    std::size_t used_a = 0, used_b = 0;
    const std::string a = s.substr(0, x), b = s.substr(x + 1);
    const unsigned long nlat = std::stoul(a, &used_a), nlon = std::stoul(b, &used_b);
    if (used_a != a.size() || used_b != b.size() || nlat == 0 || nlon == 0) throw std::invalid_argument(s);
    return {nlat, nlon};
  } catch (const std::logic_error&) {
    throw UsageError("--grid must look like NLATxNLON, got '" + s + "'");
  }
}

inline std::vector<std::size_t> parse_dims(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& part : report::split(s)) {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(part, &used);
      if (used != part.size() || v == 0) throw std::invalid_argument(part);
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw UsageError("--latent-dims must be a comma-separated list of positive integers, got '" + s + "'");
    }
  }
  return out;
}

/// Snapshot of every option of a subcommand, as given or defaulted.
inline Json option_snapshot(const CLI::App& sub) {
  Json j = Json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames().front();
    if (name == "help") continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      j[name] = r.size() == 1 ? Json(r.front()) : Json(r);
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

inline std::vector<LatentSpace> load_spaces(const std::vector<std::string>& paths) {
  std::vector<LatentSpace> spaces;
  for (const auto& p : paths) {
    Matrix m = read_latents_csv(p);
    spaces.push_back({static_cast<std::size_t>(m.cols()), std::move(m)});
  }
  return spaces;
}

inline void require_frames(const std::vector<LatentSpace>& spaces, const Tensor3& field) {
  for (const auto& s : spaces) {
    if (static_cast<std::size_t>(s.latents.rows()) != field.dim(0)) {
      throw DimensionError("latent file with k = " + std::to_string(s.latent_dim) + " has " +
                           std::to_string(s.latents.rows()) + " rows but the field has " +
                           std::to_string(field.dim(0)) + " time steps");
    }
  }
}

inline int dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"latentscope: MMGN field reconstruction and latent-space analysis", "latentscope"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::uint64_t seed = 0;
  std::string out_dir = ".", out_file;
  auto add_seed = [&](CLI::App* s) { s->add_option("--seed", seed, "seed for all randomness")->capture_default_str(); };
  auto add_out_dir = [&](CLI::App* s) { s->add_option("--out-dir", out_dir, "output directory")->capture_default_str(); };

  // gen
  std::string grid = "32x64";
  std::size_t steps = 48;
  double noise = 0.02;
  auto* gen = app.add_subcommand("gen", "generate a synthetic field (FLD1)");
  gen->add_option("--out", out_file, "output field file")->required();
  gen->add_option("--grid", grid, "NLATxNLON")->capture_default_str();
  gen->add_option("--steps", steps, "time steps")->capture_default_str();
  gen->add_option("--noise", noise, "noise stddev")->capture_default_str();
  add_seed(gen);

  // sample
  std::string field_path;
  double rate = 0.05;
  auto* sample = app.add_subcommand("sample", "draw sparse per-frame observations");
  sample->add_option("--field", field_path, "input field")->required()->check(CLI::ExistingFile);
  sample->add_option("--rate", rate, "sampling rate in (0, 1]")->capture_default_str();
  sample->add_option("--out", out_file, "output observation file")->required();
  add_seed(sample);

  // train
  std::string obs_path, truth_path;
  MmgnArch arch;
  TrainConfig tc;
  auto* trn = app.add_subcommand("train", "train an MMGN model and latent table");
  trn->add_option("--obs", obs_path, "observation file")->required()->check(CLI::ExistingFile);
  trn->add_option("--latent-dim", arch.latent_dim, "latent size k")->capture_default_str();
  trn->add_option("--layers", arch.layers, "Gabor layers")->capture_default_str();
  trn->add_option("--hidden", arch.hidden, "hidden width")->capture_default_str();
  trn->add_option("--epochs", tc.epochs, "full-batch epochs")->capture_default_str();
  trn->add_option("--lr", tc.learning_rate, "decoder learning rate")->capture_default_str();
  trn->add_option("--latent-lr", tc.latent_learning_rate, "latent learning rate")->capture_default_str();
  trn->add_option("--lambda", tc.lambda, "latent regularization weight")->capture_default_str();
  trn->add_option("--truth", truth_path, "optional full field for error reporting")->check(CLI::ExistingFile);
  add_seed(trn);
  add_out_dir(trn);

  // reconstruct
  std::string model_path, latents_path;
  auto* rec = app.add_subcommand("reconstruct", "evaluate a model on a full grid");
  rec->add_option("--model", model_path, "model file")->required()->check(CLI::ExistingFile);
  rec->add_option("--latents", latents_path, "latent CSV")->required()->check(CLI::ExistingFile);
  rec->add_option("--grid", grid, "NLATxNLON")->capture_default_str();
  rec->add_option("--truth", truth_path, "optional field for error reporting")->check(CLI::ExistingFile);
  rec->add_option("--out", out_file, "output field file")->required();

  // analyze-embed
  std::vector<std::string> latent_files;
  SpreadConfig sc;
  auto* emb = app.add_subcommand("analyze-embed", "t-SNE + k-means spread across latent spaces");
  emb->add_option("--latents", latent_files, "latent CSVs (two or more)")->required()->check(CLI::ExistingFile);
  emb->add_option("--field", field_path, "original field")->required()->check(CLI::ExistingFile);
  emb->add_option("--perplexity", sc.tsne.perplexity)->capture_default_str();
  emb->add_option("--iters", sc.tsne.iterations)->capture_default_str();
  emb->add_option("--clusters", sc.clusters)->capture_default_str();
  emb->add_option("--restarts", sc.restarts)->capture_default_str();
  emb->add_flag("--raw-clusters", sc.cluster_raw, "cluster raw latents instead of the embedding");
  add_seed(emb);
  add_out_dir(emb);

  // analyze-pca
  auto* pca = app.add_subcommand("analyze-pca", "explained variance ratio curves");
  pca->add_option("--latents", latent_files, "latent CSVs")->required()->check(CLI::ExistingFile);
  pca->add_option("--field", field_path, "original field")->required()->check(CLI::ExistingFile);
  add_out_dir(pca);

  // analyze-cca
  double ridge = 1e-8;
  auto* cc = app.add_subcommand("analyze-cca", "canonical correlations of each latent space against the original data");
  cc->add_option("--latents", latent_files, "latent CSVs")->required()->check(CLI::ExistingFile);
  cc->add_option("--field", field_path, "original field")->required()->check(CLI::ExistingFile);
  cc->add_option("--ridge", ridge)->capture_default_str();
  add_out_dir(cc);

  // analyze-tucker
  std::string model_out_path, entropy_norm = "l1";
  pipeline::TuckerStageConfig tk;
  auto* tuck = app.add_subcommand("analyze-tucker", "Tucker core entropy sweep and factor comparison");
  tuck->add_option("--truth", truth_path, "ground-truth field")->required()->check(CLI::ExistingFile);
  tuck->add_option("--model-output", model_out_path, "reconstructed field")->required()->check(CLI::ExistingFile);
  tuck->add_option("--r-max", tk.r_max)->capture_default_str();
  tuck->add_option("--entropy-norm", entropy_norm)->check(CLI::IsMember({"l1", "squared"}))->capture_default_str();
  tuck->add_option("--max-iters", tk.hooi.max_iters)->capture_default_str();
  tuck->add_option("--tol", tk.hooi.tol)->capture_default_str();
  add_out_dir(tuck);

  // ablate
  std::string fill = "zero";
  pipeline::AblationStageConfig ac;
  auto* abl = app.add_subcommand("ablate", "per-dimension latent ablation and attribution map");
  abl->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  abl->add_option("--latents", latents_path)->required()->check(CLI::ExistingFile);
  abl->add_option("--truth", truth_path)->required()->check(CLI::ExistingFile);
  abl->add_option("--fill", fill)->check(CLI::IsMember({"zero", "mean"}))->capture_default_str();
  abl->add_option("--permutations", ac.permutations)->capture_default_str();
  add_seed(abl);
  add_out_dir(abl);

  // sweep
  pipeline::SweepConfig sw;
  std::string latent_dims = "1,2,4,8,16,32";
  std::size_t tucker_dim = 0, ablate_dim = 0;
  auto* swp = app.add_subcommand("sweep", "end-to-end pipeline over several latent sizes");
  swp->add_option("--latent-dims", latent_dims)->capture_default_str();
  swp->add_option("--grid", grid, "NLATxNLON")->capture_default_str();
  swp->add_option("--steps", steps)->capture_default_str();
  swp->add_option("--rate", sw.rate)->capture_default_str();
  swp->add_option("--epochs", sw.train.epochs)->capture_default_str();
  swp->add_option("--layers", sw.arch.layers)->capture_default_str();
  swp->add_option("--hidden", sw.arch.hidden)->capture_default_str();
  swp->add_option("--perplexity", sw.spread.tsne.perplexity)->capture_default_str();
  swp->add_option("--clusters", sw.spread.clusters)->capture_default_str();
  swp->add_option("--r-max", sw.tucker.r_max)->capture_default_str();
  swp->add_option("--tucker-dim", tucker_dim, "latent size for the Tucker comparison (default: largest)");
  swp->add_option("--ablate-dim", ablate_dim, "latent size for ablation (default: 16 if swept, else largest)");
  add_seed(swp);
  add_out_dir(swp);

  // plot
  std::string kind, in_path;
  auto* plt = app.add_subcommand("plot", "render a report file as SVG");
  plt->add_option("--kind", kind)->required()->check(CLI::IsMember(pipeline::plot_kinds()));
  plt->add_option("--in", in_path, "report file")->required()->check(CLI::ExistingFile);
  plt->add_option("--out", out_file, "output SVG")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    err << app.help();
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  RunManifest manifest;
  manifest.command = sub->get_name();
  manifest.argv = args;
  manifest.config = option_snapshot(*sub);
  OutputSet outputs;
  const fs::path dir(out_dir);
  fs::path manifest_path = dir / (manifest.command + ".manifest.json");

  try {
    if (sub == gen) {
      const auto [nlat, nlon] = parse_grid(grid);
      FieldConfig fc = default_field_config(seed);
      fc.nlat = nlat;
      fc.nlon = nlon;
      fc.nt = steps;
      fc.noise_stddev = noise;
      write_field(generate_field(fc), outputs.track(out_file));
      manifest_path = out_file + ".manifest.json";
    } else if (sub == sample) {
      manifest.inputs = {field_path};
      write_observations(sample_observations(read_field(field_path), rate, seed), outputs.track(out_file));
      manifest_path = out_file + ".manifest.json";
    } else if (sub == trn) {
      manifest.inputs = {obs_path};
      const ObservationSet obs = read_observations(obs_path);
      tc.seed = seed;
      pipeline::TrainedSpace s;
      s.k = arch.latent_dim;
      const auto t0 = std::chrono::steady_clock::now();
      s.result = train(obs, tc, arch);
      s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      manifest.timings["train_seconds"] = s.seconds;
      Json rep;
      if (!truth_path.empty()) {
        manifest.inputs.push_back(truth_path);
        const Tensor3 truth = read_field(truth_path);
        s.relerr = relative_l2_error(reconstruct_grid(s.result.model, s.result.latents, truth.dims()), truth);
        rep = pipeline::train_report(s, tc);
      } else {
        rep = pipeline::train_report(s, tc);
        rep.erase("relative_l2_error");
      }
      write_model(s.result.model, outputs.track(dir / "model.mmgn"));
      write_latents_csv(s.result.latents, outputs.track(dir / "latents.csv"));
      outputs.json(dir / "train.json", rep);
      out << "k=" << s.k << " final data loss " << s.result.final_data_loss;
      if (rep.contains("relative_l2_error")) out << " relative L2 error " << s.relerr;
      out << "\n";
    } else if (sub == rec) {
      manifest.inputs = {model_path, latents_path};
      const auto [nlat, nlon] = parse_grid(grid);
      const MmgnModel model = read_model(model_path);
      const Matrix latents = read_latents_csv(latents_path);
      const Tensor3 recon = reconstruct_grid(model, latents, {static_cast<std::size_t>(latents.rows()), nlat, nlon});
      write_field(recon, outputs.track(out_file));
      if (!truth_path.empty()) {
        manifest.inputs.push_back(truth_path);
        out << "relative L2 error " << relative_l2_error(recon, read_field(truth_path)) << "\n";
      }
      manifest_path = out_file + ".manifest.json";
    } else if (sub == emb) {
      for (const auto& p : latent_files) manifest.inputs.emplace_back(p);
      manifest.inputs.emplace_back(field_path);
      const Tensor3 field = read_field(field_path);
      const auto spaces = load_spaces(latent_files);
      require_frames(spaces, field);
      sc.tsne.seed = seed;
      pipeline::embed_stage(spaces, field, sc, dir, outputs);
    } else if (sub == pca || sub == cc) {
      for (const auto& p : latent_files) manifest.inputs.emplace_back(p);
      manifest.inputs.emplace_back(field_path);
      const Tensor3 field = read_field(field_path);
      const auto spaces = load_spaces(latent_files);
      require_frames(spaces, field);
      if (sub == pca) {
        pipeline::pca_stage(spaces, field, dir / "pca.json", outputs);
      } else {
        pipeline::cca_stage(spaces, field, ridge, dir / "cca.json", outputs);
      }
    } else if (sub == tuck) {
      manifest.inputs = {truth_path, model_out_path};
      tk.norm = entropy_norm == "l1" ? EntropyNorm::L1 : EntropyNorm::Squared;
      pipeline::tucker_stage(read_field(truth_path), read_field(model_out_path), tk, dir, outputs);
    } else if (sub == abl) {
      manifest.inputs = {model_path, latents_path, truth_path};
      ac.fill = fill == "zero" ? AblationFill::Zero : AblationFill::Mean;
      ac.seed = seed;
      pipeline::ablation_stage(read_model(model_path), read_latents_csv(latents_path), read_field(truth_path), ac, dir,
                               outputs);
    } else if (sub == swp) {
      const auto [nlat, nlon] = parse_grid(grid);
      sw.nlat = nlat;
      sw.nlon = nlon;
      sw.nt = steps;
      sw.seed = seed;
      sw.latent_dims = parse_dims(latent_dims);
      if (tucker_dim) sw.tucker_dim = tucker_dim;
      if (ablate_dim) sw.ablate_dim = ablate_dim;
      try {
        sw.validate();
      } catch (const ArgumentError& e) {
        throw UsageError(e.what());
      }
      pipeline::run_sweep(sw, dir, outputs, manifest.timings);
    } else if (sub == plt) {
      manifest.inputs = {in_path};
      const std::string svg = pipeline::render_plot(kind, in_path);
      outputs.text(out_file, svg);
      manifest_path = out_file + ".manifest.json";
    }
    outputs.json(manifest_path, manifest.to_json(outputs.files()));
    outputs.commit();
    return 0;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n" << sub->help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

inline int dispatch(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args);
}

}  // namespace latentscope::cli
