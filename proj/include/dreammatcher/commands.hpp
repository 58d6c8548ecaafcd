#pragma once

// Implementations behind the `dreammatcher` command-line tool. Each command
// returns the process exit code: 0 success, 2 configuration or usage error,
// 3 backend failure, 1 anything else (I/O).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dreammatcher/config.hpp"
#include "dreammatcher/frame.hpp"
#include "dreammatcher/image_io.hpp"
#include "dreammatcher/sampler.hpp"
#include "dreammatcher/synthetic_backend.hpp"

namespace dm::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitBackend = 3;

inline int report(const Error& e, int code, std::ostream& err) {
  err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
  return code;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::io, "cannot open for writing: " + path.string());
  f << text;
}

inline std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

struct RunOptions {
  fs::path config;
  fs::path out;
  std::optional<std::uint64_t> seed;
  bool baseline = false;
  bool diagnostics = false;
};

namespace detail {

inline void write_step_diagnostics(const fs::path& dir, const StepMatch& m) {
  fs::create_directories(dir);
  save_tensor(dir / "flow.dmt", m.flow_xy.grid());
  save_tensor(dir / "mask_m.dmt", m.m.grid());
  save_tensor(dir / "mask_u.dmt", m.u.grid());
  save_tensor(dir / "mask_mprime.dmt", m.m_prime.grid());
  write_pnm(dir / "mask_m.pgm", render_mask(m.m));
  write_pnm(dir / "mask_u.pgm", render_mask(m.u));
  write_pnm(dir / "mask_mprime.pgm", render_mask(m.m_prime));
  write_pnm(dir / "pca_ref.ppm", render_pca_rgb(m.descriptors.psi_ref));
  write_pnm(dir / "pca_tgt.ppm", render_pca_rgb(m.descriptors.psi_tgt));
}

inline bool is_inside(const fs::path& path, const fs::path& root) {
  const fs::path rel = fs::absolute(path).lexically_normal().lexically_relative(fs::absolute(root).lexically_normal());
  return !rel.empty() && *rel.begin() != "..";
}

}  // namespace detail

inline int cmd_run(const RunOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  RunConfig cfg;
  std::optional<SyntheticBackend> backend;
  ConditionHandle ref = 0, tgt = 0;
  TensorGrid z0_ref;
  try {
    cfg = load_config(opt.config);
    if (opt.seed) cfg.session.seed = *opt.seed;
    if (opt.diagnostics) cfg.session.diagnostics = true;
    if (opt.baseline) cfg.session = cfg.session.baseline();
    backend.emplace(cfg.backend);
    ref = backend->add_condition(cfg.ref_subject);
    tgt = backend->add_condition(cfg.tgt_subject);
    cfg.session.validate(*backend);
    (void)cfg.schedule();
    if (cfg.reference_latent) {
      fs::path p = *cfg.reference_latent;
      if (p.is_relative()) p = opt.config.parent_path() / p;
      z0_ref = load_tensor(p);
      require(z0_ref.height() == backend->latent_size().height && z0_ref.width() == backend->latent_size().width &&
                  z0_ref.channels() == backend->latent_channels(),
              ErrorKind::config, "reference_latent " + p.string() + " has shape " + z0_ref.shape_string());
    } else {
      z0_ref = gaussian_latent(backend->latent_size(), backend->latent_channels(), cfg.reference_seed);
    }
  } catch (const Error& e) {
    return report(e, kExitConfig, err);
  }

  try {
    fs::create_directories(opt.out);
    std::ostringstream energy;
    const bool diag = cfg.session.diagnostics;
    const StepObserver observer = [&](const StepDetail& d) {
      const StepRecord& r = d.record;
      energy << "step=" << r.index << " t=" << r.timestep << " ama=" << r.ama_active << " guidance=" << r.guidance_active
             << " g=" << format_double(r.energy) << " mprime=" << r.mprime_count
             << " grad_norm=" << format_double(r.grad_norm) << "\n";
      if (diag && d.match != nullptr) {
        detail::write_step_diagnostics(opt.out / "steps" / std::to_string(r.timestep), *d.match);
      }
    };
    const SessionResult result = run_dual_branch(*backend, cfg.session, cfg.schedule(), z0_ref, ref, tgt, observer);
    save_tensor(opt.out / "final_latent.dmt", result.target_latent);
    save_tensor(opt.out / "reference_latent.dmt", result.reference_latent);
    save_tensor(opt.out / "z0_ref.dmt", z0_ref);
    write_text(opt.out / "energy.log", energy.str());

    double recon = 0.0;
    std::size_t gated = 0;
    for (std::size_t i = 0; i < z0_ref.size(); ++i) {
      recon = std::max(recon, std::abs(result.reference_latent.data()[i] - z0_ref.data()[i]));
    }
    for (const auto& s : result.steps) gated += s.ama_active;
    std::ostringstream summary;
    summary << "steps=" << result.steps.size() << "\n"
            << "gated_steps=" << gated << "\n"
            << "baseline=" << opt.baseline << "\n"
            << "seed=" << cfg.session.seed << "\n"
            << "reference_reconstruction_max_abs=" << format_double(recon) << "\n";
    write_text(opt.out / "summary.txt", summary.str());
    out << summary.str();
  } catch (const Error& e) {
    return report(e, e.kind() == ErrorKind::io ? kExitFailure : kExitBackend, err);
  }
  return kExitOk;
}

struct MatchOptions {
  fs::path ref;
  fs::path tgt;
  std::optional<fs::path> mask;
  double lambda_c = 0.4;
  fs::path out;
};

struct MatchSummary {
  double mean_best_cost = 0.0;
  double confident_ratio = 0.0;  // |U inside mask| / |mask|
  double mode_dx = 0.0;
  double mode_dy = 0.0;
  std::size_t mode_count = 0;
};

/// Flow pair, confidence and summary statistics for two descriptor fields.
inline MatchSummary match_descriptors(const TensorGrid& ref, const TensorGrid& tgt, const MaskGrid& mask,
                                      double lambda_c, FlowField* f_xy = nullptr, FlowField* f_yx = nullptr,
                                      MaskGrid* u_out = nullptr) {
  const CostVolume c = cost_volume(ref, tgt);
  const FlowField xy = argmax_flow(c, FlowDirection::x_to_y);
  const FlowField yx = argmax_flow(c, FlowDirection::y_to_x);
  const MaskGrid u = cycle_confidence(xy, yx, mask, {lambda_c, 0.5});
  MatchSummary s;
  s.mean_best_cost = mean_best_cost(c);
  double inside = 0.0;
  std::map<std::pair<double, double>, std::size_t> votes;
  for (std::size_t y = 0; y < mask.height(); ++y) {
    for (std::size_t x = 0; x < mask.width(); ++x) {
      if (mask(y, x) == 0.0) continue;
      inside += u(y, x);
      ++votes[{xy.dx(y, x), xy.dy(y, x)}];
    }
  }
  s.confident_ratio = mask.sum() > 0.0 ? inside / mask.sum() : 0.0;
  for (const auto& [d, n] : votes) {
    if (n > s.mode_count) {
      s.mode_count = n;
      s.mode_dx = d.first;
      s.mode_dy = d.second;
    }
  }
  if (f_xy) *f_xy = xy;
  if (f_yx) *f_yx = yx;
  if (u_out) *u_out = u;
  return s;
}

inline int cmd_match(const MatchOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  TensorGrid ref, tgt;
  std::optional<MaskGrid> mask;
  try {
    require(std::isfinite(opt.lambda_c) && opt.lambda_c >= 0.0, ErrorKind::config, "lambda_c must be >= 0");
    ref = load_tensor(opt.ref);
    tgt = load_tensor(opt.tgt);
    require(ref.same_shape(tgt), ErrorKind::config,
            "descriptor shapes differ: " + ref.shape_string() + " vs " + tgt.shape_string());
    if (opt.mask) {
      mask = MaskGrid(load_tensor(*opt.mask));
      require(mask->height() == tgt.height() && mask->width() == tgt.width(), ErrorKind::config,
              "mask extent differs from the descriptors");
    }
  } catch (const Error& e) {
    return report(e, kExitConfig, err);
  }
  try {
    if (!mask) mask = MaskGrid(tgt.height(), tgt.width(), 1.0);
    FlowField xy, yx;
    MaskGrid u;
    const MatchSummary s = match_descriptors(ref, tgt, *mask, opt.lambda_c, &xy, &yx, &u);
    fs::create_directories(opt.out);
    save_tensor(opt.out / "flow_xy.dmt", xy.grid());
    save_tensor(opt.out / "flow_yx.dmt", yx.grid());
    save_tensor(opt.out / "confidence.dmt", u.grid());
    std::ostringstream summary;
    summary << "mean_best_cost=" << format_double(s.mean_best_cost) << "\n"
            << "confident_ratio=" << format_double(s.confident_ratio) << "\n"
            << "flow_mode=" << s.mode_dx << "," << s.mode_dy << "\n"
            << "flow_mode_pixels=" << s.mode_count << "\n";
    write_text(opt.out / "summary.txt", summary.str());
    out << summary.str();
  } catch (const Error& e) {
    return report(e, kExitFailure, err);
  }
  return kExitOk;
}

inline int cmd_warp(const fs::path& grid_path, const fs::path& flow_path, const fs::path& out_path,
                    std::ostream& err = std::cerr) {
  TensorGrid grid;
  FlowField flow;
  try {
    grid = load_tensor(grid_path);
    const TensorGrid f = load_tensor(flow_path);
    require(f.channels() == 2, ErrorKind::config, "flow frame must have 2 channels");
    flow = FlowField(f);
    if (flow.height() != grid.height() || flow.width() != grid.width()) {
      require(flow.height() * grid.width() == flow.width() * grid.height(), ErrorKind::config,
              "flow aspect ratio differs from the grid");
      flow = resize_flow(flow, grid.height(), grid.width());
    }
  } catch (const Error& e) {
    return report(e, kExitConfig, err);
  }
  try {
    save_tensor(out_path, warp(grid, flow));
  } catch (const Error& e) {
    return report(e, kExitFailure, err);
  }
  return kExitOk;
}

/// Renders every .dmt frame below `dir` into `out` (mirroring the tree):
/// one channel -> PGM, two (a flow) -> magnitude PGM plus a warped preview of
/// the nearest z0_ref.dmt, three or more -> PCA color PPM.
inline int cmd_inspect(const fs::path& dir, const fs::path& out, std::ostream& log = std::cout,
                       std::ostream& err = std::cerr) {
  std::vector<fs::path> frames;
  try {
    require(fs::is_directory(dir), ErrorKind::config, "not a directory: " + dir.string());
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".dmt") continue;
      if (detail::is_inside(entry.path(), out)) continue;  // earlier renders
      frames.push_back(entry.path());
    }
    require(!frames.empty(), ErrorKind::config, "no .dmt frames under " + dir.string());
  } catch (const Error& e) {
    return report(e, kExitConfig, err);
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  std::sort(frames.begin(), frames.end());

  auto find_reference = [&](fs::path p) -> std::optional<fs::path> {
    for (p = p.parent_path();; p = p.parent_path()) {
      if (fs::exists(p / "z0_ref.dmt")) return p / "z0_ref.dmt";
      if (p == dir || !p.has_parent_path() || p == p.parent_path()) return std::nullopt;
    }
  };

  try {
    for (const auto& path : frames) {
      const TensorGrid g = load_tensor(path);
      fs::path target = out / fs::relative(path, dir);
      fs::create_directories(target.parent_path());
      if (g.channels() == 1) {
        const bool in_unit = std::all_of(g.data().begin(), g.data().end(), [](double v) { return v >= 0 && v <= 1; });
        target.replace_extension(".pgm");
        write_pnm(target, render_gray(in_unit ? g : minmax_normalize(g)));
      } else if (g.channels() == 2) {
        const FlowField flow(g);
        fs::path mag = target;
        mag.replace_extension(".pgm");
        write_pnm(mag, render_flow_magnitude(flow));
        if (const auto ref = find_reference(path)) {
          const TensorGrid z0 = load_tensor(*ref);
          if (flow.height() * z0.width() == flow.width() * z0.height()) {
            fs::path warped = target;
            warped.replace_filename(target.stem().string() + "_warped.ppm");
            write_pnm(warped, render_pca_rgb(align_reference_z0(z0, flow)));
          }
        }
        target = mag;
      } else {
        target.replace_extension(".ppm");
        write_pnm(target, render_pca_rgb(g));
      }
      log << path.string() << " -> " << target.string() << "\n";
    }
  } catch (const Error& e) {
    return report(e, kExitFailure, err);
  }
  return kExitOk;
}

}  // namespace dm::cli
