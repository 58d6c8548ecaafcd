// dreammatcher: run sessions, match descriptors, warp grids, render
// diagnostics and serve the step protocol.

#include <csignal>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "dreammatcher/commands.hpp"
#include "dreammatcher/server.hpp"

namespace {

int serve(const std::string& listen, std::size_t max_sessions) {
  dm::wire::ServerOptions opt;
  const auto colon = listen.rfind(':');
  try {
    dm::require(colon != std::string::npos, dm::ErrorKind::config, "--listen expects HOST:PORT");
    opt.host = listen.substr(0, colon);
    const int port = std::stoi(listen.substr(colon + 1));
    dm::require(port >= 0 && port <= 65535, dm::ErrorKind::config, "port out of range");
    opt.port = static_cast<std::uint16_t>(port);
    opt.max_sessions = max_sessions;
  } catch (const dm::Error& e) {
    return dm::cli::report(e, dm::cli::kExitConfig, std::cerr);
  } catch (const std::exception&) {
    std::cerr << "error: bad --listen value `" << listen << "`\n";
    return dm::cli::kExitConfig;
  }

  // Block the stop signals before any thread starts so that only sigwait
  // below sees them.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  try {
    dm::wire::Server server(opt);
    std::cout << "listening on " << opt.host << ":" << server.port() << std::endl;
    std::jthread acceptor([&] { server.run(); });
    int sig = 0;
    sigwait(&stop_signals, &sig);
    server.stop();
  } catch (const dm::Error& e) {
    return dm::cli::report(e, dm::cli::kExitFailure, std::cerr);
  }
  return dm::cli::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DreamMatcher engine: semantic appearance matching for diffusion sampling"};
  app.footer("Environment: DM_WORKERS sets the worker thread count (default: hardware threads).");
  app.require_subcommand(1);

  dm::cli::RunOptions run;
  std::uint64_t seed = 0;
  auto* run_cmd = app.add_subcommand("run", "run a dual-branch session with the synthetic backend");
  run_cmd->add_option("--config", run.config, "session config file")->required();
  run_cmd->add_option("--out", run.out, "output directory")->required();
  auto* seed_opt = run_cmd->add_option("--seed", seed, "override the target noise seed");
  run_cmd->add_flag("--baseline", run.baseline, "disable appearance matching and guidance");
  run_cmd->add_flag("--diagnostics", run.diagnostics, "write per-step flows, masks and PCA previews");

  dm::cli::MatchOptions match;
  std::string mask_path;
  auto* match_cmd = app.add_subcommand("match", "match two descriptor frames");
  match_cmd->add_option("--ref", match.ref, "reference descriptors (H x W x D frame)")->required();
  match_cmd->add_option("--tgt", match.tgt, "target descriptors (H x W x D frame)")->required();
  auto* mask_opt = match_cmd->add_option("--mask", mask_path, "target foreground mask (H x W x 1 frame)");
  match_cmd->add_option("--lambda-c", match.lambda_c, "cycle-consistency threshold scale")->capture_default_str();
  match_cmd->add_option("--out", match.out, "output directory")->required();

  std::string warp_grid, warp_flow, warp_out;
  auto* warp_cmd = app.add_subcommand("warp", "backward-warp a grid with a flow frame");
  warp_cmd->add_option("--grid", warp_grid, "grid frame")->required();
  warp_cmd->add_option("--flow", warp_flow, "flow frame (H x W x 2)")->required();
  warp_cmd->add_option("--out", warp_out, "output frame")->required();

  std::string inspect_dir, inspect_out;
  auto* inspect_cmd = app.add_subcommand("inspect", "render the frames of a diagnostics directory");
  inspect_cmd->add_option("dir", inspect_dir, "directory to scan")->required();
  inspect_cmd->add_option("--out", inspect_out, "render directory (default: <dir>/render)");

  std::string listen = "127.0.0.1:7878";
  std::size_t max_sessions = 0;
  auto* serve_cmd = app.add_subcommand("serve", "serve the step protocol over TCP");
  serve_cmd->add_option("--listen", listen, "HOST:PORT (port 0 picks a free one)")->capture_default_str();
  serve_cmd->add_option("--max-sessions", max_sessions, "concurrent session limit (0: none)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : dm::cli::kExitConfig;
  }

  if (*run_cmd) {
    if (*seed_opt) run.seed = seed;
    return dm::cli::cmd_run(run);
  }
  if (*match_cmd) {
    if (*mask_opt) match.mask = mask_path;
    return dm::cli::cmd_match(match);
  }
  if (*warp_cmd) return dm::cli::cmd_warp(warp_grid, warp_flow, warp_out);
  if (*inspect_cmd) {
    const std::filesystem::path dir = inspect_dir;
    return dm::cli::cmd_inspect(dir, inspect_out.empty() ? dir / "render" : std::filesystem::path(inspect_out));
  }
  if (*serve_cmd) return serve(listen, max_sessions);
  return dm::cli::kExitConfig;
}
