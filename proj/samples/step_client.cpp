// Minimal bridge-side client for `dreammatcher serve`. It plays the role of
// the external diffusion loop for one step: tensors come from the synthetic
// backend, the engine answers with V^W, M' and the guidance term.
//
//   dreammatcher serve --listen 127.0.0.1:7878 &
//   step_client 127.0.0.1 7878

#include <cstdio>
#include <cstdlib>
#include <string>

#include "dreammatcher/dreammatcher.hpp"
#include "dreammatcher/server.hpp"

using namespace dm;

int main(int argc, char** argv) {
  const std::string host = argc > 1 ? argv[1] : "127.0.0.1";
  const auto port = static_cast<std::uint16_t>(argc > 2 ? std::atoi(argv[2]) : 7878);

  SyntheticBackend backend;
  const auto ref = backend.add_condition(SubjectPlacement{2, 2});
  const auto tgt = backend.add_condition(SubjectPlacement{6, 8});
  const auto sched = NoiseSchedule::scaled_linear(50);
  const std::size_t t = 30;
  const TensorGrid z_ref = gaussian_latent(backend.latent_size(), 4, 1);
  const TensorGrid z_tgt = gaussian_latent(backend.latent_size(), 4, 2);

  ExtractionSpec needs{{2, 3}, {1, 2, 3}, true, false};
  const DenoiseResponse r = backend.denoise(z_ref, t, ref, needs);
  const DenoiseResponse y = backend.denoise(z_tgt, t, tgt, needs);

  wire::StepRequest step{0, static_cast<std::uint32_t>(t), sched.alpha_bar(t), wire::kFlagAma | wire::kFlagGuidance, {}};
  for (int l : {2, 3}) {
    step.tensors.push_back({wire::Tag::feat_ref, std::uint8_t(l), 0, r.decoder_features.at(l)});
    step.tensors.push_back({wire::Tag::feat_tgt, std::uint8_t(l), 0, y.decoder_features.at(l)});
  }
  step.tensors.push_back({wire::Tag::xattn, 0, 0, y.cross_attn_maps.at(0)});
  for (int l : {1, 2, 3}) {
    step.tensors.push_back({wire::Tag::v_ref, std::uint8_t(l), 0, r.attention.at(l).v});
    step.tensors.push_back({wire::Tag::v_tgt, std::uint8_t(l), 0, y.attention.at(l).v});
  }
  step.tensors.push_back({wire::Tag::z0_ref, 0, 0, gaussian_latent(backend.latent_size(), 4, 3)});
  step.tensors.push_back({wire::Tag::z0_tgt_hat, 0, 0, predict_z0(z_tgt, y.eps, t, sched)});

  try {
    const wire::Socket sock = wire::connect_tcp(host, port);
    wire::FrameChannel channel(sock);
    channel.send(wire::encode(wire::Hello{wire::kVersion, wire::Role::bridge, "lambda_c = 0.4\nlambda_g = 50\npca_dim = 64\n"}));
    const auto welcome = wire::decode_welcome(*channel.receive());
    std::printf("session %llu\n", static_cast<unsigned long long>(welcome.session_id));

    channel.send(wire::encode(step));
    const auto reply = channel.receive();
    if (reply->type == wire::MessageType::error) {
      std::printf("engine error: %s\n", wire::decode_error(*reply).message.c_str());
      return 1;
    }
    const wire::StepResult res = wire::decode_result(*reply);
    std::printf("|M'| = %u\n", res.mprime_count);
    for (const auto& [branch, g] : res.energies) std::printf("branch %u energy %.6f\n", branch, g);
    for (const auto& e : res.tensors) {
      std::printf("tag 0x%02x layer %u branch %u %s\n", unsigned(e.tag), e.layer, e.branch, e.tensor.shape_string().c_str());
    }
    channel.send(wire::bye());
    channel.receive();
  } catch (const Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  }
}
