#pragma once

// Step protocol between an external diffusion loop (the bridge) and the
// engine. A frame is `u32 payload length | u8 type | payload`, all integers
// little-endian, tensors as DMT1 frames.
//
//   HELLO   0x01  "DMWP" | u16 version | u8 role | u32 n | n bytes config text
//   WELCOME 0x02  u64 session id | u16 version
//   STEP    0x10  u32 step | u32 timestep | f64 alpha_bar | u8 flags | u16 n | n entries
//   RESULT  0x11  u32 step | u32 |M'| | u8 m | m x (u8 branch | f64 energy) | u16 n | n entries
//   BYE     0x20  (empty)
//   ERROR   0x7F  u8 code | u16 n | n bytes message
//
// An entry is `u8 tag | u8 layer | u8 branch | DMT1 frame`. Branch 0 is the
// conditional target branch, 1 the unconditional one.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dreammatcher/config.hpp"
#include "dreammatcher/engine.hpp"
#include "dreammatcher/frame.hpp"

namespace dm::wire {

inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::array<std::uint8_t, 4> kMagic = {'D', 'M', 'W', 'P'};
inline constexpr std::uint32_t kMaxPayload = 1u << 30;

enum class MessageType : std::uint8_t {
  hello = 0x01,
  welcome = 0x02,
  step = 0x10,
  result = 0x11,
  bye = 0x20,
  error = 0x7F,
};

enum class ErrorCode : std::uint8_t {
  malformed = 0x01,
  shape = 0x02,
  version = 0x03,
  session_state = 0x04,
};

enum class Tag : std::uint8_t {
  // requests
  feat_ref = 0x01,
  feat_tgt = 0x02,
  xattn = 0x03,
  v_ref = 0x04,
  v_tgt = 0x05,
  z0_ref = 0x06,
  z0_tgt_hat = 0x07,
  // responses
  values_w = 0x10,
  mprime = 0x11,
  guidance = 0x12,  // lambda_g * sqrt(1 - alpha_bar) * grad; the bridge subtracts it from eps
  flow = 0x13,
};

enum class Role : std::uint8_t { bridge = 1 };

inline constexpr std::uint8_t kFlagAma = 0x01;
inline constexpr std::uint8_t kFlagGuidance = 0x02;

class WireError : public Error {
 public:
  WireError(ErrorCode code, const std::string& what) : Error(ErrorKind::protocol, what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void wire_fail(ErrorCode code, const std::string& message) { throw WireError(code, message); }

struct Frame {
  MessageType type = MessageType::bye;
  std::vector<std::uint8_t> payload;

  friend bool operator==(const Frame&, const Frame&) = default;
};

inline std::vector<std::uint8_t> encode_frame(const Frame& f) {
  require(f.payload.size() <= kMaxPayload, ErrorKind::protocol, "frame payload too large");
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(f.payload.size()));
  w.u8(static_cast<std::uint8_t>(f.type));
  w.raw(f.payload);
  return w.take();
}

/// Reassembles frames from an arbitrary chunking of the byte stream.
class FrameReader {
 public:
  void feed(std::span<const std::uint8_t> bytes) { buffer_.insert(buffer_.end(), bytes.begin(), bytes.end()); }

  std::optional<Frame> next() {
    if (buffer_.size() - pos_ < 5) return std::nullopt;
    ByteReader r(std::span<const std::uint8_t>(buffer_).subspan(pos_));
    const std::uint32_t len = r.u32();
    if (len > kMaxPayload) wire_fail(ErrorCode::malformed, "frame length exceeds limit");
    if (buffer_.size() - pos_ < 5 + static_cast<std::size_t>(len)) return std::nullopt;
    Frame f;
    f.type = static_cast<MessageType>(r.u8());
    const auto body = r.raw(len);
    f.payload.assign(body.begin(), body.end());
    pos_ += 5 + len;
    if (pos_ == buffer_.size()) {
      buffer_.clear();
      pos_ = 0;
    }
    return f;
  }

  std::size_t pending() const noexcept { return buffer_.size() - pos_; }

 private:
  std::vector<std::uint8_t> buffer_;
  std::size_t pos_ = 0;
};

struct Hello {
  std::uint16_t version = kVersion;
  Role role = Role::bridge;
  std::string config;
};

struct Welcome {
  std::uint64_t session_id = 0;
  std::uint16_t version = kVersion;
};

struct TensorEntry {
  Tag tag = Tag::feat_ref;
  std::uint8_t layer = 0;
  std::uint8_t branch = 0;
  TensorGrid tensor;
};

struct StepRequest {
  std::uint32_t step_index = 0;
  std::uint32_t timestep = 0;
  double alpha_bar = 1.0;
  std::uint8_t flags = 0;
  std::vector<TensorEntry> tensors;
};

struct StepResult {
  std::uint32_t step_index = 0;
  std::uint32_t mprime_count = 0;
  std::vector<std::pair<std::uint8_t, double>> energies;  // (branch, g)
  std::vector<TensorEntry> tensors;
};

struct ErrorMessage {
  ErrorCode code = ErrorCode::malformed;
  std::string message;
};

namespace detail {

inline void write_entries(ByteWriter& w, const std::vector<TensorEntry>& entries) {
  require(entries.size() <= 0xFFFF, ErrorKind::protocol, "too many tensor entries");
  w.u16(static_cast<std::uint16_t>(entries.size()));
  for (const auto& e : entries) {
    w.u8(static_cast<std::uint8_t>(e.tag));
    w.u8(e.layer);
    w.u8(e.branch);
    write_tensor_frame(w, e.tensor);
  }
}

inline std::vector<TensorEntry> read_entries(ByteReader& r) {
  const std::uint16_t n = r.u16();
  std::vector<TensorEntry> out;
  out.reserve(n);
  for (std::uint16_t i = 0; i < n; ++i) {
    TensorEntry e;
    e.tag = static_cast<Tag>(r.u8());
    e.layer = r.u8();
    e.branch = r.u8();
    e.tensor = read_tensor_frame(r);
    out.push_back(std::move(e));
  }
  return out;
}

inline void expect_type(const Frame& f, MessageType type) {
  if (f.type != type) wire_fail(ErrorCode::malformed, "unexpected message type");
}

// Runs a payload decoder, turning truncation and bad tensor frames into
// malformed-frame errors.
template <class F>
auto decode_payload(const Frame& f, F&& body) {
  try {
    ByteReader r(f.payload);
    auto out = body(r);
    if (r.remaining() != 0) wire_fail(ErrorCode::malformed, "trailing bytes in frame");
    return out;
  } catch (const WireError&) {
    throw;
  } catch (const Error& e) {
    wire_fail(ErrorCode::malformed, e.what());
  }
}

}  // namespace detail

inline Frame encode(const Hello& m) {
  ByteWriter w;
  w.raw(kMagic);
  w.u16(m.version);
  w.u8(static_cast<std::uint8_t>(m.role));
  w.u32(static_cast<std::uint32_t>(m.config.size()));
  w.str(m.config);
  return {MessageType::hello, w.take()};
}

inline Frame encode(const Welcome& m) {
  ByteWriter w;
  w.u64(m.session_id);
  w.u16(m.version);
  return {MessageType::welcome, w.take()};
}

inline Frame encode(const StepRequest& m) {
  ByteWriter w;
  w.u32(m.step_index);
  w.u32(m.timestep);
  w.f64(m.alpha_bar);
  w.u8(m.flags);
  detail::write_entries(w, m.tensors);
  return {MessageType::step, w.take()};
}

inline Frame encode(const StepResult& m) {
  ByteWriter w;
  w.u32(m.step_index);
  w.u32(m.mprime_count);
  w.u8(static_cast<std::uint8_t>(m.energies.size()));
  for (const auto& [branch, g] : m.energies) {
    w.u8(branch);
    w.f64(g);
  }
  detail::write_entries(w, m.tensors);
  return {MessageType::result, w.take()};
}

inline Frame encode(const ErrorMessage& m) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(m.code));
  const std::string text = m.message.substr(0, 0xFFFF);
  w.u16(static_cast<std::uint16_t>(text.size()));
  w.str(text);
  return {MessageType::error, w.take()};
}

inline Frame bye() { return {MessageType::bye, {}}; }

inline Hello decode_hello(const Frame& f) {
  detail::expect_type(f, MessageType::hello);
  return detail::decode_payload(f, [](ByteReader& r) {
    const auto magic = r.raw(4);
    if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) wire_fail(ErrorCode::malformed, "bad handshake magic");
    Hello m;
    m.version = r.u16();
    m.role = static_cast<Role>(r.u8());
    m.config = r.str(r.u32());
    return m;
  });
}

inline Welcome decode_welcome(const Frame& f) {
  detail::expect_type(f, MessageType::welcome);
  return detail::decode_payload(f, [](ByteReader& r) {
    Welcome m;
    m.session_id = r.u64();
    m.version = r.u16();
    return m;
  });
}

inline StepRequest decode_step(const Frame& f) {
  detail::expect_type(f, MessageType::step);
  return detail::decode_payload(f, [](ByteReader& r) {
    StepRequest m;
    m.step_index = r.u32();
    m.timestep = r.u32();
    m.alpha_bar = r.f64();
    m.flags = r.u8();
    m.tensors = detail::read_entries(r);
    return m;
  });
}

inline StepResult decode_result(const Frame& f) {
  detail::expect_type(f, MessageType::result);
  return detail::decode_payload(f, [](ByteReader& r) {
    StepResult m;
    m.step_index = r.u32();
    m.mprime_count = r.u32();
    const std::uint8_t n = r.u8();
    for (std::uint8_t i = 0; i < n; ++i) {
      const std::uint8_t branch = r.u8();
      m.energies.emplace_back(branch, r.f64());
    }
    m.tensors = detail::read_entries(r);
    return m;
  });
}

inline ErrorMessage decode_error(const Frame& f) {
  detail::expect_type(f, MessageType::error);
  return detail::decode_payload(f, [](ByteReader& r) {
    ErrorMessage m;
    m.code = static_cast<ErrorCode>(r.u8());
    m.message = r.str(r.u16());
    return m;
  });
}

/// Engine side of one STEP: matching, V^W per requested layer and branch,
/// and the guidance term per branch.
inline StepResult process_step(const StepRequest& req, const SessionConfig& cfg) {
  if (!(req.alpha_bar > 0.0 && req.alpha_bar <= 1.0)) wire_fail(ErrorCode::malformed, "alpha_bar outside (0, 1]");
  StepResult res;
  res.step_index = req.step_index;
  const bool ama = (req.flags & kFlagAma) != 0;
  const bool guide = (req.flags & kFlagGuidance) != 0;
  if (!ama && !guide) return res;

  std::map<int, TensorGrid> feat_ref, feat_tgt, v_ref;
  std::vector<TensorGrid> xattn;
  std::vector<const TensorEntry*> v_tgt, z0_hat;
  const TensorGrid* z0_ref = nullptr;
  for (const auto& e : req.tensors) {
    switch (e.tag) {
      case Tag::feat_ref: feat_ref[e.layer] = e.tensor; break;
      case Tag::feat_tgt: feat_tgt[e.layer] = e.tensor; break;
      case Tag::xattn: xattn.push_back(e.tensor); break;
      case Tag::v_ref: v_ref[e.layer] = e.tensor; break;
      case Tag::v_tgt: v_tgt.push_back(&e); break;
      case Tag::z0_ref: z0_ref = &e.tensor; break;
      case Tag::z0_tgt_hat: z0_hat.push_back(&e); break;
      default: wire_fail(ErrorCode::malformed, "unknown request tag " + std::to_string(static_cast<int>(e.tag)));
    }
  }
  if (feat_ref.empty() || xattn.empty()) wire_fail(ErrorCode::shape, "step needs reference features and cross-attention");
  std::vector<TensorGrid> fr, ft;
  for (const auto& [layer, g] : feat_ref) {
    const auto it = feat_tgt.find(layer);
    if (it == feat_tgt.end()) wire_fail(ErrorCode::shape, "no target features for layer " + std::to_string(layer));
    fr.push_back(g);
    ft.push_back(it->second);
  }
  if (feat_tgt.size() != feat_ref.size()) wire_fail(ErrorCode::shape, "feature layers differ between branches");
  for (const auto& m : xattn) {
    if (m.channels() != 1) wire_fail(ErrorCode::shape, "cross-attention maps must have one channel");
  }

  const StepMatch match = compute_step_match(fr, ft, xattn, cfg.matching());
  res.mprime_count = static_cast<std::uint32_t>(match.m_prime.sum());
  res.tensors.push_back({Tag::mprime, 0, 0, match.m_prime.grid()});
  res.tensors.push_back({Tag::flow, 0, 0, match.flow_xy.grid()});

  if (ama) {
    for (const TensorEntry* e : v_tgt) {
      const auto it = v_ref.find(e->layer);
      if (it == v_ref.end()) wire_fail(ErrorCode::shape, "no reference values for layer " + std::to_string(e->layer));
      res.tensors.push_back({Tag::values_w, e->layer, e->branch, layer_appearance_values(match, it->second, e->tensor)});
    }
  }
  if (guide) {
    if (z0_ref == nullptr) wire_fail(ErrorCode::shape, "guidance needs the reference clean latent");
    const NoiseSchedule sched({1.0, req.alpha_bar});
    const double weight = cfg.lambda_g * sched.sigma(1);
    for (const TensorEntry* e : z0_hat) {
      GuidanceTerm term = compute_guidance(match, *z0_ref, e->tensor, 1, sched);
      for (auto& v : term.grad.data()) v *= weight;
      res.energies.emplace_back(e->branch, term.energy);
      res.tensors.push_back({Tag::guidance, 0, e->branch, std::move(term.grad)});
    }
  }
  return res;
}

/// Per-connection state machine, independent of the transport.
class ProtocolSession {
 public:
  explicit ProtocolSession(std::uint64_t id) : id_(id) {}

  /// Responses to one client frame. After BYE or any error the session is
  /// closed and further frames are rejected.
  std::vector<Frame> handle(const Frame& in) {
    try {
      if (state_ == State::closed) wire_fail(ErrorCode::session_state, "session is closed");
      switch (in.type) {
        case MessageType::hello: return {on_hello(in)};
        case MessageType::step: return {on_step(in)};
        case MessageType::bye:
          state_ = State::closed;
          return {bye()};
        default: wire_fail(ErrorCode::malformed, "unexpected message type");
      }
    } catch (const WireError& e) {
      return abort(e.code(), e.what());
    } catch (const Error& e) {
      return abort(e.kind() == ErrorKind::shape ? ErrorCode::shape : ErrorCode::malformed, e.what());
    }
  }

  /// Frame-level failure detected by the transport (e.g. oversized length).
  std::vector<Frame> abort(ErrorCode code, const std::string& message) {
    state_ = State::closed;
    return {encode(ErrorMessage{code, message})};
  }

  bool closed() const noexcept { return state_ == State::closed; }
  std::uint64_t id() const noexcept { return id_; }
  const SessionConfig& config() const noexcept { return config_; }

 private:
  enum class State { awaiting_hello, ready, closed };

  Frame on_hello(const Frame& in) {
    if (state_ != State::awaiting_hello) wire_fail(ErrorCode::session_state, "duplicate handshake");
    const Hello h = decode_hello(in);
    if (h.version != kVersion) {
      wire_fail(ErrorCode::version, "unsupported protocol version " + std::to_string(h.version) + " (engine speaks " +
                                        std::to_string(kVersion) + ")");
    }
    if (h.role != Role::bridge) wire_fail(ErrorCode::malformed, "unknown role");
    try {
      config_ = parse_config(h.config, "handshake").session;
      ConsistencyParams{config_.lambda_c, config_.mask_threshold}.validate();
      GuidanceParams{config_.lambda_g}.validate();
    } catch (const Error& e) {
      wire_fail(ErrorCode::malformed, e.what());
    }
    state_ = State::ready;
    return encode(Welcome{id_, kVersion});
  }

  Frame on_step(const Frame& in) {
    if (state_ != State::ready) wire_fail(ErrorCode::session_state, "step before handshake");
    const StepRequest req = decode_step(in);
    if (last_step_ && req.step_index <= *last_step_) {
      wire_fail(ErrorCode::session_state, "step index " + std::to_string(req.step_index) + " is not increasing");
    }
    last_step_ = req.step_index;
    return encode(process_step(req, config_));
  }

  std::uint64_t id_;
  State state_ = State::awaiting_hello;
  SessionConfig config_;
  std::optional<std::uint32_t> last_step_;
};

}  // namespace dm::wire
