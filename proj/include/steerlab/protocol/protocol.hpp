#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "steerlab/concepts/concepts.hpp"
#include "steerlab/steering/steering.hpp"

namespace steerlab::protocol {

// Frame: 4-byte magic "SACT", 1-byte type, u64 little-endian payload length,
// payload.
enum class MsgType : std::uint8_t {
  Hello = 0x01,
  Spec = 0x02,
  Activation = 0x03,
  Injection = 0x04,
  Done = 0x05,
  Error = 0x7F,
};

constexpr std::size_t kHeaderSize = 13;
constexpr std::uint64_t kDefaultMaxPayload = std::uint64_t{1} << 30;

struct Message {
  MsgType type = MsgType::Hello;
  std::vector<std::uint8_t> payload;

  std::string text() const { return {payload.begin(), payload.end()}; }
  static Message of_text(MsgType type, const std::string& text);
  static Message of_floats(MsgType type, std::span<const float> values);
};

std::vector<std::uint8_t> encode(const Message& m);

/// Incremental decoder. Feed arbitrary byte chunks, then pop whole messages.
/// A bad magic, unknown type, or oversize length puts the parser in a
/// failed state (error() is set); it never throws and never over-allocates.
class FrameParser {
 public:
  explicit FrameParser(std::uint64_t max_payload = kDefaultMaxPayload) : max_payload_(max_payload) {}

  void feed(std::span<const std::uint8_t> bytes);
  std::optional<Message> next();

  bool failed() const { return error_.has_value(); }
  const std::optional<std::string>& error() const { return error_; }
  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  std::uint64_t max_payload_;
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::optional<std::string> error_;
};

/// Shape/layer document carried by SPEC.
struct SpecDoc {
  std::string layer;
  Shape4 dims{};
  std::string dtype = "f32le";

  std::string dump() const;
  /// Throws Protocol.
  static SpecDoc parse(const std::string& text);
};

/// Replies to one session's messages. Echo mode returns activations
/// unchanged; with a direction it applies steer() at the announced shape.
class SessionHandler {
 public:
  struct Options {
    std::optional<concepts::ConceptDirection<float>> direction;
    double alpha = 0.0;
    steering::Mode mode = steering::Mode::ChannelBroadcast;
    steering::Align align = steering::Align::None;
    bool per_token = false;
    double alpha_limit = 10.0;
  };

  explicit SessionHandler(Options options) : options_(std::move(options)) {}

  /// Reply for `in`, or nullopt when no reply is due (DONE).
  std::optional<Message> handle(const Message& in);
  bool done() const { return done_; }
  std::size_t activations() const { return activations_; }

 private:
  Options options_;
  std::optional<SpecDoc> spec_;
  std::optional<Tensor4<float>> direction_;
  bool hello_ = false;
  bool done_ = false;
  std::size_t activations_ = 0;
};

/// Blocking TCP server on 127.0.0.1. Sessions are served one at a time.
/// `on_listen` receives the bound port (useful with port 0).
void serve(std::uint16_t port, const SessionHandler::Options& options, std::size_t max_sessions = 0,
           const std::function<void(std::uint16_t)>& on_listen = {});

/// Minimal blocking client used by tests and the acceptance harness.
class Client {
 public:
  Client(const std::string& host, std::uint16_t port);
  ~Client();
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  void send(const Message& m);
  void send_raw(std::span<const std::uint8_t> bytes);
  /// Throws Protocol on connection loss or a malformed reply.
  Message receive();

  /// HELLO + SPEC handshake; throws Protocol if the server answers ERROR.
  void handshake(const SpecDoc& spec);
  /// ACTIVATION round trip; throws Protocol on ERROR or a length mismatch.
  Tensor4<float> exchange(const Tensor4<float>& activation);
  void done();

 private:
  int fd_ = -1;
  FrameParser parser_;
};

}  // namespace steerlab::protocol
