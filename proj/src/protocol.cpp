#include "steerlab/protocol/protocol.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <nlohmann/json.hpp>

#include "steerlab/core/error.hpp"

namespace steerlab::protocol {

namespace {

constexpr std::uint8_t kMagic[4] = {'S', 'A', 'C', 'T'};

bool known_type(std::uint8_t t) { return (t >= 0x01 && t <= 0x05) || t == 0x7F; }

Message error_message(const std::string& text) { return Message::of_text(MsgType::Error, text); }

void write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      fail(ErrorCode::Protocol, std::string("connection lost while sending: ") + std::strerror(errno));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

// Reads until the parser yields a message; nullopt on orderly close.
std::optional<Message> read_message(int fd, FrameParser& parser) {
  std::uint8_t buf[65536];
  while (true) {
    if (auto m = parser.next()) return m;
    if (parser.failed()) fail(ErrorCode::Protocol, *parser.error());
    const ssize_t r = ::recv(fd, buf, sizeof buf, 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      fail(ErrorCode::Protocol, std::string("connection lost: ") + std::strerror(errno));
    }
    if (r == 0) {
      if (parser.buffered() > 0) fail(ErrorCode::Protocol, "connection closed mid-frame");
      return std::nullopt;
    }
    parser.feed({buf, static_cast<std::size_t>(r)});
  }
}

Tensor4<float> tensor_from(const Message& m, const Shape4& dims) {
  Tensor4<float> t(dims[0], dims[1], dims[2], dims[3]);
  if (m.payload.size() != static_cast<std::size_t>(t.size()) * sizeof(float)) {
    fail(ErrorCode::Protocol, "payload of " + std::to_string(m.payload.size()) + " bytes does not match dims " +
                                  shape_string(dims));
  }
  std::memcpy(t.data(), m.payload.data(), m.payload.size());
  return t;
}

}  // namespace

Message Message::of_text(MsgType type, const std::string& text) { return {type, {text.begin(), text.end()}}; }

Message Message::of_floats(MsgType type, std::span<const float> values) {
  Message m{type, {}};
  const auto bytes = std::as_bytes(values);
  m.payload.resize(bytes.size());
  std::memcpy(m.payload.data(), bytes.data(), bytes.size());
  return m;
}

std::vector<std::uint8_t> encode(const Message& m) {
  std::vector<std::uint8_t> out(kHeaderSize + m.payload.size());
  std::memcpy(out.data(), kMagic, 4);
  out[4] = static_cast<std::uint8_t>(m.type);
  std::uint64_t len = m.payload.size();
  for (int i = 0; i < 8; ++i) out[5 + i] = static_cast<std::uint8_t>(len >> (8 * i));
  if (!m.payload.empty()) std::memcpy(out.data() + kHeaderSize, m.payload.data(), m.payload.size());
  return out;
}

void FrameParser::feed(std::span<const std::uint8_t> bytes) {
  if (error_) return;
  if (pos_ > 0 && pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  }
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<Message> FrameParser::next() {
  if (error_ || buffered() < kHeaderSize) return std::nullopt;
  const std::uint8_t* h = buf_.data() + pos_;
  if (std::memcmp(h, kMagic, 4) != 0) {
    error_ = "bad magic";
    return std::nullopt;
  }
  if (!known_type(h[4])) {
    error_ = "unknown message type " + std::to_string(h[4]);
    return std::nullopt;
  }
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t{h[5 + i]} << (8 * i);
  if (len > max_payload_) {
    error_ = "payload length " + std::to_string(len) + " exceeds limit";
    return std::nullopt;
  }
  if (buffered() - kHeaderSize < len) return std::nullopt;
  Message m;
  m.type = static_cast<MsgType>(h[4]);
  m.payload.assign(h + kHeaderSize, h + kHeaderSize + len);
  pos_ += kHeaderSize + len;
  if (pos_ > (1u << 20) && pos_ * 2 > buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  return m;
}

std::string SpecDoc::dump() const {
  return nlohmann::json{{"layer", layer}, {"dims", dims}, {"dtype", dtype}}.dump();
}

SpecDoc SpecDoc::parse(const std::string& text) {
  SpecDoc s;
  try {
    const auto j = nlohmann::json::parse(text);
    s.layer = j.at("layer").get<std::string>();
    s.dims = j.at("dims").get<Shape4>();
    s.dtype = j.value("dtype", "f32le");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Protocol, std::string("bad SPEC document: ") + e.what());
  }
  if (s.dtype != "f32le") fail(ErrorCode::Protocol, "unsupported dtype '" + s.dtype + "'");
  for (Index d : s.dims) {
    if (d < 1) fail(ErrorCode::Protocol, "SPEC dims must be positive");
  }
  return s;
}

std::optional<Message> SessionHandler::handle(const Message& in) {
  try {
    switch (in.type) {
      case MsgType::Hello:
        hello_ = true;
        return Message::of_text(MsgType::Hello, R"({"server":"steerlab","version":1})");
      case MsgType::Spec: {
        if (!hello_) return error_message("SPEC before HELLO");
        auto spec = SpecDoc::parse(in.text());
        direction_.reset();
        if (options_.direction && options_.alpha != 0.0) {
          steering::SteeringConfig sc;
          sc.direction = *options_.direction;
          sc.alpha = options_.alpha;
          sc.mode = options_.mode;
          sc.align = options_.align;
          sc.alpha_limit = options_.alpha_limit;
          sc.validate();
          direction_ = steering::resolve_direction(sc, spec.dims);
        }
        spec_ = spec;
        return Message::of_text(MsgType::Spec, spec.dump());
      }
      case MsgType::Activation: {
        if (!spec_) return error_message("ACTIVATION before SPEC");
        ++activations_;
        if (!direction_) return Message{MsgType::Injection, in.payload};
        const auto a = tensor_from(in, spec_->dims);
        const auto out = options_.per_token ? steering::steer_per_token(a, *direction_, options_.alpha)
                                            : steering::steer(a, *direction_, options_.alpha);
        return Message::of_floats(MsgType::Injection, {out.data(), static_cast<std::size_t>(out.size())});
      }
      case MsgType::Done:
        done_ = true;
        return std::nullopt;
      case MsgType::Injection:
      case MsgType::Error:
        return error_message("unexpected message type from client");
    }
  } catch (const Error& e) {
    return error_message(e.what());
  }
  return error_message("unhandled message");
}

void serve(std::uint16_t port, const SessionHandler::Options& options, std::size_t max_sessions,
           const std::function<void(std::uint16_t)>& on_listen) {
  const int lfd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (lfd < 0) fail(ErrorCode::IoError, "socket failed");
  const int one = 1;
  ::setsockopt(lfd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(lfd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(lfd, 4) != 0) {
    ::close(lfd);
    fail(ErrorCode::IoError, "cannot listen on port " + std::to_string(port) + ": " + std::strerror(errno));
  }
  socklen_t len = sizeof addr;
  ::getsockname(lfd, reinterpret_cast<sockaddr*>(&addr), &len);
  if (on_listen) on_listen(ntohs(addr.sin_port));

  for (std::size_t served = 0; max_sessions == 0 || served < max_sessions; ++served) {
    const int fd = ::accept(lfd, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      break;
    }
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    SessionHandler session(options);
    FrameParser parser;
    try {
      while (!session.done()) {
        auto msg = read_message(fd, parser);
        if (!msg) break;
        if (auto reply = session.handle(*msg)) {
          const auto bytes = encode(*reply);
          write_all(fd, bytes.data(), bytes.size());
        }
      }
    } catch (const Error& e) {
      // Malformed stream: tell the peer once, then drop the connection.
      try {
        const auto bytes = encode(error_message(e.what()));
        write_all(fd, bytes.data(), bytes.size());
      } catch (const Error&) {
      }
    }
    ::close(fd);
  }
  ::close(lfd);
}

Client::Client(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res) {
    fail(ErrorCode::Protocol, "cannot resolve " + host);
  }
  fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  const bool ok = fd_ >= 0 && ::connect(fd_, res->ai_addr, res->ai_addrlen) == 0;
  ::freeaddrinfo(res);
  if (!ok) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
    fail(ErrorCode::Protocol, "cannot connect to " + host + ":" + std::to_string(port));
  }
  const int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

Client::~Client() {
  if (fd_ >= 0) ::close(fd_);
}

void Client::send(const Message& m) {
  const auto bytes = encode(m);
  write_all(fd_, bytes.data(), bytes.size());
}

void Client::send_raw(std::span<const std::uint8_t> bytes) { write_all(fd_, bytes.data(), bytes.size()); }

Message Client::receive() {
  auto m = read_message(fd_, parser_);
  if (!m) fail(ErrorCode::Protocol, "server closed the connection");
  return *m;
}

void Client::handshake(const SpecDoc& spec) {
  send(Message::of_text(MsgType::Hello, R"({"client":"steerlab"})"));
  auto r = receive();
  if (r.type != MsgType::Hello) fail(ErrorCode::Protocol, "handshake rejected: " + r.text());
  send(Message::of_text(MsgType::Spec, spec.dump()));
  r = receive();
  if (r.type != MsgType::Spec) fail(ErrorCode::Protocol, "SPEC rejected: " + r.text());
}

Tensor4<float> Client::exchange(const Tensor4<float>& activation) {
  send(Message::of_floats(MsgType::Activation, {activation.data(), static_cast<std::size_t>(activation.size())}));
  const auto r = receive();
  if (r.type != MsgType::Injection) fail(ErrorCode::Protocol, "expected INJECTION, got: " + r.text());
  return tensor_from(r, shape_of(activation));
}

void Client::done() { send(Message{MsgType::Done, {}}); }

}  // namespace steerlab::protocol
