#include <doctest.h>

#include <condition_variable>
#include <cstring>
#include <mutex>
#include <random>
#include <thread>

#include "steerlab/concepts/concepts.hpp"
#include "steerlab/core/error.hpp"
#include "steerlab/protocol/protocol.hpp"
#include "steerlab/surrogate/model.hpp"

using namespace steerlab;
using namespace steerlab::protocol;

namespace {

Tensor4<float> random_tensor(Shape4 s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.f, 1.f);
  Tensor4<float> t(s[0], s[1], s[2], s[3]);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
  return t;
}

concepts::ConceptDirection<float> random_direction(Shape4 s, std::uint64_t seed) {
  concepts::ConceptDirection<float> d;
  d.name = "probe";
  d.full = random_tensor(s, seed);
  d = concepts::spatial_average(d);
  return d;
}

// Starts a server for `sessions` sessions and returns its port.
struct ServerThread {
  std::mutex m;
  std::condition_variable cv;
  std::uint16_t port = 0;
  std::thread thread;

  ServerThread(SessionHandler::Options opts, std::size_t sessions) {
    thread = std::thread([&, opts, sessions] {
      serve(0, opts, sessions, [&](std::uint16_t p) {
        std::lock_guard lock(m);
        port = p;
        cv.notify_one();
      });
    });
    std::unique_lock lock(m);
    cv.wait(lock, [&] { return port != 0; });
  }
  ~ServerThread() { thread.join(); }
};

bool bitwise_equal(const Tensor4<float>& a, const Tensor4<float>& b) {
  return shape_of(a) == shape_of(b) && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_SUITE("protocol") {
  TEST_CASE("frames round-trip through the parser in arbitrary chunks") {
    std::vector<Message> sent{Message::of_text(MsgType::Hello, "{}"), Message{MsgType::Done, {}},
                              Message::of_floats(MsgType::Activation, std::vector<float>{1.f, -2.f, 3.5f})};
    std::vector<std::uint8_t> wire;
    for (const auto& m : sent) {
      const auto b = encode(m);
      wire.insert(wire.end(), b.begin(), b.end());
    }
    CHECK(encode(sent[1]).size() == kHeaderSize);
    CHECK(wire[0] == 'S');
    CHECK(wire[4] == 0x01);

    FrameParser p;
    std::vector<Message> got;
    for (std::size_t i = 0; i < wire.size(); i += 3) {
      p.feed({wire.data() + i, std::min<std::size_t>(3, wire.size() - i)});
      while (auto m = p.next()) got.push_back(*m);
    }
    REQUIRE(got.size() == sent.size());
    for (std::size_t i = 0; i < sent.size(); ++i) {
      CHECK(got[i].type == sent[i].type);
      CHECK(got[i].payload == sent[i].payload);
    }
    CHECK_FALSE(p.failed());
  }

  TEST_CASE("length field is little-endian u64") {
    Message m{MsgType::Activation, std::vector<std::uint8_t>(258, 0)};
    const auto b = encode(m);
    CHECK(b[5] == 0x02);
    CHECK(b[6] == 0x01);
    for (int i = 7; i < 13; ++i) CHECK(b[i] == 0);
  }

  TEST_CASE("malformed frames fail cleanly") {
    SUBCASE("bad magic") {
      FrameParser p;
      const std::uint8_t bad[kHeaderSize] = {'X', 'A', 'C', 'T', 1};
      p.feed(bad);
      CHECK_FALSE(p.next());
      CHECK(p.failed());
    }
    SUBCASE("unknown type") {
      auto b = encode(Message{MsgType::Hello, {}});
      b[4] = 0x42;
      FrameParser p;
      p.feed(b);
      CHECK_FALSE(p.next());
      CHECK(p.failed());
    }
    SUBCASE("oversize length is rejected before allocating") {
      auto b = encode(Message{MsgType::Activation, {}});
      for (int i = 5; i < 13; ++i) b[i] = 0xFF;
      FrameParser p;
      p.feed(b);
      CHECK_FALSE(p.next());
      CHECK(p.failed());
    }
    SUBCASE("truncated frame waits for more bytes") {
      auto b = encode(Message::of_text(MsgType::Spec, "abcdef"));
      FrameParser p;
      p.feed({b.data(), b.size() - 1});
      CHECK_FALSE(p.next());
      CHECK_FALSE(p.failed());
      p.feed({b.data() + b.size() - 1, 1});
      CHECK(p.next());
    }
  }

  TEST_CASE("fuzzed byte streams never crash the parser") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> byte(0, 255), len(0, 64), choice(0, 3);
    std::size_t messages = 0, failures = 0;
    for (int trial = 0; trial < 5000; ++trial) {
      std::vector<std::uint8_t> stream;
      const int pieces = 1 + trial % 5;
      for (int k = 0; k < pieces; ++k) {
        if (choice(rng) == 0) {
          for (int i = len(rng); i > 0; --i) stream.push_back(static_cast<std::uint8_t>(byte(rng)));
        } else {
          Message m{static_cast<MsgType>(std::array<int, 6>{1, 2, 3, 4, 5, 0x7F}[trial % 6]), {}};
          for (int i = len(rng); i > 0; --i) m.payload.push_back(static_cast<std::uint8_t>(byte(rng)));
          auto b = encode(m);
          if (choice(rng) == 0) b[static_cast<std::size_t>(byte(rng)) % b.size()] ^= 0xFF;
          stream.insert(stream.end(), b.begin(), b.end());
        }
      }
      FrameParser p(4096);
      std::size_t pos = 0;
      while (pos < stream.size()) {
        const std::size_t n = std::min<std::size_t>(1 + byte(rng) % 17, stream.size() - pos);
        p.feed({stream.data() + pos, n});
        pos += n;
        while (auto m = p.next()) {
          ++messages;
          CHECK(m->payload.size() <= 4096);
        }
      }
      failures += p.failed();
    }
    CHECK(messages > 0);
    CHECK(failures > 0);
  }

  TEST_CASE("session handler enforces ordering and answers errors") {
    SessionHandler h({});
    auto r = h.handle(Message::of_text(MsgType::Spec, SpecDoc{"blocks.0", {1, 2, 2, 2}}.dump()));
    REQUIRE(r);
    CHECK(r->type == MsgType::Error);
    CHECK(h.handle(Message::of_text(MsgType::Hello, "{}"))->type == MsgType::Hello);
    CHECK(h.handle(Message::of_text(MsgType::Spec, "not json"))->type == MsgType::Error);
    CHECK(h.handle(Message::of_text(MsgType::Spec, R"({"layer":"x","dims":[1,2,2,2],"dtype":"f64"})"))->type ==
          MsgType::Error);
    CHECK(h.handle(Message::of_text(MsgType::Spec, SpecDoc{"blocks.0", {1, 2, 2, 2}}.dump()))->type == MsgType::Spec);
    CHECK_FALSE(h.handle(Message{MsgType::Done, {}}));
    CHECK(h.done());
  }

  TEST_CASE("steering handler rejects payloads that do not match the SPEC dims") {
    SessionHandler::Options opts;
    opts.direction = random_direction({1, 2, 2, 2}, 3);
    opts.alpha = 0.3;
    opts.mode = steering::Mode::FullSpatial;
    SessionHandler h(opts);
    h.handle(Message::of_text(MsgType::Hello, "{}"));
    h.handle(Message::of_text(MsgType::Spec, SpecDoc{"blocks.0", {1, 2, 2, 2}}.dump()));
    const auto r = h.handle(Message::of_floats(MsgType::Activation, std::vector<float>(5, 1.f)));
    REQUIRE(r);
    CHECK(r->type == MsgType::Error);
  }

  TEST_CASE("echo server round-trip is bit-identical for a hooked model") {
    surrogate::ModelConfig cfg;
    cfg.grid_height = cfg.grid_width = 16;
    cfg.embed_dim = 8;
    cfg.n_heads = 2;
    cfg.n_blocks = 2;
    cfg.window_T = 2;
    cfg.field_count = 2;
    cfg.patch_size = 4;
    const auto model = surrogate::Model<float>::initialize(cfg, 5);
    const auto window = random_tensor({2, 2, 16, 16}, 8);
    const auto plain = model.forward(window).delta;

    ServerThread server({}, 1);
    Client client("127.0.0.1", server.port);
    client.handshake({"blocks.1", cfg.activation_shape()});
    std::size_t calls = 0;
    surrogate::Injector<float> inj{{1}, [&](Tensor4<float>& a) {
                                     a = client.exchange(a);
                                     ++calls;
                                   }};
    surrogate::ForwardOptions<float> opt;
    opt.injector = &inj;
    const auto hooked = model.forward(window, opt).delta;
    const auto hooked_again = model.forward(window, opt).delta;
    client.done();
    CHECK(calls == 2);
    CHECK(std::memcmp(plain.data(), hooked.data(), plain.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(plain.data(), hooked_again.data(), plain.size() * sizeof(float)) == 0);
  }

  TEST_CASE("steering server: alpha 0 is identity, alpha 0.3 changes the activation") {
    const Shape4 shape{2, 4, 3, 3};
    const auto a = random_tensor(shape, 21);
    for (double alpha : {0.0, 0.3}) {
      SessionHandler::Options opts;
      opts.direction = random_direction(shape, 22);
      opts.alpha = alpha;
      opts.mode = steering::Mode::FullSpatial;
      ServerThread server(opts, 1);
      Client client("127.0.0.1", server.port);
      client.handshake({"blocks.0", shape});
      client.send(Message::of_floats(MsgType::Activation, {a.data(), static_cast<std::size_t>(a.size())}));
      const auto reply = client.receive();
      REQUIRE(reply.type == MsgType::Injection);
      CHECK(reply.payload.size() == static_cast<std::size_t>(a.size()) * sizeof(float));
      Tensor4<float> out(shape[0], shape[1], shape[2], shape[3]);
      std::memcpy(out.data(), reply.payload.data(), reply.payload.size());
      if (alpha == 0.0) {
        CHECK(bitwise_equal(out, a));
      } else {
        CHECK_FALSE(bitwise_equal(out, a));
        CHECK(bitwise_equal(out, steering::steer(a, *opts.direction->full, alpha)));
      }
      client.done();
    }
  }

  TEST_CASE("server answers a corrupt stream with ERROR and closes") {
    ServerThread server({}, 1);
    Client client("127.0.0.1", server.port);
    const std::uint8_t junk[kHeaderSize] = {'N', 'O', 'P', 'E'};
    client.send_raw(junk);
    const auto r = client.receive();
    CHECK(r.type == MsgType::Error);
    CHECK_THROWS_AS(client.receive(), Error);
  }
}
