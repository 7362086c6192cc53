#pragma once

#include "wordflow/adapter.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace wordflow::rpc {

inline constexpr std::uint32_t kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxFrameBytes = 1u << 30;

/// One message: u32 frame length | u32 header length | JSON header | float32
/// payload (frame length covers everything after the first u32).
struct Frame {
  nlohmann::json header;
  std::vector<float> payload;
};

std::vector<std::uint8_t> encode_frame(const Frame& frame);
/// Decodes the bytes following the outer length prefix.
Frame decode_frame(std::span<const std::uint8_t> body);

/// Bidirectional byte stream over a pair of file descriptors (a socket uses
/// the same descriptor twice).
class Stream {
 public:
  Stream(int read_fd, int write_fd, bool owns);
  Stream(const Stream&) = delete;
  Stream& operator=(const Stream&) = delete;
  Stream(Stream&& other) noexcept;
  Stream& operator=(Stream&& other) noexcept;
  ~Stream();

  void write_frame(const Frame& frame);
  /// Throws AdapterUnavailable on timeout or EOF, ProtocolError on bad framing.
  Frame read_frame(std::chrono::milliseconds timeout);
  /// Like read_frame but returns false on a clean EOF before any byte.
  bool try_read_frame(Frame& out, std::chrono::milliseconds timeout);
  void close();
  bool is_open() const { return read_fd_ >= 0; }

 private:
  bool read_exact(std::uint8_t* dst, std::size_t n, std::chrono::milliseconds timeout, bool eof_ok);

  int read_fd_ = -1;
  int write_fd_ = -1;
  bool owns_ = false;
};

/// Answers requests on `stream` until EOF. A malformed request gets an error
/// frame with code ProtocolError and the stream is closed.
void serve_stream(const ModelAdapter& adapter, Stream& stream);

/// Serves an adapter on a loopback TCP port; one thread per connection.
class Server {
 public:
  /// port 0 picks an ephemeral port.
  Server(const ModelAdapter& adapter, std::uint16_t port = 0, std::string host = "127.0.0.1");
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  std::uint16_t port() const { return port_; }
  std::string endpoint() const;
  void stop();

 private:
  void accept_loop();

  const ModelAdapter& adapter_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::string host_;
  std::atomic<bool> running_{true};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::thread> workers_;
  std::vector<int> client_fds_;
};

struct ClientOptions {
  std::size_t pool_size = 1;
  std::chrono::milliseconds timeout{30000};
};

/// ModelAdapter backed by a remote process. Endpoints: "tcp://HOST:PORT",
/// "HOST:PORT", or "exec:COMMAND" (spawns COMMAND and talks over its stdio).
/// Each pooled connection has at most one request in flight.
class RpcAdapter : public ModelAdapter {
 public:
  static std::unique_ptr<RpcAdapter> connect(const std::string& endpoint,
                                             ClientOptions options = {});
  ~RpcAdapter() override;

  AdapterInfo info() const override { return info_; }
  ActivationRecord forward_full(const TokenSequence& seq) const override;
  std::vector<double> predict_from_layer(std::size_t layer,
                                         std::span<const Vector> states) const override;
  LayerStates propagate(std::size_t layer, std::span<const Vector> states) const override;

 private:
  struct Connection;
  using Connector = std::function<std::unique_ptr<Connection>()>;

  RpcAdapter(Connector connector, ClientOptions options);
  Frame call(const Frame& request) const;

  Connector connector_;
  ClientOptions options_;
  AdapterInfo info_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  mutable std::vector<std::unique_ptr<Connection>> idle_;
  mutable std::size_t live_ = 0;
};

}  // namespace wordflow::rpc
