#include "wordflow/adapter_rpc.hpp"

#include "wordflow/binary_io.hpp"
#include "wordflow/error.hpp"

#include <arpa/inet.h>
#include <csignal>
#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

namespace wordflow::rpc {

namespace {

void ignore_sigpipe() {
  static const bool once = [] {
    std::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)once;
}

std::vector<float> pack_states(std::span<const Vector> states, std::size_t& dim) {
  if (states.empty()) throw InvalidInput("no hidden states");
  dim = static_cast<std::size_t>(states.front().size());
  std::vector<float> out;
  out.reserve(states.size() * dim);
  for (const auto& v : states) {
    if (static_cast<std::size_t>(v.size()) != dim) throw InvalidInput("ragged hidden states");
    for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(static_cast<float>(v[k]));
  }
  return out;
}

LayerStates unpack_states(std::span<const float> payload, std::size_t m, std::size_t dim) {
  if (m == 0 || dim == 0 || payload.size() != m * dim) {
    throw ProtocolError("state payload size does not match M x dim");
  }
  LayerStates states(m);
  for (std::size_t i = 0; i < m; ++i) {
    states[i] = Eigen::Map<const Eigen::VectorXf>(payload.data() + i * dim,
                                                  static_cast<Eigen::Index>(dim)).cast<double>();
  }
  return states;
}

Frame error_frame(ErrorCode code, const std::string& message) {
  Frame f;
  f.header = {{"op", "error"}, {"code", std::string(to_string(code))}, {"message", message}};
  return f;
}

void throw_if_error(const Frame& reply) {
  if (reply.header.value("op", "") == "error") {
    raise(error_code_from_string(reply.header.value("code", "ProtocolError")),
          "remote: " + reply.header.value("message", std::string{}));
  }
}

nlohmann::json hello_body(const AdapterInfo& meta) {
  return {{"op", "hello"},
          {"version", kProtocolVersion},
          {"layer_count", meta.layer_count},
          {"class_count", meta.class_count},
          {"assoc_mode", std::string(to_string(meta.association))},
          {"receptive_width", meta.receptive_width},
          {"thread_safe", meta.thread_safe},
          {"supports_propagation", meta.supports_propagation},
          {"exact_prediction", meta.exact_prediction}};
}

Frame handle(const ModelAdapter& adapter, const Frame& request) {
  const auto& h = request.header;
  const std::string op = h.at("op").get<std::string>();
  if (op == "hello") {
    const auto version = h.at("version").get<std::uint32_t>();
    if (version != kProtocolVersion) {
      throw ProtocolError("protocol version " + std::to_string(version) + " not supported");
    }
    return Frame{hello_body(adapter.info()), {}};
  }
  if (op == "forward_full") {
    TokenSequence seq;
    seq.sample_id = h.at("sample_id").get<std::string>();
    seq.tokens = h.at("tokens").get<std::vector<std::string>>();
    seq.special_flags = h.contains("special_flags") ? h.at("special_flags").get<std::vector<bool>>()
                                                    : std::vector<bool>(seq.tokens.size(), false);
    const ActivationRecord rec = adapter.forward_full(seq);
    Frame reply;
    std::vector<std::size_t> dims;
    for (std::size_t l = 1; l <= rec.layer_count(); ++l) dims.push_back(rec.dim(l));
    reply.header = {{"op", "forward_full"},
                    {"sample_id", rec.sample_id},
                    {"tokens", rec.tokens.empty() ? seq.tokens : rec.tokens},
                    {"special_flags", rec.tokens.empty() ? seq.special_flags : rec.special_flags},
                    {"M", rec.token_count()},
                    {"L", rec.layer_count()},
                    {"dims", dims},
                    {"K", rec.class_scores.size()}};
    for (const auto& states : rec.hidden) {
      for (const auto& v : states) {
        for (Eigen::Index k = 0; k < v.size(); ++k) reply.payload.push_back(static_cast<float>(v[k]));
      }
    }
    for (double s : rec.class_scores) reply.payload.push_back(static_cast<float>(s));
    return reply;
  }
  if (op == "predict_from_layer" || op == "propagate") {
    const auto layer = h.at("layer").get<std::size_t>();
    const auto m = h.at("M").get<std::size_t>();
    const auto dim = h.at("dim").get<std::size_t>();
    const LayerStates states = unpack_states(request.payload, m, dim);
    Frame reply;
    if (op == "predict_from_layer") {
      const auto scores = adapter.predict_from_layer(layer, states);
      reply.header = {{"op", op}, {"K", scores.size()}};
      for (double s : scores) reply.payload.push_back(static_cast<float>(s));
    } else {
      const auto next = adapter.propagate(layer, states);
      std::size_t out_dim = 0;
      reply.payload = pack_states(next, out_dim);
      reply.header = {{"op", op}, {"M", next.size()}, {"dim", out_dim}};
    }
    return reply;
  }
  throw ProtocolError("unknown op '" + op + "'");
}

}  // namespace

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
  const std::string header = frame.header.dump();
  const std::size_t body = 4 + header.size() + frame.payload.size() * sizeof(float);
  if (body > kMaxFrameBytes) throw ProtocolError("frame too large");
  io::Writer w;
  w.u32(static_cast<std::uint32_t>(body));
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header);
  w.f32s(frame.payload);
  return w.take();
}

Frame decode_frame(std::span<const std::uint8_t> body) {
  io::Reader<ProtocolError> r(body);
  const auto header_len = r.u32();
  Frame f;
  try {
    f.header = nlohmann::json::parse(r.bytes(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("bad frame header: ") + e.what());
  }
  if (!f.header.is_object() || !f.header.contains("op") || !f.header["op"].is_string()) {
    throw ProtocolError("frame header must be an object with a string 'op'");
  }
  if (r.remaining() % sizeof(float) != 0) throw ProtocolError("payload is not a float32 array");
  f.payload.resize(r.remaining() / sizeof(float));
  r.f32s(f.payload);
  return f;
}

Stream::Stream(int read_fd, int write_fd, bool owns)
    : read_fd_(read_fd), write_fd_(write_fd), owns_(owns) {}

Stream::Stream(Stream&& other) noexcept
    : read_fd_(std::exchange(other.read_fd_, -1)),
      write_fd_(std::exchange(other.write_fd_, -1)),
      owns_(other.owns_) {}

Stream& Stream::operator=(Stream&& other) noexcept {
  if (this != &other) {
    close();
    read_fd_ = std::exchange(other.read_fd_, -1);
    write_fd_ = std::exchange(other.write_fd_, -1);
    owns_ = other.owns_;
  }
  return *this;
}

Stream::~Stream() { close(); }

void Stream::close() {
  if (owns_) {
    if (read_fd_ >= 0) ::close(read_fd_);
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
  }
  read_fd_ = -1;
  write_fd_ = -1;
}

void Stream::write_frame(const Frame& frame) {
  if (write_fd_ < 0) throw AdapterUnavailable("stream closed");
  const auto bytes = encode_frame(frame);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(write_fd_, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw AdapterUnavailable(std::string("write failed: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

bool Stream::read_exact(std::uint8_t* dst, std::size_t n, std::chrono::milliseconds timeout,
                        bool eof_ok) {
  if (read_fd_ < 0) throw AdapterUnavailable("stream closed");
  std::size_t done = 0;
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (done < n) {
    int wait_ms = -1;
    if (timeout.count() >= 0) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw AdapterUnavailable("timed out waiting for adapter");
      wait_ms = static_cast<int>(left.count());
    }
    pollfd pfd{read_fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, wait_ms);
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw AdapterUnavailable(std::string("poll failed: ") + std::strerror(errno));
    }
    if (ready == 0) throw AdapterUnavailable("timed out waiting for adapter");
    const ssize_t got = ::read(read_fd_, dst + done, n - done);
    if (got < 0) {
      if (errno == EINTR) continue;
      throw AdapterUnavailable(std::string("read failed: ") + std::strerror(errno));
    }
    if (got == 0) {
      if (eof_ok && done == 0) return false;
      throw AdapterUnavailable("connection closed by peer");
    }
    done += static_cast<std::size_t>(got);
  }
  return true;
}

bool Stream::try_read_frame(Frame& out, std::chrono::milliseconds timeout) {
  std::uint8_t prefix[4];
  if (!read_exact(prefix, 4, timeout, true)) return false;
  std::uint32_t len;
  std::memcpy(&len, prefix, 4);
  if (len < 4 || len > kMaxFrameBytes) throw ProtocolError("invalid frame length " + std::to_string(len));
  std::vector<std::uint8_t> body(len);
  read_exact(body.data(), len, timeout, false);
  out = decode_frame(body);
  return true;
}

Frame Stream::read_frame(std::chrono::milliseconds timeout) {
  Frame f;
  if (!try_read_frame(f, timeout)) throw AdapterUnavailable("connection closed by peer");
  return f;
}

void serve_stream(const ModelAdapter& adapter, Stream& stream) {
  ignore_sigpipe();
  while (stream.is_open()) {
    Frame request;
    try {
      if (!stream.try_read_frame(request, std::chrono::milliseconds(-1))) break;
    } catch (const ProtocolError& e) {
      try {
        stream.write_frame(error_frame(ErrorCode::ProtocolError, e.what()));
      } catch (const Error&) {
      }
      break;
    } catch (const Error&) {
      break;
    }
    Frame reply;
    bool fatal = false;
    try {
      reply = handle(adapter, request);
    } catch (const ProtocolError& e) {
      reply = error_frame(ErrorCode::ProtocolError, e.what());
      fatal = true;
    } catch (const nlohmann::json::exception& e) {
      reply = error_frame(ErrorCode::ProtocolError, e.what());
      fatal = true;
    } catch (const Error& e) {
      reply = error_frame(e.code(), e.what());
    } catch (const std::exception& e) {
      reply = error_frame(ErrorCode::AdapterUnavailable, e.what());
    }
    try {
      stream.write_frame(reply);
    } catch (const Error&) {
      break;
    }
    if (fatal) break;
  }
  stream.close();
}

Server::Server(const ModelAdapter& adapter, std::uint16_t port, std::string host)
    : adapter_(adapter), host_(std::move(host)) {
  ignore_sigpipe();
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw AdapterUnavailable("cannot create socket");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw InvalidInput("invalid listen address '" + host_ + "'");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(listen_fd_, 16) != 0) {
    ::close(listen_fd_);
    throw AdapterUnavailable(std::string("cannot listen: ") + std::strerror(errno));
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

Server::~Server() { stop(); }

std::string Server::endpoint() const { return "tcp://" + host_ + ":" + std::to_string(port_); }

void Server::accept_loop() {
  while (running_) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, 100);
    if (ready <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard lock(mu_);
    client_fds_.push_back(fd);
    workers_.emplace_back([this, fd] {
      Stream stream(fd, fd, false);
      serve_stream(adapter_, stream);
      ::shutdown(fd, SHUT_RDWR);
    });
  }
}

void Server::stop() {
  if (!running_.exchange(false)) return;
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
  for (int fd : client_fds_) ::close(fd);
  client_fds_.clear();
  if (listen_fd_ >= 0) ::close(listen_fd_);
  listen_fd_ = -1;
}

struct RpcAdapter::Connection {
  Stream stream{-1, -1, true};
  pid_t child = -1;

  ~Connection() {
    stream.close();
    if (child > 0) {
      int status = 0;
      ::waitpid(child, &status, 0);
    }
  }
};

namespace {

std::unique_ptr<Stream> open_tcp(const std::string& host, const std::string& port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* found = nullptr;
  if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &found) != 0 || found == nullptr) {
    throw AdapterUnavailable("cannot resolve " + host + ":" + port);
  }
  int fd = -1;
  for (addrinfo* a = found; a != nullptr; a = a->ai_next) {
    fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(found);
  if (fd < 0) throw AdapterUnavailable("cannot connect to " + host + ":" + port);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return std::make_unique<Stream>(fd, fd, true);
}

}  // namespace

std::unique_ptr<RpcAdapter> RpcAdapter::connect(const std::string& endpoint, ClientOptions options) {
  ignore_sigpipe();
  if (options.pool_size == 0) options.pool_size = 1;
  Connector connector;
  if (endpoint.rfind("exec:", 0) == 0) {
    const std::string command = endpoint.substr(5);
    connector = [command] {
      int to_child[2], from_child[2];
      if (::pipe(to_child) != 0) throw AdapterUnavailable("pipe failed");
      if (::pipe(from_child) != 0) {
        ::close(to_child[0]);
        ::close(to_child[1]);
        throw AdapterUnavailable("pipe failed");
      }
      const pid_t pid = ::fork();
      if (pid < 0) throw AdapterUnavailable("fork failed");
      if (pid == 0) {
        ::dup2(to_child[0], STDIN_FILENO);
        ::dup2(from_child[1], STDOUT_FILENO);
        ::close(to_child[0]);
        ::close(to_child[1]);
        ::close(from_child[0]);
        ::close(from_child[1]);
        ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
      }
      ::close(to_child[0]);
      ::close(from_child[1]);
      auto conn = std::make_unique<Connection>();
      conn->stream = Stream(from_child[0], to_child[1], true);
      conn->child = pid;
      return conn;
    };
  } else {
    std::string rest = endpoint;
    if (rest.rfind("tcp://", 0) == 0) rest = rest.substr(6);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) throw InvalidInput("endpoint must be HOST:PORT or exec:COMMAND");
    const std::string host = rest.substr(0, colon);
    const std::string port = rest.substr(colon + 1);
    connector = [host, port] {
      auto conn = std::make_unique<Connection>();
      conn->stream = std::move(*open_tcp(host, port));
      return conn;
    };
  }
  std::unique_ptr<RpcAdapter> adapter(new RpcAdapter(std::move(connector), options));
  // The handshake runs on the first connection, which then stays pooled.
  Frame hello;
  hello.header = {{"op", "hello"}, {"version", kProtocolVersion}};
  const Frame reply = adapter->call(hello);
  const auto& h = reply.header;
  try {
    if (h.at("op").get<std::string>() != "hello" ||
        h.at("version").get<std::uint32_t>() != kProtocolVersion) {
      throw ProtocolError("handshake version mismatch");
    }
    AdapterInfo& meta = adapter->info_;
    meta.layer_count = h.at("layer_count").get<std::size_t>();
    meta.class_count = h.at("class_count").get<std::size_t>();
    meta.association = association_from_string(h.at("assoc_mode").get<std::string>());
    meta.receptive_width = h.value("receptive_width", std::size_t{1});
    meta.supports_propagation = h.value("supports_propagation", false);
    meta.exact_prediction = h.value("exact_prediction", true);
    meta.thread_safe = true;
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("bad hello reply: ") + e.what());
  }
  return adapter;
}

RpcAdapter::RpcAdapter(Connector connector, ClientOptions options)
    : connector_(std::move(connector)), options_(options) {}

RpcAdapter::~RpcAdapter() = default;

Frame RpcAdapter::call(const Frame& request) const {
  std::unique_ptr<Connection> conn;
  {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !idle_.empty() || live_ < options_.pool_size; });
    if (!idle_.empty()) {
      conn = std::move(idle_.back());
      idle_.pop_back();
    } else {
      ++live_;
    }
  }
  bool released = false;
  auto release = [&](bool keep) {
    std::lock_guard lock(mu_);
    if (keep && conn) {
      idle_.push_back(std::move(conn));
    } else {
      --live_;
      conn.reset();
    }
    released = true;
    cv_.notify_one();
  };
  Frame reply;
  try {
    if (!conn) conn = connector_();
    conn->stream.write_frame(request);
    reply = conn->stream.read_frame(options_.timeout);
  } catch (...) {
    release(false);
    throw;
  }
  const bool protocol_failure =
      reply.header.value("op", "") == "error" && reply.header.value("code", "") == "ProtocolError";
  if (!released) release(!protocol_failure);
  throw_if_error(reply);
  return reply;
}

ActivationRecord RpcAdapter::forward_full(const TokenSequence& seq) const {
  seq.validate();
  Frame request;
  request.header = {{"op", "forward_full"},
                    {"sample_id", seq.sample_id},
                    {"tokens", seq.tokens},
                    {"special_flags", seq.special_flags}};
  const Frame reply = call(request);
  try {
    const auto& h = reply.header;
    ActivationRecord rec;
    rec.sample_id = h.at("sample_id").get<std::string>();
    rec.tokens = h.at("tokens").get<std::vector<std::string>>();
    rec.special_flags = h.at("special_flags").get<std::vector<bool>>();
    const auto m = h.at("M").get<std::size_t>();
    const auto dims = h.at("dims").get<std::vector<std::size_t>>();
    const auto k = h.at("K").get<std::size_t>();
    std::size_t expected = k;
    for (auto d : dims) expected += m * d;
    if (reply.payload.size() != expected) throw ProtocolError("forward_full payload size mismatch");
    std::size_t offset = 0;
    for (auto d : dims) {
      rec.hidden.push_back(unpack_states(std::span(reply.payload).subspan(offset, m * d), m, d));
      offset += m * d;
    }
    for (std::size_t c = 0; c < k; ++c) rec.class_scores.push_back(reply.payload[offset + c]);
    return rec;
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("bad forward_full reply: ") + e.what());
  }
}

std::vector<double> RpcAdapter::predict_from_layer(std::size_t layer,
                                                   std::span<const Vector> states) const {
  Frame request;
  std::size_t dim = 0;
  request.payload = pack_states(states, dim);
  request.header = {{"op", "predict_from_layer"}, {"layer", layer}, {"M", states.size()}, {"dim", dim}};
  const Frame reply = call(request);
  return {reply.payload.begin(), reply.payload.end()};
}

LayerStates RpcAdapter::propagate(std::size_t layer, std::span<const Vector> states) const {
  if (!info_.supports_propagation) return ModelAdapter::propagate(layer, states);
  Frame request;
  std::size_t dim = 0;
  request.payload = pack_states(states, dim);
  request.header = {{"op", "propagate"}, {"layer", layer}, {"M", states.size()}, {"dim", dim}};
  const Frame reply = call(request);
  try {
    return unpack_states(reply.payload, reply.header.at("M").get<std::size_t>(),
                         reply.header.at("dim").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("bad propagate reply: ") + e.what());
  }
}

}  // namespace wordflow::rpc
