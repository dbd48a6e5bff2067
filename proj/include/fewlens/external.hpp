#pragma once

// Wire-protocol client for external predictor processes. Transport is
// newline-delimited JSON over either a spawned child's standard streams
// ("command to run") or a TCP socket ("tcp:host:port").
//
//   server -> client on connect:  {"type":"hello","classes":C,"capabilities":["proba"]}
//   client -> server:             {"type":"predict","id":"...","tokens":[...]}
//   server -> client:             {"type":"proba","id":"...","probs":[...]}
//   server -> client on failure:  {"type":"error","id":"...","message":"..."}

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <netdb.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "fewlens/corpus.hpp"
#include "fewlens/predictor.hpp"

namespace fewlens {

class ProtocolError : public std::runtime_error {
 public:
  enum class Kind {
    kConnect,     // endpoint unreachable or stream closed
    kMalformed,   // response is not a well-formed protocol message
    kIdMismatch,  // response id differs from the request id
    kNonSimplex,  // probabilities fail simplex validation
    kRemote,      // server sent {"type":"error"}
  };

  ProtocolError(Kind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

// Writes on a closed pipe/socket must surface as EPIPE, not kill the process.
inline void ignore_sigpipe_once() {
  static const bool done = [] {
    std::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)done;
}

// Line-oriented duplex channel over a child process or a TCP connection.
class LineChannel {
 public:
  LineChannel() = default;
  LineChannel(const LineChannel&) = delete;
  LineChannel& operator=(const LineChannel&) = delete;
  LineChannel(LineChannel&& other) noexcept { swap(other); }
  LineChannel& operator=(LineChannel&& other) noexcept {
    if (this != &other) {
      close_all();
      swap(other);
    }
    return *this;
  }
  ~LineChannel() { close_all(); }

  static LineChannel spawn(const std::string& command) {
    ignore_sigpipe_once();
    int to_child[2];
    int from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0) {
      throw ProtocolError(ProtocolError::Kind::kConnect,
                          "cannot create pipes: " + std::string(strerror(errno)));
    }
    const pid_t pid = fork();
    if (pid < 0) {
      throw ProtocolError(ProtocolError::Kind::kConnect,
                          "cannot fork: " + std::string(strerror(errno)));
    }
    if (pid == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    LineChannel ch;
    ch.read_fd_ = from_child[0];
    ch.write_fd_ = to_child[1];
    ch.pid_ = pid;
    return ch;
  }

  static LineChannel connect_tcp(const std::string& host,
                                 const std::string& port) {
    ignore_sigpipe_once();
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0) {
      throw ProtocolError(ProtocolError::Kind::kConnect,
                          "cannot resolve " + host + ":" + port);
    }
    int fd = -1;
    for (addrinfo* p = res; p != nullptr; p = p->ai_next) {
      fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
      ::close(fd);
      fd = -1;
    }
    freeaddrinfo(res);
    if (fd < 0) {
      throw ProtocolError(ProtocolError::Kind::kConnect,
                          "cannot connect to " + host + ":" + port);
    }
    LineChannel ch;
    ch.read_fd_ = fd;
    ch.write_fd_ = fd;
    ch.socket_ = true;
    return ch;
  }

  void write_line(const std::string& line) {
    std::string payload = line;
    payload += '\n';
    std::size_t off = 0;
    while (off < payload.size()) {
      ssize_t n;
      if (socket_) {
        n = ::send(write_fd_, payload.data() + off, payload.size() - off,
                   MSG_NOSIGNAL);
      } else {
        n = ::write(write_fd_, payload.data() + off, payload.size() - off);
      }
      if (n <= 0) {
        if (n < 0 && errno == EINTR) continue;
        throw ProtocolError(ProtocolError::Kind::kConnect,
                            "connection closed while writing");
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::optional<std::string> read_line() {
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      char chunk[4096];
      const ssize_t n = ::read(read_fd_, chunk, sizeof(chunk));
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(ProtocolError::Kind::kConnect,
                            "connection error while reading: " +
                                std::string(strerror(errno)));
      }
      if (n == 0) {
        if (buffer_.empty()) return std::nullopt;
        std::string line = std::move(buffer_);
        buffer_.clear();
        return line;
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  void swap(LineChannel& other) noexcept {
    std::swap(read_fd_, other.read_fd_);
    std::swap(write_fd_, other.write_fd_);
    std::swap(socket_, other.socket_);
    std::swap(pid_, other.pid_);
    std::swap(buffer_, other.buffer_);
  }

  void close_all() {
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    write_fd_ = read_fd_ = -1;
    if (pid_ > 0) {
      int status = 0;
      // The child sees EOF on stdin once the pipe closes; give it a moment,
      // then escalate.
      for (int i = 0; i < 200; ++i) {
        if (waitpid(pid_, &status, WNOHANG) != 0) {
          pid_ = -1;
          return;
        }
        usleep(10000);
      }
      kill(pid_, SIGKILL);
      waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  int read_fd_ = -1;
  int write_fd_ = -1;
  bool socket_ = false;
  pid_t pid_ = -1;
  std::string buffer_;
};

inline LineChannel open_endpoint(const std::string& endpoint) {
  if (endpoint.rfind("tcp:", 0) == 0) {
    const std::string rest = endpoint.substr(4);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 >= rest.size()) {
      throw ProtocolError(ProtocolError::Kind::kConnect,
                          "tcp endpoint must be tcp:host:port, got " + endpoint);
    }
    return LineChannel::connect_tcp(rest.substr(0, colon),
                                    rest.substr(colon + 1));
  }
  if (endpoint.empty()) {
    throw ProtocolError(ProtocolError::Kind::kConnect, "empty endpoint");
  }
  return LineChannel::spawn(endpoint);
}

struct Hello {
  int classes = 0;
  std::vector<std::string> capabilities;
};

inline Hello read_hello(LineChannel& channel) {
  const auto line = channel.read_line();
  if (!line) {
    throw ProtocolError(ProtocolError::Kind::kConnect,
                        "endpoint closed before sending hello");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(*line);
  } catch (const nlohmann::json::parse_error&) {
    throw ProtocolError(ProtocolError::Kind::kMalformed,
                        "handshake is not valid JSON: " + *line);
  }
  if (!j.is_object() || j.value("type", "") != "hello" ||
      !j.contains("classes") || !j.at("classes").is_number_integer()) {
    throw ProtocolError(ProtocolError::Kind::kMalformed,
                        "handshake is not a hello message: " + *line);
  }
  Hello hello;
  hello.classes = j.at("classes").get<int>();
  if (hello.classes < 2) {
    throw ProtocolError(ProtocolError::Kind::kMalformed,
                        "hello advertises fewer than 2 classes");
  }
  if (j.contains("capabilities")) {
    for (const auto& c : j.at("capabilities")) {
      if (c.is_string()) hello.capabilities.push_back(c.get<std::string>());
    }
  }
  if (std::find(hello.capabilities.begin(), hello.capabilities.end(),
                "proba") == hello.capabilities.end()) {
    throw ProtocolError(ProtocolError::Kind::kMalformed,
                        "hello does not advertise the proba capability");
  }
  return hello;
}

inline std::string make_predict_request(const std::string& id,
                                        const std::vector<std::string>& tokens) {
  nlohmann::ordered_json j;
  j["type"] = "predict";
  j["id"] = id;
  j["tokens"] = tokens;
  return j.dump();
}

inline std::vector<double> parse_proba_response(const std::string& line,
                                                const std::string& request_id,
                                                int classes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error&) {
    throw ProtocolError(ProtocolError::Kind::kMalformed,
                        "response is not valid JSON: " + line);
  }
  if (!j.is_object() || !j.contains("type") || !j.at("type").is_string()) {
    throw ProtocolError(ProtocolError::Kind::kMalformed,
                        "response has no type field: " + line);
  }
  const std::string type = j.at("type").get<std::string>();
  if (type == "error") {
    throw ProtocolError(ProtocolError::Kind::kRemote,
                        "server error: " + j.value("message", "(no message)"));
  }
  if (type != "proba") {
    throw ProtocolError(ProtocolError::Kind::kMalformed,
                        "unexpected response type `" + type + "`");
  }
  const std::string id = j.contains("id") && j.at("id").is_string()
                             ? j.at("id").get<std::string>()
                             : "";
  if (id != request_id) {
    throw ProtocolError(ProtocolError::Kind::kIdMismatch,
                        "response id `" + id + "` does not match request id `" +
                            request_id + "`");
  }
  if (!j.contains("probs") || !j.at("probs").is_array() ||
      static_cast<int>(j.at("probs").size()) != classes) {
    throw ProtocolError(ProtocolError::Kind::kMalformed,
                        "probs must be an array of " + std::to_string(classes) +
                            " numbers");
  }
  std::vector<double> probs;
  probs.reserve(static_cast<std::size_t>(classes));
  double sum = 0.0;
  for (const auto& v : j.at("probs")) {
    if (!v.is_number()) {
      throw ProtocolError(ProtocolError::Kind::kMalformed,
                          "probs must be an array of numbers");
    }
    probs.push_back(v.get<double>());
    sum += probs.back();
  }
  constexpr double kTol = 1e-6;
  for (double v : probs) {
    if (v < -kTol || v > 1.0 + kTol) {
      throw ProtocolError(ProtocolError::Kind::kNonSimplex,
                          "probability " + std::to_string(v) +
                              " outside [0,1]");
    }
  }
  if (std::abs(sum - 1.0) > kTol) {
    throw ProtocolError(ProtocolError::Kind::kNonSimplex,
                        "probabilities sum to " + std::to_string(sum) +
                            ", not 1");
  }
  for (double& v : probs) v = std::max(v, 0.0);
  return probs;
}

}  // namespace detail

// Proxies predict_proba over the wire. Token ids are detokenized through the
// vocabulary before transmission (the protocol carries token strings).
class ExternalPredictor : public Predictor {
 public:
  ExternalPredictor(const std::string& endpoint, const Vocabulary& vocab)
      : endpoint_(endpoint),
        vocab_(&vocab),
        channel_(detail::open_endpoint(endpoint)) {
    const auto hello = detail::read_hello(channel_);
    classes_ = hello.classes;
    capabilities_ = hello.capabilities;
  }

  int num_classes() const override { return classes_; }
  const std::vector<std::string>& capabilities() const { return capabilities_; }
  const std::string& endpoint() const { return endpoint_; }

  bool has_gradient() const override {
    return std::find(capabilities_.begin(), capabilities_.end(), "gradient") !=
           capabilities_.end();
  }
  bool has_attention() const override {
    return std::find(capabilities_.begin(), capabilities_.end(), "attention") !=
           capabilities_.end();
  }

  std::vector<double> predict_proba(std::span<const int> ids) const override {
    if (ids.empty()) {
      throw std::invalid_argument("predict_proba: empty id sequence");
    }
    std::vector<std::string> tokens;
    tokens.reserve(ids.size());
    for (int id : ids) tokens.push_back(vocab_->token(id));
    const std::string request_id = "req-" + std::to_string(++next_id_);
    channel_.write_line(detail::make_predict_request(request_id, tokens));
    const auto line = channel_.read_line();
    if (!line) {
      throw ProtocolError(ProtocolError::Kind::kConnect,
                          "endpoint closed mid-conversation");
    }
    return detail::parse_proba_response(*line, request_id, classes_);
  }

 private:
  std::string endpoint_;
  const Vocabulary* vocab_;
  mutable detail::LineChannel channel_;
  int classes_ = 0;
  std::vector<std::string> capabilities_;
  mutable std::uint64_t next_id_ = 0;
};

struct ServeCheckResult {
  int classes = 0;
  std::vector<std::string> capabilities;
  std::vector<double> probe_probs;
};

// Validates an endpoint end to end: handshake, one probe request, full
// response validation. Throws ProtocolError on any violation.
inline ServeCheckResult serve_check(const std::string& endpoint) {
  auto channel = detail::open_endpoint(endpoint);
  const auto hello = detail::read_hello(channel);
  const std::string request_id = "serve-check-1";
  channel.write_line(detail::make_predict_request(
      request_id, {"the", "movie", "was", "good"}));
  const auto line = channel.read_line();
  if (!line) {
    throw ProtocolError(ProtocolError::Kind::kConnect,
                        "endpoint closed before answering the probe");
  }
  ServeCheckResult result;
  result.classes = hello.classes;
  result.capabilities = hello.capabilities;
  result.probe_probs =
      detail::parse_proba_response(*line, request_id, hello.classes);
  return result;
}

}  // namespace fewlens
